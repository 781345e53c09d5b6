//! Feature labelling (Interpreter) and label validation (Predictor).
//!
//! A feature is shown to the Interpreter through its five highest-activating
//! abstracts and five random non-activating ones; the Interpreter answers with
//! a `FINAL: <label>` line. The Predictor then sees the label and one held-out
//! abstract per request and answers `PREDICTION: <confidence in [-1, 1]>`.
//! Confidences are scored against the true activation (+1 / −1) by Pearson
//! correlation and by F1 with "confidence > 0" as the positive class.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::DocumentRecord;
use crate::{Error, Result};

pub const INTERPRETER_TEMPLATE: &str = include_str!("prompts/interpreter.txt");
pub const PREDICTOR_TEMPLATE: &str = include_str!("prompts/predictor.txt");
pub const SUPERFEATURE_TEMPLATE: &str = include_str!("prompts/superfeature.txt");

const LABEL_RETRY_NOTE: &str =
    "\n\nYour previous answer did not contain the required final line. Finish your answer with a single line of the form FINAL: <explanation>.\n";
const PREDICTION_RETRY_NOTE: &str =
    "\n\nYour previous answer did not contain the required final line. Finish your answer with a single line of the form PREDICTION: <number between -1 and 1>.\n";

/// Which prompt a request belongs to; used for routing and scripted replies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Role {
    Interpreter,
    Predictor,
    Superfeature,
    Judge,
    Rewriter,
    /// Predictor requests that score a family's superfeature label.
    FamilyPredictor,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Interpreter => "interpreter",
            Role::Predictor => "predictor",
            Role::Superfeature => "superfeature",
            Role::Judge => "judge",
            Role::Rewriter => "rewriter",
            Role::FamilyPredictor => "family_predictor",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest<'a> {
    pub role: Role,
    /// Feature (or family) the request is about, when there is one.
    pub subject_id: Option<usize>,
    pub prompt: &'a str,
    pub temperature: f64,
}

/// A text-completion backend: one user prompt in, one reply out.
pub trait CompletionClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String>;
}

impl<F> CompletionClient for F
where
    F: Fn(&CompletionRequest<'_>) -> Result<String>,
{
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        self(request)
    }
}

/// Substitutes `{name}` placeholders in one pass, so substituted text is never
/// rescanned. Unknown placeholders are left as they are.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        match tail.find('}') {
            Some(close) => {
                let name = &tail[..close];
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &tail[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExampleDoc {
    pub row: usize,
    pub doc_id: String,
    pub text: String,
    pub activation: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InterpretationInput {
    pub feature_id: usize,
    /// Highest activations first.
    pub max_activating: Vec<ExampleDoc>,
    pub zero_activating: Vec<ExampleDoc>,
}

/// Held-out documents the Predictor is asked about.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PredictorSet {
    pub positives: Vec<ExampleDoc>,
    pub negatives: Vec<ExampleDoc>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExampleCounts {
    pub interpreter_max: usize,
    pub interpreter_zero: usize,
    pub predictor_positive: usize,
    pub predictor_negative: usize,
}

impl Default for ExampleCounts {
    fn default() -> Self {
        Self { interpreter_max: 5, interpreter_zero: 5, predictor_positive: 3, predictor_negative: 3 }
    }
}

/// Per-feature RNG derived from a run seed.
pub fn feature_rng(seed: u64, feature_id: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (feature_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn example(docs: &[DocumentRecord], row: usize, activation: f64) -> ExampleDoc {
    let doc = &docs[row];
    ExampleDoc { row, doc_id: doc.doc_id.clone(), text: doc.abstract_text.clone(), activation }
}

/// Draws `count` distinct rows outside `exclude` uniformly at random.
fn sample_excluding(rng: &mut ChaCha8Rng, total: usize, exclude: &BTreeSet<usize>, count: usize) -> Option<Vec<usize>> {
    let available = total - exclude.len();
    if available < count {
        return None;
    }
    if available * 2 < total {
        let pool: Vec<usize> = (0..total).filter(|r| !exclude.contains(r)).collect();
        let mut picked: Vec<usize> = pool.choose_multiple(rng, count).copied().collect();
        picked.sort_unstable();
        return Some(picked);
    }
    let mut picked = BTreeSet::new();
    while picked.len() < count {
        let r = rng.random_range(0..total);
        if !exclude.contains(&r) {
            picked.insert(r);
        }
    }
    Some(picked.into_iter().collect())
}

/// Picks Interpreter and Predictor documents for one feature.
///
/// `column` lists (row, activation) for every document on which the feature
/// fires. The Interpreter gets the top activations and random inactive rows;
/// the Predictor gets random active rows outside the Interpreter's top set and
/// random inactive rows not shown to the Interpreter.
pub fn select_examples(
    feature_id: usize,
    column: &[(usize, f64)],
    docs: &[DocumentRecord],
    counts: ExampleCounts,
    seed: u64,
) -> Result<(InterpretationInput, PredictorSet)> {
    let needed = counts.interpreter_max + counts.predictor_positive;
    if column.len() < needed {
        return Err(Error::TooSparse { feature: feature_id, active: column.len() });
    }
    let mut rng = feature_rng(seed, feature_id);
    let mut ranked: Vec<(usize, f64)> = column.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let max_activating: Vec<ExampleDoc> =
        ranked[..counts.interpreter_max].iter().map(|&(r, v)| example(docs, r, v)).collect();
    let rest = &ranked[counts.interpreter_max..];
    let mut positives: Vec<(usize, f64)> = rest.choose_multiple(&mut rng, counts.predictor_positive).copied().collect();
    positives.sort_by_key(|p| p.0);

    let mut exclude: BTreeSet<usize> = column.iter().map(|c| c.0).collect();
    let inactive = docs.len() - exclude.len();
    let zero_total = counts.interpreter_zero + counts.predictor_negative;
    let zero_rows = sample_excluding(&mut rng, docs.len(), &exclude, counts.interpreter_zero)
        .ok_or(Error::TooDense { feature: feature_id, inactive })?;
    exclude.extend(zero_rows.iter().copied());
    let neg_rows = sample_excluding(&mut rng, docs.len(), &exclude, counts.predictor_negative)
        .ok_or(Error::TooDense { feature: feature_id, inactive })?;
    debug_assert!(zero_total <= inactive);

    Ok((
        InterpretationInput {
            feature_id,
            max_activating,
            zero_activating: zero_rows.iter().map(|&r| example(docs, r, 0.0)).collect(),
        },
        PredictorSet {
            positives: positives.iter().map(|&(r, v)| example(docs, r, v)).collect(),
            negatives: neg_rows.iter().map(|&r| example(docs, r, 0.0)).collect(),
        },
    ))
}

fn format_max_examples(examples: &[ExampleDoc]) -> String {
    let mut out = String::new();
    for (i, ex) in examples.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!("Example {} (activation {:.4}):\n{}", i + 1, ex.activation, ex.text));
    }
    out
}

fn format_zero_examples(examples: &[ExampleDoc]) -> String {
    let mut out = String::new();
    for (i, ex) in examples.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!("Example {}:\n{}", i + 1, ex.text));
    }
    out
}

pub fn interpreter_prompt(input: &InterpretationInput, subject: &str) -> String {
    let max = format_max_examples(&input.max_activating);
    let zero = format_zero_examples(&input.zero_activating);
    render(
        INTERPRETER_TEMPLATE,
        &[("type", subject), ("subject", subject), ("max_examples", &max), ("zero_examples", &zero)],
    )
}

pub fn predictor_prompt(description: &str, abstract_text: &str, subject: &str) -> String {
    render(PREDICTOR_TEMPLATE, &[("subject", subject), ("description", description), ("abstract", abstract_text)])
}

/// Text after the last line starting with `FINAL:`, cut to at most 8 words.
pub fn parse_final_line(reply: &str) -> Option<String> {
    let line = reply
        .lines()
        .map(|l| l.trim().trim_start_matches(['*', '#', '>', ' '])).rfind(|l| l.starts_with("FINAL:"))?;
    let label = line["FINAL:".len()..].trim().trim_matches(|c| c == '*' || c == '"' || c == '`').trim();
    let words: Vec<&str> = label.split_whitespace().take(8).collect();
    if words.is_empty() {
        None
    } else {
        Some(words.join(" "))
    }
}

/// Number after the last `PREDICTION:` marker, clamped to [-1, 1].
pub fn parse_prediction(reply: &str) -> Option<f64> {
    let at = reply.rfind("PREDICTION:")?;
    let tail = reply[at + "PREDICTION:".len()..].trim_start();
    let tail = tail.trim_start_matches(['(', '*', '[', ' ']);
    let end = tail
        .char_indices()
        .find(|&(_, c)| !(c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E')))
        .map_or(tail.len(), |(i, _)| i);
    let value: f64 = tail[..end].trim_end_matches('.').parse().ok()?;
    value.is_finite().then(|| value.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureLabel {
    pub feature_id: usize,
    pub label: String,
    pub interpreter_transcript: String,
}

fn request<'a>(role: Role, id: usize, prompt: &'a str) -> CompletionRequest<'a> {
    CompletionRequest { role, subject_id: Some(id), prompt, temperature: 0.0 }
}

/// Asks for a `FINAL:` label, retrying once with a reminder on a parse failure.
pub fn complete_label<C: CompletionClient + ?Sized>(
    client: &C,
    role: Role,
    id: usize,
    prompt: &str,
) -> Result<(String, String)> {
    let reply = client.complete(&request(role, id, prompt))?;
    if let Some(label) = parse_final_line(&reply) {
        return Ok((label, reply));
    }
    let retry = format!("{prompt}{LABEL_RETRY_NOTE}");
    let reply = client.complete(&request(role, id, &retry))?;
    parse_final_line(&reply).map(|l| (l, reply)).ok_or(Error::LabelParse { feature: id })
}

pub fn interpret_feature<C: CompletionClient + ?Sized>(
    input: &InterpretationInput,
    client: &C,
    subject: &str,
) -> Result<FeatureLabel> {
    let prompt = interpreter_prompt(input, subject);
    let (label, transcript) = complete_label(client, Role::Interpreter, input.feature_id, &prompt)?;
    Ok(FeatureLabel { feature_id: input.feature_id, label, interpreter_transcript: transcript })
}

/// One Predictor request for one abstract.
pub fn predict_activation<C: CompletionClient + ?Sized>(
    label: &FeatureLabel,
    abstract_text: &str,
    client: &C,
    subject: &str,
) -> Result<f64> {
    predict_as(Role::Predictor, label, abstract_text, client, subject)
}

fn predict_as<C: CompletionClient + ?Sized>(
    role: Role,
    label: &FeatureLabel,
    abstract_text: &str,
    client: &C,
    subject: &str,
) -> Result<f64> {
    let prompt = predictor_prompt(&label.label, abstract_text, subject);
    let id = label.feature_id;
    let reply = client.complete(&request(role, id, &prompt))?;
    if let Some(v) = parse_prediction(&reply) {
        return Ok(v);
    }
    let retry = format!("{prompt}{PREDICTION_RETRY_NOTE}");
    let reply = client.complete(&request(role, id, &retry))?;
    parse_prediction(&reply).ok_or(Error::PredictionParse { feature: id })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prediction {
    pub doc_id: String,
    pub confidence: f64,
    /// +1 if the feature fires on the document, −1 otherwise.
    pub ground_truth: i8,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InterpScore {
    pub feature_id: usize,
    pub pearson: f64,
    pub f1: f64,
    pub predictions: Vec<Prediction>,
    /// Pearson was undefined (a constant series) and reported as 0.
    pub pearson_degenerate: bool,
    /// Only one ground-truth class was present; F1 reported as 0.
    pub f1_undefined: bool,
}

/// Sample Pearson correlation; `None` when either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// F1 of "confidence > 0" against positive ground truth.
pub fn f1_score(predictions: &[(f64, i8)]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for &(c, t) in predictions {
        match (c > 0.0, t > 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn score_feature(feature_id: usize, predictions: Vec<Prediction>) -> InterpScore {
    let conf: Vec<f64> = predictions.iter().map(|p| p.confidence).collect();
    let truth: Vec<f64> = predictions.iter().map(|p| p.ground_truth as f64).collect();
    let has_pos = predictions.iter().any(|p| p.ground_truth > 0);
    let has_neg = predictions.iter().any(|p| p.ground_truth < 0);
    let f1_undefined = predictions.len() < 2 || !(has_pos && has_neg);
    let pairs: Vec<(f64, i8)> = predictions.iter().map(|p| (p.confidence, p.ground_truth)).collect();
    let f1 = if f1_undefined { 0.0 } else { f1_score(&pairs) };
    let r = pearson(&conf, &truth);
    InterpScore { feature_id, pearson: r.unwrap_or(0.0), f1, predictions, pearson_degenerate: r.is_none(), f1_undefined }
}

/// Runs the Predictor over a held-out set (one request per abstract) and scores it.
pub fn score_label<C: CompletionClient + ?Sized>(
    label: &FeatureLabel,
    held_out: &PredictorSet,
    client: &C,
    subject: &str,
    seed: u64,
) -> Result<InterpScore> {
    score_label_as(Role::Predictor, label, held_out, client, subject, seed)
}

pub(crate) fn score_label_as<C: CompletionClient + ?Sized>(
    role: Role,
    label: &FeatureLabel,
    held_out: &PredictorSet,
    client: &C,
    subject: &str,
    seed: u64,
) -> Result<InterpScore> {
    let mut queue: Vec<(&ExampleDoc, i8)> =
        held_out.positives.iter().map(|d| (d, 1)).chain(held_out.negatives.iter().map(|d| (d, -1))).collect();
    let mut rng = feature_rng(seed ^ 0x5EED, label.feature_id);
    queue.shuffle(&mut rng);
    let mut predictions = Vec::with_capacity(queue.len());
    for (doc, truth) in queue {
        let confidence = predict_as(role, label, &doc.text, client, subject)?;
        predictions.push(Prediction { doc_id: doc.doc_id.clone(), confidence, ground_truth: truth });
    }
    Ok(score_feature(label.feature_id, predictions))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabelledFeature {
    pub label: FeatureLabel,
    pub score: InterpScore,
}

#[derive(Debug, Clone)]
pub struct LabelSettings {
    pub subject: String,
    pub counts: ExampleCounts,
    pub seed: u64,
}

impl LabelSettings {
    pub fn new(subject: &str, seed: u64) -> Self {
        Self { subject: subject.to_string(), counts: ExampleCounts::default(), seed }
    }
}

/// Select, interpret, predict and score one feature.
pub fn label_feature<C: CompletionClient + ?Sized>(
    feature_id: usize,
    column: &[(usize, f64)],
    docs: &[DocumentRecord],
    client: &C,
    settings: &LabelSettings,
) -> Result<LabelledFeature> {
    let (input, held_out) = select_examples(feature_id, column, docs, settings.counts, settings.seed)?;
    let label = interpret_feature(&input, client, &settings.subject)?;
    let score = score_label(&label, &held_out, client, &settings.subject, settings.seed)?;
    Ok(LabelledFeature { label, score })
}

/// Transposes per-document encodings into per-feature (row, value) columns.
pub fn activation_columns(acts: &[crate::SparseActivation], n: usize) -> Vec<Vec<(usize, f64)>> {
    let mut cols = alloc::vec![Vec::new(); n];
    for (row, h) in acts.iter().enumerate() {
        for (i, v) in h.iter() {
            cols[i].push((row, v));
        }
    }
    cols
}
