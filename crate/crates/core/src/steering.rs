//! Feature-level interventions on query embeddings and their evaluation.
//!
//! A direct intervention encodes the query, overwrites chosen activations and
//! decodes; since the decoder is affine this is the same as adding
//! `(λ − h_i)·w_i` to the reconstruction. The iterative variant instead
//! searches for latents whose re-encoding matches the edited target.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::autointerp::{feature_rng, render, CompletionClient, CompletionRequest, Role};
use crate::catalog::FeatureCatalog;
use crate::linalg::cosine;
use crate::model::SaeModel;
use crate::optim::{cosine_annealed, AdamParams, AdamState};
use crate::search::{SearchHit, SearchIndex};
use crate::{Error, Result};

pub const JUDGE_TEMPLATE: &str = include_str!("prompts/judge.txt");
pub const REWRITER_TEMPLATE: &str = include_str!("prompts/rewriter.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InterventionMode {
    #[default]
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterativeParams {
    pub steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for IterativeParams {
    fn default() -> Self {
        Self { steps: 10, learning_rate: 0.1, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Intervention {
    /// Feature id → target activation.
    pub edits: BTreeMap<usize, f64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub mode: InterventionMode,
    /// The edits came from a family slider (informational).
    #[cfg_attr(feature = "serde", serde(default))]
    pub family_mode: bool,
    #[cfg_attr(feature = "serde", serde(default))]
    pub iterative: IterativeParams,
}

impl Intervention {
    pub fn direct(edits: BTreeMap<usize, f64>) -> Self {
        Self { edits, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SteeredEmbedding {
    /// Plain reconstruction `decode(encode(x))`.
    pub original: Vec<f64>,
    pub modified: Vec<f64>,
    /// cos(original, modified).
    pub fidelity: f64,
    /// Objective per step for iterative interventions.
    #[cfg_attr(feature = "serde", serde(default))]
    pub trace: Vec<f64>,
}

fn check_edits(model: &SaeModel, edits: &BTreeMap<usize, f64>) -> Result<()> {
    for (&i, w) in edits {
        if i >= model.n() {
            return Err(Error::UnknownFeature(i));
        }
        if !w.is_finite() {
            return Err(Error::Config(format!("edit weight for feature {i} is not finite")));
        }
    }
    Ok(())
}

pub fn apply_intervention(model: &SaeModel, x: &[f64], iv: &Intervention) -> Result<SteeredEmbedding> {
    if x.len() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, actual: x.len() });
    }
    check_edits(model, &iv.edits)?;
    let h = model.encode(x);
    let original = model.decode(&h);
    let (modified, trace) = match iv.mode {
        InterventionMode::Direct => {
            let mut modified = original.clone();
            for (&i, &lambda) in &iv.edits {
                let delta = lambda - h.get(i);
                if delta != 0.0 {
                    crate::linalg::axpy(delta, model.decoder_column(i), &mut modified);
                }
            }
            (modified, Vec::new())
        }
        InterventionMode::Iterative => {
            let mut target = h.to_dense(model.n());
            for (&i, &lambda) in &iv.edits {
                target[i] = lambda;
            }
            let (latents, trace) = iterative_optimize(model, x, &target, &iv.iterative)?;
            (model.decode_dense(&latents), trace)
        }
    };
    let fidelity = cosine(&original, &modified);
    Ok(SteeredEmbedding { original, modified, fidelity, trace })
}

/// `‖encode(decode(h)) − t‖²`.
pub fn reencode_objective(model: &SaeModel, h: &[f64], target: &[f64]) -> f64 {
    let a = model.encode_dense(&model.decode_dense(h));
    a.iter().zip(target).map(|(x, t)| (x - t) * (x - t)).sum()
}

/// Minimizes `‖encode(decode(h)) − t‖²` over dense latents `h`, starting from
/// `encode(x)`, with AdamW and a cosine-annealed step size.
///
/// The ReLU and top-k inside the encoder are passed straight through in the
/// backward pass, so latents outside the current support still receive
/// gradient. Returns the final latents and the objective before every step
/// plus after the last (`steps + 1` values).
pub fn iterative_optimize(
    model: &SaeModel,
    x: &[f64],
    target: &[f64],
    params: &IterativeParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = model.n();
    let d = model.dim;
    if target.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: target.len() });
    }
    let mut h = model.encode(x).to_dense(n);
    let adam = AdamParams { weight_decay: params.weight_decay, ..Default::default() };
    let mut state = AdamState::new(n);
    let mut trace = Vec::with_capacity(params.steps + 1);
    let mut grad = vec![0.0; n];
    let mut delta = vec![0.0; n];
    let mut back = vec![0.0; d];
    for step in 0..=params.steps {
        let y = model.decode_dense(&h);
        let a = model.encode_dense(&y);
        let objective: f64 = a.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
        if !objective.is_finite() {
            return Err(Error::OptimizeDiverged { step });
        }
        trace.push(objective);
        if step == params.steps {
            break;
        }
        // dJ/dy = W_eᵀ · 2(a − t); dJ/dh = W_dᵀ · dJ/dy
        back.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let g = 2.0 * (a[i] - target[i]);
            if g != 0.0 {
                crate::linalg::axpy(g, model.encoder_row(i), &mut back);
            }
        }
        for (j, g) in grad.iter_mut().enumerate() {
            *g = crate::linalg::dot(model.decoder_column(j), &back);
        }
        let lr = cosine_annealed(params.learning_rate, step, params.steps);
        state.delta(&adam, lr, step as u64 + 1, &h, &grad, &mut delta);
        for (v, dv) in h.iter_mut().zip(&delta) {
            *v += dv;
        }
    }
    Ok((h, trace))
}

/// Turns text into a normalized query embedding (used by the rewriting baseline).
pub trait Embedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

impl<F: Fn(&str) -> Result<Vec<f64>>> Embedder for F {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalQuery {
    pub text: String,
    /// Normalized embedding of `text`.
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub trials: usize,
    pub retrieve: usize,
    pub options: usize,
    pub min_f1: f64,
    pub min_pearson: f64,
    /// j must satisfy cos(w_i, w_j) below this.
    pub max_pair_cosine: f64,
    pub lambda_down: f64,
    pub lambda_up_max: f64,
    pub bin_width: f64,
    /// Abstracts shown to the judge are cut to this many characters.
    pub snippet_chars: usize,
    pub subject: String,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            trials: 50,
            retrieve: 10,
            options: 5,
            min_f1: 0.9,
            min_pearson: 0.9,
            max_pair_cosine: 0.3,
            lambda_down: 0.0,
            lambda_up_max: 5.0,
            bin_width: 0.05,
            snippet_chars: 300,
            subject: "astronomy".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    fn verb(self) -> &'static str {
        match self {
            Direction::Up => "emphasised",
            Direction::Down => "suppressed",
        }
    }
}

/// What a trial will do, fixed before any client is called.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPlan {
    pub trial: usize,
    pub query: usize,
    pub down_feature: usize,
    pub up_feature: usize,
    pub lambda_up: f64,
    pub steered: SteeredEmbedding,
    /// Feature ids offered for the up question, in option order.
    pub up_options: Vec<usize>,
    pub down_options: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalRecord {
    pub trial: usize,
    pub query: String,
    pub direction: Direction,
    pub down_feature: usize,
    pub up_feature: usize,
    pub lambda_up: f64,
    pub original: Vec<String>,
    pub steered: Vec<String>,
    pub rewritten_query: String,
    pub rewritten: Vec<String>,
    pub options: Vec<usize>,
    pub verdict: Option<usize>,
    pub baseline_verdict: Option<usize>,
    pub correct: bool,
    pub baseline_correct: bool,
    pub fidelity: f64,
    pub baseline_fidelity: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialFailure {
    pub trial: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FidelityBin {
    /// Lower edge of the bin.
    pub fidelity_bin: f64,
    pub sae_accuracy: Option<f64>,
    pub rewrite_accuracy: Option<f64>,
    pub sae_count: usize,
    pub rewrite_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub failures: Vec<TrialFailure>,
    pub bins: Vec<FidelityBin>,
    pub sae_accuracy: f64,
    pub rewrite_accuracy: f64,
}

const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";

fn option_block(catalog: &FeatureCatalog, options: &[usize]) -> String {
    let lines: Vec<String> = options
        .iter()
        .enumerate()
        .map(|(k, &id)| format!("{}. {}", LETTERS[k] as char, catalog.label(id).unwrap_or("(unlabelled)")))
        .collect();
    lines.join("\n")
}

fn truncate_chars(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((b, _)) => &text[..b],
        None => text,
    }
}

fn result_block(index: &SearchIndex, hits: &[SearchHit], snippet_chars: usize) -> String {
    let lines: Vec<String> = hits
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let doc = &index.docs()[h.row];
            format!("{}. {}: {}", k + 1, doc.title, truncate_chars(&doc.abstract_text, snippet_chars))
        })
        .collect();
    lines.join("\n")
}

pub fn judge_prompt(
    subject: &str,
    query: &str,
    original: &str,
    modified: &str,
    direction: Direction,
    options: &str,
) -> String {
    render(
        JUDGE_TEMPLATE,
        &[
            ("subject", subject),
            ("query", query),
            ("original", original),
            ("modified", modified),
            ("direction", direction.verb()),
            ("options", options),
        ],
    )
}

pub fn rewriter_prompt(subject: &str, query: &str, upweight: &str, downweight: &str) -> String {
    render(REWRITER_TEMPLATE, &[("subject", subject), ("query", query), ("upweight", upweight), ("downweight", downweight)])
}

/// Letter after the last `ANSWER:` marker, as an option index.
pub fn parse_answer(reply: &str, options: usize) -> Option<usize> {
    let pos = reply.rfind("ANSWER:")?;
    let c = reply[pos + 7..].trim_start().chars().next()?.to_ascii_uppercase();
    let idx = LETTERS.iter().position(|&l| l as char == c)?;
    (idx < options).then_some(idx)
}

/// Text after the last `QUERY:` marker, up to the end of that line.
pub fn parse_rewrite(reply: &str) -> Option<String> {
    let pos = reply.rfind("QUERY:")?;
    let line = reply[pos + 6..].lines().next()?.trim();
    (!line.is_empty()).then(|| line.to_string())
}

fn pick_options(
    rng: &mut impl Rng,
    answer: usize,
    pool: &[usize],
    count: usize,
) -> Result<Vec<usize>> {
    let distractors: Vec<usize> = pool.choose_multiple(rng, count - 1).copied().collect();
    if distractors.len() + 1 < count {
        return Err(Error::Config(format!("only {} distractors available", distractors.len())));
    }
    let mut options = distractors;
    options.push(answer);
    options.shuffle(rng);
    Ok(options)
}

/// Chooses the features, weights and multiple-choice options for one trial.
pub fn plan_trial(
    trial: usize,
    queries: &[EvalQuery],
    model: &SaeModel,
    catalog: &FeatureCatalog,
    settings: &EvalSettings,
) -> Result<TrialPlan> {
    let qi = trial % queries.len();
    let q = &queries[qi].embedding;
    let mut rng = feature_rng(settings.seed, trial);
    let mask = catalog.interpretable_mask(settings.min_f1, settings.min_pearson);
    let ok = |i: usize| mask.get(i).copied().unwrap_or(false);
    let h = model.encode(q);
    let support: BTreeSet<usize> = h.indices.iter().copied().collect();
    let downs: Vec<usize> = h.indices.iter().copied().filter(|&i| ok(i)).collect();
    let &down = downs.choose(&mut rng).ok_or_else(|| Error::Config("no interpretable feature in the query support".into()))?;
    let ups: Vec<usize> = (0..model.n())
        .filter(|&j| {
            ok(j)
                && !support.contains(&j)
                && cosine(model.decoder_column(down), model.decoder_column(j)) < settings.max_pair_cosine
        })
        .collect();
    let &up = ups.choose(&mut rng).ok_or_else(|| Error::Config("no eligible feature to up-weight".into()))?;
    let lambda_up = rng.random_range(0.0..=settings.lambda_up_max);
    let mut edits = BTreeMap::new();
    edits.insert(down, settings.lambda_down);
    edits.insert(up, lambda_up);
    let steered = apply_intervention(model, q, &Intervention::direct(edits))?;

    let steered_support = model.encode(&steered.modified);
    let mut excluded: BTreeSet<usize> = support.clone();
    excluded.extend(steered_support.indices.iter().copied());
    excluded.insert(down);
    excluded.insert(up);
    let pool: Vec<usize> = (0..model.n()).filter(|&i| ok(i) && !excluded.contains(&i)).collect();
    let up_options = pick_options(&mut rng, up, &pool, settings.options)?;
    let down_options = pick_options(&mut rng, down, &pool, settings.options)?;
    Ok(TrialPlan { trial, query: qi, down_feature: down, up_feature: up, lambda_up, steered, up_options, down_options })
}

fn ask_judge<C: CompletionClient + ?Sized>(judge: &C, trial: usize, prompt: &str, options: usize) -> Result<usize> {
    let request = CompletionRequest { role: Role::Judge, subject_id: Some(trial), prompt, temperature: 0.0 };
    let reply = judge.complete(&request)?;
    parse_answer(&reply, options).ok_or(Error::AnswerParse(reply))
}

fn titles(hits: &[SearchHit]) -> Vec<String> {
    hits.iter().map(|h| h.doc_id.clone()).collect()
}

#[allow(clippy::too_many_arguments)]
fn run_trial<J, R, E>(
    plan: &TrialPlan,
    queries: &[EvalQuery],
    index: &SearchIndex,
    judge: &J,
    rewriter: &R,
    embedder: &E,
    settings: &EvalSettings,
) -> Result<Vec<EvalRecord>>
where
    J: CompletionClient + ?Sized,
    R: CompletionClient + ?Sized,
    E: Embedder + ?Sized,
{
    let catalog = index.catalog();
    let query = &queries[plan.query];
    let original = index.rank(&query.embedding, settings.retrieve)?;
    let steered = index.rank(&plan.steered.modified, settings.retrieve)?;

    let up_label = catalog.label(plan.up_feature).unwrap_or_default();
    let down_label = catalog.label(plan.down_feature).unwrap_or_default();
    let prompt = rewriter_prompt(&settings.subject, &query.text, up_label, down_label);
    let request = CompletionRequest { role: Role::Rewriter, subject_id: Some(plan.trial), prompt: &prompt, temperature: 0.0 };
    let reply = rewriter.complete(&request)?;
    let rewritten_query = parse_rewrite(&reply).ok_or(Error::AnswerParse(reply))?;
    let rewritten_embedding = embedder.embed(&rewritten_query)?;
    let rewritten = index.rank(&rewritten_embedding, settings.retrieve)?;
    let baseline_fidelity = cosine(&query.embedding, &rewritten_embedding);

    let original_block = result_block(index, &original, settings.snippet_chars);
    let steered_block = result_block(index, &steered, settings.snippet_chars);
    let rewritten_block = result_block(index, &rewritten, settings.snippet_chars);

    let mut records = Vec::with_capacity(2);
    for direction in [Direction::Up, Direction::Down] {
        let (options, answer) = match direction {
            Direction::Up => (&plan.up_options, plan.up_feature),
            Direction::Down => (&plan.down_options, plan.down_feature),
        };
        let block = option_block(catalog, options);
        let p = judge_prompt(&settings.subject, &query.text, &original_block, &steered_block, direction, &block);
        let verdict = ask_judge(judge, plan.trial, &p, options.len())?;
        let p = judge_prompt(&settings.subject, &query.text, &original_block, &rewritten_block, direction, &block);
        let baseline_verdict = ask_judge(judge, plan.trial, &p, options.len())?;
        records.push(EvalRecord {
            trial: plan.trial,
            query: query.text.clone(),
            direction,
            down_feature: plan.down_feature,
            up_feature: plan.up_feature,
            lambda_up: plan.lambda_up,
            original: titles(&original),
            steered: titles(&steered),
            rewritten_query: rewritten_query.clone(),
            rewritten: titles(&rewritten),
            options: options.clone(),
            verdict: Some(options[verdict]),
            baseline_verdict: Some(options[baseline_verdict]),
            correct: options[verdict] == answer,
            baseline_correct: options[baseline_verdict] == answer,
            fidelity: plan.steered.fidelity,
            baseline_fidelity,
        });
    }
    Ok(records)
}

fn bin_of(fidelity: f64, width: f64) -> i64 {
    libm::floor(fidelity.clamp(-1.0, 1.0) / width + 1e-9) as i64
}

/// Accuracy per fidelity bin for both methods, bins ordered by fidelity.
pub fn fidelity_bins(records: &[EvalRecord], width: f64) -> Vec<FidelityBin> {
    let mut sae: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    let mut rewrite: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = sae.entry(bin_of(r.fidelity, width)).or_default();
        e.0 += r.correct as usize;
        e.1 += 1;
        let e = rewrite.entry(bin_of(r.baseline_fidelity, width)).or_default();
        e.0 += r.baseline_correct as usize;
        e.1 += 1;
    }
    let keys: BTreeSet<i64> = sae.keys().chain(rewrite.keys()).copied().collect();
    keys.into_iter()
        .map(|b| {
            let s = sae.get(&b).copied().unwrap_or_default();
            let w = rewrite.get(&b).copied().unwrap_or_default();
            FidelityBin {
                fidelity_bin: b as f64 * width,
                sae_accuracy: (s.1 > 0).then(|| s.0 as f64 / s.1 as f64),
                rewrite_accuracy: (w.1 > 0).then(|| w.0 as f64 / w.1 as f64),
                sae_count: s.1,
                rewrite_count: w.1,
            }
        })
        .collect()
}

/// Runs `settings.trials` steering trials against the rewriting baseline.
///
/// Trial `t` uses query `t mod len(queries)`. Each trial yields two records
/// (up- and down-weighted question). Trials whose planning or client calls
/// fail are listed in `failures` and contribute no records.
pub fn evaluate_interventions<J, R, E>(
    queries: &[EvalQuery],
    index: &SearchIndex,
    judge: &J,
    rewriter: &R,
    embedder: &E,
    settings: &EvalSettings,
) -> Result<EvalReport>
where
    J: CompletionClient + ?Sized,
    R: CompletionClient + ?Sized,
    E: Embedder + ?Sized,
{
    if queries.is_empty() {
        return Err(Error::Config("no evaluation queries".into()));
    }
    let mut report = EvalReport::default();
    for trial in 0..settings.trials {
        let outcome = plan_trial(trial, queries, index.model(), index.catalog(), settings)
            .and_then(|plan| run_trial(&plan, queries, index, judge, rewriter, embedder, settings));
        match outcome {
            Ok(records) => report.records.extend(records),
            Err(e) => report.failures.push(TrialFailure { trial, reason: e.to_string() }),
        }
    }
    report.bins = fidelity_bins(&report.records, settings.bin_width);
    let total = report.records.len().max(1) as f64;
    report.sae_accuracy = report.records.iter().filter(|r| r.correct).count() as f64 / total;
    report.rewrite_accuracy = report.records.iter().filter(|r| r.baseline_correct).count() as f64 / total;
    Ok(report)
}
