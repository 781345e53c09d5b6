mod support;

use std::collections::BTreeMap;

use saerch::labelling::{label_catalog, read_journal, JournalEntry, LabelRun};
use saerch::mock::{Script, ScriptRule, ScriptedClient};
use saerch_core::autointerp::{
    interpreter_prompt, predictor_prompt, CompletionClient, CompletionRequest, ExampleCounts, ExampleDoc,
    InterpretationInput, LabelSettings, Role,
};
use saerch_core::catalog::FeatureEntry;
use saerch_core::FeatureCatalog;
use support::TOPICS;

struct Setup {
    tc: support::TopicCorpus,
    columns: Vec<Vec<(usize, f64)>>,
}

/// Feature t fires (1.0 as the main topic, 0.7 as the second) on documents about topic t.
fn setup() -> Setup {
    let tc = support::topic_corpus(300, 4);
    let mut columns = vec![Vec::new(); TOPICS.len()];
    for (row, &(a, b)) in tc.pairs.iter().enumerate() {
        columns[a].push((row, 1.0 + (row % 7) as f64 * 0.01));
        columns[b].push((row, 0.7));
    }
    for c in &mut columns {
        c.sort_by_key(|e| e.0);
    }
    Setup { tc, columns }
}

fn catalog() -> FeatureCatalog {
    let features = (0..TOPICS.len())
        .map(|id| FeatureEntry {
            id,
            decoder_direction: vec![0.0; support::TOPIC_DIM],
            density: 0.25,
            mean_nonzero_activation: 0.85,
            label: None,
            pearson: None,
            f1: None,
        })
        .collect();
    FeatureCatalog { dim: support::TOPIC_DIM, features, skipped: Vec::new() }
}

fn run<'a>(s: &'a Setup, concurrency: usize) -> LabelRun<'a> {
    LabelRun {
        columns: &s.columns,
        docs: s.tc.corpus.docs(),
        settings: LabelSettings { subject: "astronomy".into(), counts: ExampleCounts::default(), seed: 11 },
        features: Vec::new(),
        max_concurrency: concurrency,
    }
}

fn rule(role: Role, feature_id: Option<usize>, contains: Option<&str>, reply: &str) -> ScriptRule {
    ScriptRule {
        role,
        feature_id,
        contains: contains.map(String::from),
        replies: vec![reply.to_string()],
        repeat: true,
    }
}

/// Predicts +1 exactly on abstracts that mention the feature's topic (or the reverse).
fn script(agree: bool) -> Script {
    let (hit, miss) = if agree { ("PREDICTION: 1", "PREDICTION: -1") } else { ("PREDICTION: -1", "PREDICTION: 1") };
    let mut rules = vec![rule(Role::Interpreter, None, None, "Reasoning.\nFINAL: a recurring object class")];
    for (t, name) in TOPICS.iter().enumerate() {
        rules.push(rule(Role::Predictor, Some(t), Some(&format!("the {name}")), hit));
        rules.push(rule(Role::Predictor, Some(t), None, miss));
    }
    Script { rules, fallback: None }
}

#[test]
fn perfect_and_anti_scripts() {
    let s = setup();
    for (agree, pearson, f1) in [(true, 1.0, 1.0), (false, -1.0, 0.0)] {
        let mut cat = catalog();
        label_catalog(&mut cat, &run(&s, 2), &ScriptedClient::new(script(agree)), None).unwrap();
        assert!(cat.skipped.is_empty());
        for f in &cat.features {
            assert_eq!(f.label.as_deref(), Some("a recurring object class"));
            assert!((f.pearson.unwrap() - pearson).abs() < 1e-12, "feature {} pearson {:?}", f.id, f.pearson);
            assert_eq!(f.f1, Some(f1));
        }
    }
}

#[test]
fn concurrency_does_not_change_results() {
    let s = setup();
    let mut serial = catalog();
    label_catalog(&mut serial, &run(&s, 1), &ScriptedClient::new(script(true)), None).unwrap();
    let mut parallel = catalog();
    label_catalog(&mut parallel, &run(&s, 5), &ScriptedClient::new(script(true)), None).unwrap();
    assert_eq!(serial, parallel);
}

fn interpreted(client: &ScriptedClient) -> Vec<usize> {
    let mut ids: Vec<usize> =
        client.requests().into_iter().filter(|r| r.0 == Role::Interpreter).filter_map(|r| r.1).collect();
    ids.sort_unstable();
    ids
}

#[test]
fn resumes_from_a_torn_journal() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("journal.jsonl");

    let mut full = catalog();
    label_catalog(&mut full, &run(&s, 3), &ScriptedClient::new(script(true)), Some(&journal)).unwrap();
    let text = std::fs::read_to_string(&journal).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), TOPICS.len());

    // keep three entries and half of a fourth, as if the process died mid-write
    let mut torn = lines[..3].join("\n");
    torn.push('\n');
    torn.push_str(&lines[3][..lines[3].len() / 2]);
    std::fs::write(&journal, torn).unwrap();
    let kept: Vec<usize> = read_journal(&journal).unwrap().into_keys().collect();
    assert_eq!(kept.len(), 3);

    let client = ScriptedClient::new(script(true));
    let mut resumed = catalog();
    label_catalog(&mut resumed, &run(&s, 3), &client, Some(&journal)).unwrap();
    let expected: Vec<usize> = (0..TOPICS.len()).filter(|id| !kept.contains(id)).collect();
    assert_eq!(interpreted(&client), expected);
    assert_eq!(resumed, full);
    assert_eq!(read_journal(&journal).unwrap().len(), TOPICS.len());

    // a finished journal means no requests at all
    let idle = ScriptedClient::new(script(true));
    label_catalog(&mut catalog(), &run(&s, 3), &idle, Some(&journal)).unwrap();
    assert!(idle.requests().is_empty());
}

/// Fails every request about feature 2.
struct Flaky(ScriptedClient);

impl CompletionClient for Flaky {
    fn complete(&self, request: &CompletionRequest<'_>) -> saerch_core::Result<String> {
        if request.subject_id == Some(2) {
            return Err(saerch_core::Error::Client("HTTP 503".into()));
        }
        self.0.complete(request)
    }
}

#[test]
fn client_failures_are_retried_next_run() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("journal.jsonl");
    let mut cat = catalog();
    label_catalog(&mut cat, &run(&s, 2), &Flaky(ScriptedClient::new(script(true))), Some(&journal)).unwrap();
    assert_eq!(cat.skipped.iter().map(|x| x.id).collect::<Vec<_>>(), vec![2]);
    assert!(!read_journal(&journal).unwrap().contains_key(&2));

    let client = ScriptedClient::new(script(true));
    label_catalog(&mut cat, &run(&s, 2), &client, Some(&journal)).unwrap();
    assert_eq!(interpreted(&client), vec![2]);
    assert!(cat.skipped.is_empty());
    assert!(cat.features.iter().all(|f| f.label.is_some()));
}

#[test]
fn unusable_features_are_journalled_as_skipped() {
    let mut s = setup();
    s.columns[5].truncate(3);
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("journal.jsonl");
    let mut cat = catalog();
    let mut r = run(&s, 2);
    r.features = vec![4, 5];
    label_catalog(&mut cat, &r, &ScriptedClient::new(script(true)), Some(&journal)).unwrap();
    let entries = read_journal(&journal).unwrap();
    assert!(matches!(entries.get(&5), Some(JournalEntry::Skipped { .. })));
    assert!(matches!(entries.get(&4), Some(JournalEntry::Labelled { .. })));
    assert_eq!(cat.skipped.len(), 1);
    assert!(cat.features[0].label.is_none());

    r.features = vec![99];
    assert!(label_catalog(&mut cat, &r, &ScriptedClient::new(script(true)), None).is_err());
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn doc(text: &str, activation: f64) -> ExampleDoc {
    ExampleDoc { row: 0, doc_id: "x".into(), text: text.into(), activation }
}

#[test]
fn interpreter_prompt_matches_golden() {
    let input = InterpretationInput {
        feature_id: 0,
        max_activating: vec![doc("Dust lanes in spiral galaxies.", 3.25), doc("The {subject} of dust.", 1.0)],
        zero_activating: vec![doc("A survey of exoplanet atmospheres.", 0.0)],
    };
    assert_eq!(interpreter_prompt(&input, "astronomy"), golden("interpreter.txt"));
}

#[test]
fn predictor_prompt_matches_golden() {
    assert_eq!(predictor_prompt("dust in galaxies", "We map {dust} lanes.", "astronomy"), golden("predictor.txt"));
}

#[test]
fn scripted_replies_are_logged_in_order() {
    let client = ScriptedClient::new(script(true));
    let req = CompletionRequest { role: Role::Predictor, subject_id: Some(0), prompt: "about the quasar", temperature: 0.0 };
    assert_eq!(client.complete(&req).unwrap(), "PREDICTION: 1");
    let logged: BTreeMap<_, _> = client.requests().into_iter().map(|r| (r.1, r.2)).collect();
    assert_eq!(logged[&Some(0)], "about the quasar");
}
