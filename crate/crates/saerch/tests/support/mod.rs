#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use saerch::formats::{self, CorpusPaths};
use saerch_core::{DocumentRecord, EmbeddingCorpus};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

pub struct Planted {
    /// Unit atom directions in raw space.
    pub atoms: Vec<Vec<f64>>,
    pub corpus: EmbeddingCorpus,
}

/// Rows are sums of `k` distinct atoms with coefficients in [0.5, 1.5).
///
/// Each occurrence of an atom is rotated by an angle drawn from
/// [−arc, arc] in a fixed plane spanned by the atom and a unit vector
/// orthogonal to it, so an atom is a short arc of directions rather than a
/// single one. With `arc = 0` the dictionary is exact.
pub fn planted(d: usize, n: usize, k: usize, rows: usize, arc: f64, seed: u64) -> Planted {
    let mut r = rng(seed);
    let atoms: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut r, d)).collect();
    let planes: Vec<Vec<f64>> = atoms
        .iter()
        .map(|a| {
            let mut v = unit(&mut r, d);
            let p: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(a).for_each(|(x, y)| *x -= p * y);
            let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= s);
            v
        })
        .collect();
    let mut data = Vec::with_capacity(rows * d);
    let mut x = vec![0.0; d];
    for _ in 0..rows {
        x.iter_mut().for_each(|v| *v = 0.0);
        for a in rand::seq::index::sample(&mut r, n, k) {
            let c: f64 = r.random_range(0.5..1.5);
            let theta: f64 = r.random_range(-arc..=arc);
            for ((xi, u), v) in x.iter_mut().zip(&atoms[a]).zip(&planes[a]) {
                *xi += c * (theta.cos() * u + theta.sin() * v);
            }
        }
        data.extend(x.iter().map(|&v| v as f32));
    }
    Planted { atoms, corpus: EmbeddingCorpus::from_rows(d, data).unwrap() }
}

pub const TOPICS: [&str; 8] = ["quasar", "exoplanet", "supernova", "pulsar", "nebula", "cluster", "lensing", "magnetar"];
pub const TOPIC_DIM: usize = 16;

/// Documents about two of eight topics each; the embedding is the sum of the
/// two topic directions plus a little noise.
pub struct TopicCorpus {
    pub topics: Vec<Vec<f64>>,
    pub corpus: EmbeddingCorpus,
    /// Topic pair of each document.
    pub pairs: Vec<(usize, usize)>,
}

pub fn topic_corpus(rows: usize, seed: u64) -> TopicCorpus {
    let mut r = rng(seed);
    let topics: Vec<Vec<f64>> = (0..TOPICS.len()).map(|_| unit(&mut r, TOPIC_DIM)).collect();
    let mut data = Vec::with_capacity(rows * TOPIC_DIM);
    let mut docs = Vec::with_capacity(rows);
    let mut pairs = Vec::with_capacity(rows);
    for i in 0..rows {
        let a = r.random_range(0..TOPICS.len());
        let b = (a + r.random_range(1..TOPICS.len())) % TOPICS.len();
        for j in 0..TOPIC_DIM {
            let noise: f64 = StandardNormal.sample(&mut r);
            data.push((topics[a][j] + 0.7 * topics[b][j] + 0.05 * noise) as f32);
        }
        docs.push(DocumentRecord {
            doc_id: format!("{i:04}.0001"),
            title: format!("On the {} and the {}", TOPICS[a], TOPICS[b]),
            abstract_text: format!("Paper {i}. We study the {} with attention to the {}.", TOPICS[a], TOPICS[b]),
            year: Some(2000 + (i % 25) as i32),
            citation_count: Some((i * 7 % 50) as u64),
            ..Default::default()
        });
        pairs.push((a, b));
    }
    TopicCorpus { topics, corpus: EmbeddingCorpus::new(TOPIC_DIM, data, docs).unwrap(), pairs }
}

/// Raw-space vectors for the topic names, used by the static embedding client.
pub fn topic_vectors(tc: &TopicCorpus) -> std::collections::HashMap<String, Vec<f64>> {
    TOPICS.iter().zip(&tc.topics).map(|(t, v)| (t.to_string(), v.clone())).collect()
}

/// A run directory with raw input files, a mock completion script, static
/// query vectors and a config that trains a tiny model quickly.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
    pub embeddings: PathBuf,
    pub metadata: PathBuf,
    pub out: PathBuf,
    pub topics: TopicCorpus,
}

pub fn fixture(extra_config: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let topics = topic_corpus(400, 5);
    let inputs = CorpusPaths { embeddings: root.join("in.bin"), metadata: root.join("in.jsonl") };
    formats::write_corpus(&inputs, &topics.corpus).unwrap();

    let script = serde_json::json!({
        "rules": [
            {"role": "interpreter", "replies": ["Looking at the examples.\nFINAL: compact objects"], "repeat": true},
            {"role": "predictor", "contains": "pulsar", "replies": ["PREDICTION: 0.9"], "repeat": true},
            {"role": "predictor", "replies": ["PREDICTION: -0.8"], "repeat": true},
            {"role": "superfeature", "replies": ["FINAL: stellar remnants"], "repeat": true},
            {"role": "family_predictor", "replies": ["PREDICTION: 0.5"], "repeat": true},
            {"role": "judge", "replies": ["ANSWER: A"], "repeat": true},
            {"role": "rewriter", "replies": ["QUERY: pulsar"], "repeat": true}
        ]
    });
    formats::write_json(&root.join("script.json"), &script).unwrap();
    formats::write_json(&root.join("vectors.json"), &topic_vectors(&topics)).unwrap();
    std::fs::write(root.join("queries.txt"), "quasar\npulsar\n\nnebula\n").unwrap();

    let out = root.join("run");
    let config = root.join("config.toml");
    std::fs::write(
        &config,
        format!(
            r#"seed = 3
out = "{out}"

[corpus]
embeddings = "{emb}"
metadata = "{meta}"
val_fraction = 0.1

[train]
k = 2
n = 16
epochs = 8
batch_size = 32
learning_rate = 0.003

[completion]
mock = "{script}"
max_concurrency = 3

[embedding]
mock = "{vectors}"

[label]
interpreter_max = 3
interpreter_zero = 3
predictor_positive = 2
predictor_negative = 2
{extra_config}
"#,
            out = out.display(),
            emb = inputs.embeddings.display(),
            meta = inputs.metadata.display(),
            script = root.join("script.json").display(),
            vectors = root.join("vectors.json").display(),
        ),
    )
    .unwrap();
    Fixture { config, embeddings: inputs.embeddings, metadata: inputs.metadata, out, topics, dir }
}

impl Fixture {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    /// Runs the CLI in-process with `--config` prepended.
    pub fn run(&self, args: &[&str]) -> i32 {
        let mut argv = vec!["saerch".to_string(), "--config".into(), self.config.display().to_string()];
        argv.extend(args.iter().map(|s| s.to_string()));
        saerch::cli::dispatch(argv)
    }

    pub fn summary(&self, command: &str) -> serde_json::Value {
        formats::read_json(&self.out.join(format!("{command}.summary.json"))).unwrap()
    }
}
