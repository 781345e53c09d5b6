//! Run configuration, read from one TOML or JSON file.
//!
//! Every section has defaults, so an empty file is valid. Relative paths are
//! resolved against the output directory unless noted otherwise.

use std::path::{Path, PathBuf};

use saerch_core::SaeConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Directory receiving every artifact of the run.
    pub out: PathBuf,
    pub corpus: CorpusSection,
    pub train: TrainSection,
    pub grid: Option<GridSection>,
    pub completion: CompletionSection,
    pub embedding: EmbeddingSection,
    pub label: LabelSection,
    pub families: FamilySection,
    #[serde(rename = "match")]
    pub matching: MatchSection,
    pub steer_eval: SteerEvalSection,
    pub serve: ServeSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            corpus: CorpusSection::default(),
            train: TrainSection::default(),
            grid: None,
            completion: CompletionSection::default(),
            embedding: EmbeddingSection::default(),
            label: LabelSection::default(),
            families: FamilySection::default(),
            matching: MatchSection::default(),
            steer_eval: SteerEvalSection::default(),
            serve: ServeSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Input matrix for `ingest` (relative to the working directory).
    pub embeddings: Option<PathBuf>,
    /// Input metadata JSON lines for `ingest` (relative to the working directory).
    pub metadata: Option<PathBuf>,
    pub val_fraction: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { embeddings: None, metadata: None, val_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub k: usize,
    pub n: usize,
    pub k_aux: Option<usize>,
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = SaeConfig::new(16, 3072);
        Self {
            k: c.k,
            n: c.n,
            k_aux: None,
            alpha: c.alpha,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            epochs: c.epochs,
            grad_clip: c.grad_clip,
        }
    }
}

impl TrainSection {
    pub fn sae_config(&self, k: usize, n: usize, seed: u64) -> SaeConfig {
        let mut c = SaeConfig::new(k, n);
        if let Some(k_aux) = self.k_aux {
            c.k_aux = k_aux;
        }
        c.alpha = self.alpha;
        c.learning_rate = self.learning_rate;
        c.batch_size = self.batch_size;
        c.epochs = self.epochs;
        c.grad_clip = self.grad_clip;
        c.seed = seed;
        c
    }
}

/// Scaling sweep: one model per (k, n) pair.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub k: Vec<usize>,
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionSection {
    pub base_url: String,
    pub path: String,
    pub interpreter_model: String,
    pub predictor_model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: u64,
    pub max_concurrency: usize,
    /// Scripted replies to use instead of the HTTP API (relative to the working directory).
    pub mock: Option<PathBuf>,
}

impl Default for CompletionSection {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com".into(),
            path: "/v1/chat/completions".into(),
            interpreter_model: "gpt-4o".into(),
            predictor_model: "gpt-4o-mini".into(),
            token_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
            max_concurrency: 8,
            mock: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub base_url: String,
    pub path: String,
    pub model: String,
    pub token_env: String,
    pub timeout_secs: u64,
    pub cache_capacity: usize,
    /// JSON object mapping text to a raw embedding, used instead of the HTTP API.
    pub mock: Option<PathBuf>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com".into(),
            path: "/v1/embeddings".into(),
            model: "text-embedding-3-small".into(),
            token_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            cache_capacity: 10_000,
            mock: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    pub subject: String,
    pub interpreter_max: usize,
    pub interpreter_zero: usize,
    pub predictor_positive: usize,
    pub predictor_negative: usize,
    /// Label only these features (all when empty).
    pub features: Vec<usize>,
}

impl Default for LabelSection {
    fn default() -> Self {
        Self {
            subject: "astronomy".into(),
            interpreter_max: 5,
            interpreter_zero: 5,
            predictor_positive: 3,
            predictor_negative: 3,
            features: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySection {
    pub tau: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub dedup_jaccard: f64,
    pub min_f1: f64,
    pub min_pearson: f64,
    /// Run superfeature labelling when a completion client is configured.
    pub label: bool,
    /// Positives and negatives per family label score.
    pub predictor_examples: usize,
}

impl Default for FamilySection {
    fn default() -> Self {
        Self {
            tau: 0.1,
            epsilon: 1e-6,
            iterations: 3,
            dedup_jaccard: 0.6,
            min_f1: 0.8,
            min_pearson: 0.8,
            label: false,
            predictor_examples: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchSection {
    pub small: Option<PathBuf>,
    pub large: Option<PathBuf>,
    pub recurrent_threshold: f64,
}

impl Default for MatchSection {
    fn default() -> Self {
        Self { small: None, large: None, recurrent_threshold: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteerEvalSection {
    /// Plain-text file, one query per line (relative to the working directory).
    pub queries: Option<PathBuf>,
    pub trials: usize,
    pub retrieve: usize,
    pub min_f1: f64,
    pub min_pearson: f64,
    pub max_pair_cosine: f64,
    pub lambda_up_max: f64,
    pub bin_width: f64,
    pub snippet_chars: usize,
    pub judge_model: String,
    pub rewriter_model: String,
}

impl Default for SteerEvalSection {
    fn default() -> Self {
        Self {
            queries: None,
            trials: 50,
            retrieve: 10,
            min_f1: 0.9,
            min_pearson: 0.9,
            max_pair_cosine: 0.3,
            lambda_up_max: 5.0,
            bin_width: 0.05,
            snippet_chars: 300,
            judge_model: "gpt-4o".into(),
            rewriter_model: "gpt-4o".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub addr: String,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self { addr: "127.0.0.1:8080".into() }
    }
}

impl Config {
    /// Parses TOML, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.out.join("corpus")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out.join("model.sae")
    }

    pub fn grid_checkpoint_path(&self, k: usize, n: usize) -> PathBuf {
        self.out.join("grid").join(format!("k{k}_n{n}.sae"))
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.out.join("catalog.json")
    }

    pub fn families_path(&self) -> PathBuf {
        self.out.join("families.json")
    }

    pub fn activations_path(&self) -> PathBuf {
        self.out.join("activations.bin")
    }

    pub fn embedding_cache_path(&self) -> PathBuf {
        self.out.join("embedding_cache.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_default() {
        let c: Config = toml::from_str("").unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<Config>("[train]\nkk = 3\n").is_err());
    }

    #[test]
    fn grid_and_overrides() {
        let c: Config = toml::from_str("seed = 4\n[train]\nk = 8\nn = 64\n[grid]\nk = [4, 8]\nn = [64, 128]\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.grid.unwrap().n, vec![64, 128]);
        let sae = c.train.sae_config(8, 64, 4);
        assert_eq!(sae.k_aux, 16);
        assert_eq!(sae.seed, 4);
    }
}
