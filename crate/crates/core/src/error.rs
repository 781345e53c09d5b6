use alloc::boxed::Box;
use alloc::string::String;

use crate::train::TrainingLog;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("dimension {dim} has zero variance")]
    DegenerateDimension { dim: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize, log: Box<TrainingLog> },
    #[error("power-law fit: {0}")]
    Fit(String),
    #[error("feature {feature} is active on {active} documents, too few to label")]
    TooSparse { feature: usize, active: usize },
    #[error("feature {feature} leaves only {inactive} inactive documents")]
    TooDense { feature: usize, inactive: usize },
    #[error("no FINAL line in interpreter reply for feature {feature}")]
    LabelParse { feature: usize },
    #[error("no PREDICTION value in predictor reply for feature {feature}")]
    PredictionParse { feature: usize },
    #[error("unparseable judge answer: {0}")]
    AnswerParse(String),
    #[error("completion client: {0}")]
    Client(String),
    #[error("iterative optimisation diverged at step {step}")]
    OptimizeDiverged { step: usize },
    #[error("unknown feature id {0}")]
    UnknownFeature(usize),
    #[error("unknown family id {0}")]
    UnknownFamily(usize),
    #[error("document {doc_id} has a zero embedding")]
    ZeroEmbedding { doc_id: String },
}
