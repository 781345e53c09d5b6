//! Feature-level analysis: cross-model matching, co-activation graphs,
//! feature families and encoder/decoder geometry.

pub mod cooccurrence;
pub mod encdec;
pub mod families;
pub mod matching;
pub mod mst;
pub mod superfeature;

pub use cooccurrence::{activation_similarity, build_cooccurrence, ActivationSimilarity, CoActivationGraphs};
pub use encdec::{encoder_decoder_similarity, EncoderDecoderSimilarity};
pub use families::{annotate_metrics, extract_families, family_metrics, median, BlockLayout, Family, FamilyConfig, FamilyForest, FamilyMetrics};
pub use matching::{match_features, FeatureMatch, MatchClass, MatchResult};
pub use mst::maximum_spanning_forest;
pub use superfeature::{label_family, FamilyLabel};
