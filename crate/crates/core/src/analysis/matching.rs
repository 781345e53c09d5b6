//! Nearest-neighbour matching of decoder directions between two catalogs.

use alloc::vec::Vec;

use crate::catalog::FeatureCatalog;
use crate::{linalg, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum MatchClass {
    Recurrent,
    Novel,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureMatch {
    /// Feature in the larger catalog.
    pub large_id: usize,
    /// Its most similar feature in the smaller catalog.
    pub small_id: usize,
    pub cosine: f64,
    /// Cosine of the two activation columns, when activations were supplied.
    pub activation_similarity: Option<f64>,
    pub class: MatchClass,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchResult {
    pub threshold: f64,
    pub pairs: Vec<FeatureMatch>,
}

impl MatchResult {
    pub fn recurrent_fraction(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().filter(|p| p.class == MatchClass::Recurrent).count() as f64 / self.pairs.len() as f64
    }

    /// Fills `activation_similarity` from per-feature activation columns
    /// ((row, value) lists sorted by row) of the two models on one corpus.
    pub fn attach_activation_similarity(&mut self, small_cols: &[Vec<(usize, f64)>], large_cols: &[Vec<(usize, f64)>]) {
        for p in &mut self.pairs {
            let s = super::activation_similarity(&small_cols[p.small_id], &large_cols[p.large_id]);
            p.activation_similarity = Some(s.normalized);
        }
    }
}

/// For each feature of `large`, the most cosine-similar feature of `small`
/// (lower id on ties). Recurrent when the cosine reaches `recurrent_threshold`.
///
/// Works across corpora as long as both catalogs live in the same embedding space.
pub fn match_features(small: &FeatureCatalog, large: &FeatureCatalog, recurrent_threshold: f64) -> Result<MatchResult> {
    if small.dim != large.dim {
        return Err(Error::DimensionMismatch { expected: small.dim, actual: large.dim });
    }
    if small.is_empty() {
        return Ok(MatchResult { threshold: recurrent_threshold, pairs: Vec::new() });
    }
    let unit = |c: &FeatureCatalog| -> Vec<Vec<f64>> {
        c.features
            .iter()
            .map(|f| {
                let mut v = f.decoder_direction.clone();
                linalg::normalize(&mut v);
                v
            })
            .collect()
    };
    let small_dirs = unit(small);
    let large_dirs = unit(large);
    let pairs = large
        .features
        .iter()
        .zip(&large_dirs)
        .map(|(lf, ld)| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for (si, sd) in small_dirs.iter().enumerate() {
                let c = linalg::dot(ld, sd);
                if c > best.1 {
                    best = (si, c);
                }
            }
            let cosine = best.1.clamp(-1.0, 1.0);
            FeatureMatch {
                large_id: lf.id,
                small_id: small.features[best.0].id,
                cosine,
                activation_similarity: None,
                class: if cosine >= recurrent_threshold { MatchClass::Recurrent } else { MatchClass::Novel },
            }
        })
        .collect();
    Ok(MatchResult { threshold: recurrent_threshold, pairs })
}
