//! Document corpora with precomputed embeddings.
//!
//! Embeddings are kept as `f32`, the on-disk precision, so a corpus survives a
//! save/load cycle bit for bit. Statistics are accumulated in `f64`.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CorpusTag {
    Astro,
    Cs,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DocumentRecord {
    pub doc_id: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub title: String,
    pub abstract_text: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub year: Option<i32>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub citation_count: Option<u64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub corpus_tag: CorpusTag,
}

/// Per-dimension mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fits statistics to a corpus. Uses the population convention (divide by N).
    pub fn fit(corpus: &EmbeddingCorpus) -> Result<Self> {
        if corpus.len() < 2 {
            return Err(Error::InvalidCorpus("normalization needs at least two rows".into()));
        }
        let d = corpus.dim();
        let count = corpus.len() as f64;
        let mean = crate::linalg::column_mean(corpus);
        let mut var = alloc::vec![0.0f64; d];
        for row in corpus.rows() {
            for ((acc, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                let c = v as f64 - m;
                *acc += c * c;
            }
        }
        let mut std = Vec::with_capacity(d);
        for (dim, v) in var.into_iter().enumerate() {
            let s = libm::sqrt(v / count);
            // Relative floor: a column of identical f32 values can still pick up
            // rounding noise from the f64 mean.
            let scale = libm::fabs(mean[dim]).max(1.0);
            if !(s > 1e-12 * scale) {
                return Err(Error::DegenerateDimension { dim });
            }
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Row-major embedding matrix plus aligned document metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCorpus {
    dim: usize,
    embeddings: Vec<f32>,
    docs: Vec<DocumentRecord>,
    norm_stats: Option<NormStats>,
}

impl EmbeddingCorpus {
    pub fn new(dim: usize, embeddings: Vec<f32>, docs: Vec<DocumentRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidCorpus("embedding dimension must be positive".into()));
        }
        if embeddings.len() != dim * docs.len() {
            return Err(Error::InvalidCorpus(alloc::format!(
                "{} values do not form {} rows of dimension {}",
                embeddings.len(),
                docs.len(),
                dim
            )));
        }
        if let Some(pos) = embeddings.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidCorpus(alloc::format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        let mut seen = BTreeSet::new();
        for doc in &docs {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::InvalidCorpus(alloc::format!("duplicate doc_id {}", doc.doc_id)));
            }
            if doc.abstract_text.is_empty() {
                return Err(Error::InvalidCorpus(alloc::format!("empty abstract for {}", doc.doc_id)));
            }
        }
        Ok(Self { dim, embeddings, docs, norm_stats: None })
    }

    /// Builds a corpus from bare vectors with generated ids and placeholder text.
    pub fn from_rows(dim: usize, embeddings: Vec<f32>) -> Result<Self> {
        if dim == 0 || !embeddings.len().is_multiple_of(dim) {
            return Err(Error::InvalidCorpus("ragged embedding matrix".into()));
        }
        let docs = (0..embeddings.len() / dim)
            .map(|i| DocumentRecord {
                doc_id: alloc::format!("doc-{i:06}"),
                title: alloc::format!("Document {i}"),
                abstract_text: alloc::format!("Abstract of document {i}."),
                ..Default::default()
            })
            .collect();
        Self::new(dim, embeddings, docs)
    }

    pub fn with_norm_stats(mut self, stats: Option<NormStats>) -> Self {
        self.norm_stats = stats;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    /// Copies row `i` into `out` as f64.
    pub fn row_f64_into(&self, i: usize, out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(self.row(i)) {
            *o = v as f64;
        }
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn rows(&self) -> core::slice::ChunksExact<'_, f32> {
        self.embeddings.chunks_exact(self.dim)
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn docs(&self) -> &[DocumentRecord] {
        &self.docs
    }

    pub fn doc(&self, i: usize) -> &DocumentRecord {
        &self.docs[i]
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm_stats.as_ref()
    }

    /// New corpus holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut embeddings = Vec::with_capacity(indices.len() * self.dim);
        let mut docs = Vec::with_capacity(indices.len());
        for &i in indices {
            embeddings.extend_from_slice(self.row(i));
            docs.push(self.docs[i].clone());
        }
        Self { dim: self.dim, embeddings, docs, norm_stats: self.norm_stats.clone() }
    }

    /// Applies previously fitted statistics. The stats are recorded on the result.
    pub fn apply_stats(&self, stats: &NormStats) -> Result<Self> {
        if stats.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: stats.dim() });
        }
        let mut embeddings = Vec::with_capacity(self.embeddings.len());
        for row in self.rows() {
            for ((&v, m), s) in row.iter().zip(&stats.mean).zip(&stats.std) {
                embeddings.push(((v as f64 - m) / s) as f32);
            }
        }
        Ok(Self {
            dim: self.dim,
            embeddings,
            docs: self.docs.clone(),
            norm_stats: Some(stats.clone()),
        })
    }

    /// Undoes normalization with the stored statistics.
    pub fn denormalized(&self) -> Option<Self> {
        let stats = self.norm_stats.as_ref()?;
        let mut embeddings = Vec::with_capacity(self.embeddings.len());
        for row in self.rows() {
            for ((&v, m), s) in row.iter().zip(&stats.mean).zip(&stats.std) {
                embeddings.push((v as f64 * s + m) as f32);
            }
        }
        Some(Self { dim: self.dim, embeddings, docs: self.docs.clone(), norm_stats: None })
    }
}

/// Standardizes every dimension to zero mean and unit (population) variance.
///
/// The returned corpus carries the statistics of the input so the same
/// transform can be applied to held-out rows and live queries.
pub fn normalize_corpus(corpus: &EmbeddingCorpus) -> Result<EmbeddingCorpus> {
    let stats = NormStats::fit(corpus)?;
    corpus.apply_stats(&stats)
}

/// Deterministic shuffled split into (train, validation).
///
/// The validation size is `round(N * val_fraction)`; both sides keep the
/// original row order.
pub fn split_corpus(
    corpus: &EmbeddingCorpus,
    val_fraction: f64,
    seed: u64,
) -> Result<(EmbeddingCorpus, EmbeddingCorpus)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(alloc::format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    let total = corpus.len();
    let n_val = libm::round(total as f64 * val_fraction) as usize;
    if total as f64 * val_fraction < 1.0 || n_val == 0 || n_val >= total {
        return Err(Error::Config(alloc::format!(
            "val_fraction {val_fraction} leaves an empty side for {total} rows"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut val: Vec<usize> = order[..n_val].to_vec();
    let mut train: Vec<usize> = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((corpus.subset(&train), corpus.subset(&val)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn corpus(dim: usize, values: &[f32]) -> EmbeddingCorpus {
        EmbeddingCorpus::from_rows(dim, values.to_vec()).unwrap()
    }

    #[test]
    fn two_point_normalization() {
        let c = corpus(2, &[0.0, 2.0, 2.0, 0.0]);
        let n = normalize_corpus(&c).unwrap();
        // population std of {0, 2} is 1, so (0 - 1) / 1 = -1
        assert_eq!(n.row(0), &[-1.0, 1.0]);
        assert_eq!(n.row(1), &[1.0, -1.0]);
        let stats = n.norm_stats().unwrap();
        assert_eq!(stats.mean, vec![1.0, 1.0]);
        assert_eq!(stats.std, vec![1.0, 1.0]);
    }

    #[test]
    fn constant_dimension_is_degenerate() {
        let c = corpus(2, &[1.0, 3.0, 1.0, 5.0, 1.0, 4.0]);
        assert!(matches!(normalize_corpus(&c), Err(Error::DegenerateDimension { dim: 0 })));
    }

    #[test]
    fn normalizing_twice_is_stable() {
        let c = corpus(3, &[0.3, -1.0, 4.0, 1.5, 2.0, -0.5, 2.5, 0.1, 0.0, -0.7, 3.3, 1.0]);
        let once = normalize_corpus(&c).unwrap();
        let twice = normalize_corpus(&once).unwrap();
        for (a, b) in once.embeddings().iter().zip(twice.embeddings()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn split_sizes() {
        let c = corpus(1, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let (train, val) = split_corpus(&c, 0.2, 7).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        let (train2, val2) = split_corpus(&c, 0.2, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(val, val2);

        let five = corpus(1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        for seed in 0..5 {
            let (t, v) = split_corpus(&five, 0.2, seed).unwrap();
            assert_eq!((t.len(), v.len()), (4, 1));
        }
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let c = corpus(1, &[0.0, 1.0, 2.0, 3.0]);
        assert!(matches!(split_corpus(&c, 0.0, 1), Err(Error::Config(_))));
        assert!(matches!(split_corpus(&c, 1.0, 1), Err(Error::Config(_))));
        assert!(matches!(split_corpus(&c, 0.1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_misaligned_and_non_finite() {
        assert!(EmbeddingCorpus::from_rows(2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(EmbeddingCorpus::from_rows(2, vec![1.0, f32::NAN]).is_err());
        let doc = DocumentRecord { doc_id: "a".into(), abstract_text: "x".into(), ..Default::default() };
        assert!(EmbeddingCorpus::new(1, vec![1.0, 2.0], vec![doc.clone(), doc]).is_err());
    }
}
