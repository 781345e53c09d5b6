//! Co-occurrence (`C`) and activation-similarity (`D`) matrices.
//!
//! With `A[i][k] = 1` when feature `i` fires on document `k` and `B[i][k]` its
//! activation value there (0 otherwise):
//!
//! ```text
//! C[i][j]      = Σ_k A[i][k] A[j][k]        f_i = C[i][i]
//! D[i][j]      = Σ_k B[i][k] B[j][k]
//! C_norm[i][j] = C[i][j] / (f_i + ε)        kept only where ≥ τ
//! ```
//!
//! `A` and `B` are never materialized; both are read off the sparse encodings.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::SparseActivation;

#[derive(Debug, Clone, PartialEq)]
pub struct CoActivationGraphs {
    pub n: usize,
    pub documents: usize,
    pub epsilon: f64,
    pub tau: f64,
    /// `f`: documents on which each feature fires.
    pub frequency: Vec<u64>,
    /// Dense row-major `C`, diagonal included.
    pub counts: Vec<u32>,
    /// Dense row-major `D`, diagonal included.
    pub similarity: Vec<f64>,
    /// Off-diagonal entries of `C_norm` at or above `τ`, per row, ascending column.
    pub normalized: Vec<Vec<(usize, f64)>>,
}

impl CoActivationGraphs {
    pub fn c(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.n + j]
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.similarity[i * self.n + j]
    }

    /// `D[i][j] / sqrt(D[i][i] · D[j][j])`, the cosine between activation columns.
    pub fn d_normalized(&self, i: usize, j: usize) -> f64 {
        let scale = (self.d(i, i) * self.d(j, j)).sqrt();
        if scale == 0.0 {
            0.0
        } else {
            self.d(i, j) / scale
        }
    }

    /// Unthresholded `C_norm[i][j]`.
    pub fn c_norm(&self, i: usize, j: usize) -> f64 {
        self.c(i, j) as f64 / (self.frequency[i] as f64 + self.epsilon)
    }

    /// Thresholded `C_norm[i][j]`, 0 when below `τ`.
    pub fn c_thresh(&self, i: usize, j: usize) -> f64 {
        match self.normalized[i].binary_search_by_key(&j, |e| e.0) {
            Ok(p) => self.normalized[i][p].1,
            Err(_) => 0.0,
        }
    }

    /// Undirected edges `(i, j, max(C_thresh[i][j], C_thresh[j][i]))` with `i < j`,
    /// limited to nodes for which `include` holds.
    pub fn symmetric_edges(&self, include: &[bool]) -> Vec<(usize, usize, f64)> {
        let mut edges = Vec::new();
        for i in 0..self.n {
            if !include[i] {
                continue;
            }
            for &(j, w) in &self.normalized[i] {
                if !include[j] {
                    continue;
                }
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                let other = self.c_thresh(j, i);
                // emit each pair once, from the row holding the larger weight (lower row on ties)
                if w > other || (w == other && i < j) {
                    edges.push((a, b, w));
                }
            }
        }
        edges.sort_by_key(|x| (x.0, x.1));
        edges
    }
}

/// Drops activations of features outside `keep`.
pub fn restrict_activations(acts: &[SparseActivation], keep: &[bool]) -> Vec<SparseActivation> {
    acts.iter()
        .map(|h| {
            let (indices, values) = h.iter().filter(|&(i, _)| keep.get(i).copied().unwrap_or(false)).unzip();
            SparseActivation { indices, values }
        })
        .collect()
}

/// Builds `C`, `D`, `f` and the thresholded `C_norm` from per-document encodings.
pub fn build_cooccurrence(acts: &[SparseActivation], n: usize, epsilon: f64, tau: f64) -> CoActivationGraphs {
    let mut counts = vec![0u32; n * n];
    let mut similarity = vec![0.0f64; n * n];
    for h in acts {
        for (i, vi) in h.iter() {
            let row = i * n;
            for (j, vj) in h.iter() {
                counts[row + j] += 1;
                similarity[row + j] += vi * vj;
            }
        }
    }
    let frequency: Vec<u64> = (0..n).map(|i| counts[i * n + i] as u64).collect();
    let normalized = (0..n)
        .map(|i| {
            let denom = frequency[i] as f64 + epsilon;
            (0..n)
                .filter(|&j| j != i && counts[i * n + j] > 0)
                .map(|j| (j, counts[i * n + j] as f64 / denom))
                .filter(|&(_, w)| w >= tau)
                .collect()
        })
        .collect();
    CoActivationGraphs { n, documents: acts.len(), epsilon, tau, frequency, counts, similarity, normalized }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActivationSimilarity {
    /// Inner product of the two activation columns.
    pub raw: f64,
    /// Cosine of the two columns (0 if either never fires).
    pub normalized: f64,
}

/// Compares two activation columns given as (row, value) lists sorted by row.
pub fn activation_similarity(a: &[(usize, f64)], b: &[(usize, f64)]) -> ActivationSimilarity {
    let mut raw = 0.0;
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].0.cmp(&b[y].0) {
            core::cmp::Ordering::Less => x += 1,
            core::cmp::Ordering::Greater => y += 1,
            core::cmp::Ordering::Equal => {
                raw += a[x].1 * b[y].1;
                x += 1;
                y += 1;
            }
        }
    }
    let na = libm::sqrt(a.iter().map(|e| e.1 * e.1).sum::<f64>());
    let nb = libm::sqrt(b.iter().map(|e| e.1 * e.1).sum::<f64>());
    let normalized = if na > 0.0 && nb > 0.0 { raw / (na * nb) } else { 0.0 };
    ActivationSimilarity { raw, normalized }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(pairs: &[(usize, f64)]) -> SparseActivation {
        SparseActivation { indices: pairs.iter().map(|p| p.0).collect(), values: pairs.iter().map(|p| p.1).collect() }
    }

    #[test]
    fn always_coactive_pair() {
        let acts: Vec<_> = (0..10).map(|_| act(&[(0, 1.0), (1, 2.0)])).collect();
        let g = build_cooccurrence(&acts, 2, 1e-6, 0.1);
        assert_eq!(g.c(0, 1), 10);
        assert!((g.c_norm(0, 1) - 1.0).abs() < 1e-6);
        assert_eq!(g.d(0, 1), 20.0);
        assert!((g.d_normalized(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(g.frequency, vec![10, 10]);
    }

    #[test]
    fn never_coactive_has_no_edge() {
        let acts = vec![act(&[(0, 1.0)]), act(&[(1, 1.0)])];
        let g = build_cooccurrence(&acts, 2, 1e-6, 0.0);
        assert_eq!(g.c(0, 1), 0);
        assert_eq!(g.d_normalized(0, 1), 0.0);
        assert!(g.normalized[0].is_empty());
        assert!(g.symmetric_edges(&[true, true]).is_empty());
    }

    #[test]
    fn activation_similarity_cases() {
        let a = [(0, 1.0), (2, 2.0), (4, 3.0)];
        assert!((activation_similarity(&a, &a).normalized - 1.0).abs() < 1e-12);
        assert_eq!(activation_similarity(&a, &[(1, 5.0), (3, 1.0)]).raw, 0.0);
        // rows 2 and 4 overlap: 2·0.5 + 3·4 = 13
        let b = [(1, 9.0), (2, 0.5), (4, 4.0)];
        let s = activation_similarity(&a, &b);
        assert_eq!(s.raw, 13.0);
        let expected = 13.0 / (libm::sqrt(14.0) * libm::sqrt(81.0 + 0.25 + 16.0));
        assert!((s.normalized - expected).abs() < 1e-12);
    }
}
