//! Reconstruction and activation metrics, and power-law fits.

use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::EmbeddingCorpus;
use crate::model::{encode_topk, SaeModel, SparseActivation};
use crate::{linalg, Error, Result};

/// Mean squared reconstruction error divided by the error of predicting the
/// corpus mean. 0 for perfect reconstruction, 1 for the mean predictor.
pub fn normalized_mse(model: &SaeModel, corpus: &EmbeddingCorpus) -> f64 {
    let mean = linalg::column_mean(corpus);
    let mut x = vec![0.0; corpus.dim()];
    let mut err = 0.0;
    let mut base = 0.0;
    for r in 0..corpus.len() {
        corpus.row_f64_into(r, &mut x);
        let recon = model.decode(&encode_topk(model, &x));
        err += linalg::squared_distance(&x, &recon);
        base += linalg::squared_distance(&x, &mean);
    }
    err / base
}

/// Same ratio for precomputed reconstructions (`recon` row-major like the corpus).
pub fn normalized_mse_of(corpus: &EmbeddingCorpus, recon: &[f64]) -> f64 {
    let mean = linalg::column_mean(corpus);
    let d = corpus.dim();
    let mut err = 0.0;
    let mut base = 0.0;
    for (r, row) in corpus.rows().enumerate() {
        for ((&x, m), y) in row.iter().zip(&mean).zip(&recon[r * d..(r + 1) * d]) {
            err += (x as f64 - y) * (x as f64 - y);
            base += (x as f64 - m) * (x as f64 - m);
        }
    }
    err / base
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureStats {
    /// Fraction of rows on which each feature is active.
    pub density: Vec<f64>,
    /// log10 of `density`; `None` for features that never fire.
    pub log10_density: Vec<Option<f64>>,
    /// Mean of the positive activations of each feature (0 if it never fires).
    pub mean_nonzero_activation: Vec<f64>,
    pub normalized_mse: f64,
    /// Mean of `log10_density` over features that fire.
    pub mean_log10_density: f64,
    /// Mean over all non-zero activation values in the corpus.
    pub activation_mean: f64,
    pub dead_features: usize,
    pub rows: usize,
}

/// Density and activation statistics from precomputed encodings.
pub fn feature_stats_from(acts: &[SparseActivation], n: usize, normalized_mse: f64) -> FeatureStats {
    let mut count = vec![0u64; n];
    let mut sum = vec![0.0; n];
    for h in acts {
        for (i, v) in h.iter() {
            count[i] += 1;
            sum[i] += v;
        }
    }
    let rows = acts.len();
    let density: Vec<f64> = count.iter().map(|&c| c as f64 / rows.max(1) as f64).collect();
    let log10_density: Vec<Option<f64>> =
        density.iter().map(|&p| if p > 0.0 { Some(libm::log10(p)) } else { None }).collect();
    let live: Vec<f64> = log10_density.iter().flatten().copied().collect();
    let mean_log10_density = if live.is_empty() { f64::NEG_INFINITY } else { live.iter().sum::<f64>() / live.len() as f64 };
    let mean_nonzero_activation =
        count.iter().zip(&sum).map(|(&c, &s)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let total: u64 = count.iter().sum();
    let activation_mean = if total > 0 { sum.iter().sum::<f64>() / total as f64 } else { 0.0 };
    FeatureStats {
        density,
        log10_density,
        mean_nonzero_activation,
        normalized_mse,
        mean_log10_density,
        activation_mean,
        dead_features: count.iter().filter(|&&c| c == 0).count(),
        rows,
    }
}

pub fn feature_stats(model: &SaeModel, corpus: &EmbeddingCorpus) -> FeatureStats {
    let acts = crate::model::encode_corpus(model, corpus);
    let d = corpus.dim();
    let mut recon = Vec::with_capacity(corpus.len() * d);
    for h in &acts {
        recon.extend(model.decode(h));
    }
    let nmse = normalized_mse_of(corpus, &recon);
    feature_stats_from(&acts, model.n(), nmse)
}

/// `y = coefficient · x^exponent`, fitted by least squares in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerLawFit {
    pub coefficient: f64,
    pub exponent: f64,
    /// Coefficient of determination of the log-log linear fit.
    pub r_squared: f64,
}

impl PowerLawFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.coefficient * libm::pow(x, self.exponent)
    }
}

pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit> {
    if xs.len() != ys.len() {
        return Err(Error::Fit("xs and ys differ in length".into()));
    }
    if xs.len() < 3 {
        return Err(Error::Fit("need at least three points".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Fit("all values must be positive and finite".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|&x| libm::log(x)).collect();
    let ly: Vec<f64> = ys.iter().map(|&y| libm::log(y)).collect();
    let count = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / count;
    let my = ly.iter().sum::<f64>() / count;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("x values are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx.iter().zip(&ly).map(|(x, y)| {
        let r = y - (intercept + slope * x);
        r * r
    }).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(PowerLawFit { coefficient: libm::exp(intercept), exponent: slope, r_squared })
}
