//! The top-k sparse autoencoder.
//!
//! ```text
//! encode:  a = ReLU(W_e x + b_e), keep the k largest entries of a
//! decode:  x̂ = W_d h + b_d
//! ```
//!
//! `W_e` is stored row-major (`n × d`, one row per latent). `W_d` is stored
//! column by column, so decoder direction `i` is the contiguous slice
//! `w_dec[i*d..(i+1)*d]`.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::EmbeddingCorpus;
use crate::linalg;
use crate::median::geometric_median;
use crate::{Error, Result};

/// Rows drawn for the decoder-bias geometric median.
const MEDIAN_SAMPLE: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SaeConfig {
    /// Active latents per input.
    pub k: usize,
    /// Total latents.
    pub n: usize,
    /// Dead latents used by the auxiliary reconstruction (default `2k`, capped at `n`).
    pub k_aux: usize,
    /// Auxiliary loss coefficient.
    pub alpha: f64,
    /// Coefficient of an L1 sparsity term. The top-k constraint replaces it, so
    /// only 0 is accepted.
    pub lambda_sparse: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm clipping threshold.
    pub grad_clip: f64,
    pub seed: u64,
}

impl SaeConfig {
    pub fn new(k: usize, n: usize) -> Self {
        Self {
            k,
            n,
            k_aux: (2 * k).min(n),
            alpha: 1.0 / 32.0,
            lambda_sparse: 0.0,
            learning_rate: 1e-4,
            batch_size: 1024,
            epochs: 1,
            grad_clip: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.k == 0 || self.n == 0 {
            return fail("k and n must be positive");
        }
        if self.k > self.n {
            return fail("k must not exceed n");
        }
        if self.k_aux == 0 || self.k_aux > self.n {
            return fail("k_aux must lie in 1..=n");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail("alpha must be positive");
        }
        if self.lambda_sparse != 0.0 {
            return fail("lambda_sparse must be 0: sparsity comes from the top-k constraint");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return fail("grad_clip must be positive");
        }
        Ok(())
    }
}

/// Non-zero part of a latent vector: ascending indices with positive values.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SparseActivation {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseActivation {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, feature: usize) -> f64 {
        match self.indices.binary_search(&feature) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    pub config: SaeConfig,
    pub dim: usize,
    pub w_enc: Vec<f64>,
    pub b_enc: Vec<f64>,
    pub w_dec: Vec<f64>,
    pub b_dec: Vec<f64>,
}

/// Keeps the `k` largest positive entries of `pre`, lower index first on ties.
/// Returns (index, value) pairs sorted by index.
pub(crate) fn top_k_positive(pre: &[f64], k: usize, mut allowed: impl FnMut(usize) -> bool) -> Vec<(usize, f64)> {
    let mut cand: Vec<(usize, f64)> =
        pre.iter().copied().enumerate().filter(|&(i, v)| v > 0.0 && allowed(i)).collect();
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if cand.len() > k {
        if k == 0 {
            return Vec::new();
        }
        cand.select_nth_unstable_by(k - 1, order);
        cand.truncate(k);
    }
    cand.sort_unstable_by_key(|&(i, _)| i);
    cand
}

impl SaeModel {
    /// Builds a model from explicit weights. `w_dec` is given column by column.
    pub fn from_parts(
        config: SaeConfig,
        dim: usize,
        w_enc: Vec<f64>,
        b_enc: Vec<f64>,
        w_dec: Vec<f64>,
        b_dec: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let n = config.n;
        if w_enc.len() != n * dim || b_enc.len() != n || w_dec.len() != n * dim || b_dec.len() != dim {
            return Err(Error::Config("weight shapes do not match (n, d)".into()));
        }
        Ok(Self { config, dim, w_enc, b_enc, w_dec, b_dec })
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn encoder_row(&self, i: usize) -> &[f64] {
        &self.w_enc[i * self.dim..(i + 1) * self.dim]
    }

    pub fn decoder_column(&self, i: usize) -> &[f64] {
        &self.w_dec[i * self.dim..(i + 1) * self.dim]
    }

    pub fn decoder_column_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.w_dec[i * self.dim..(i + 1) * self.dim]
    }

    /// `W_e x + b_e` into `out` (length n).
    pub fn pre_activations_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (i, o) in out.iter_mut().enumerate() {
            *o = linalg::dot(self.encoder_row(i), x) + self.b_enc[i];
        }
    }

    pub fn pre_activations(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.pre_activations_into(x, &mut out);
        out
    }

    pub fn encode(&self, x: &[f64]) -> SparseActivation {
        encode_topk(self, x)
    }

    pub fn decode(&self, h: &SparseActivation) -> Vec<f64> {
        decode(self, h)
    }

    /// Decodes arbitrary (feature, weight) pairs; weights may be zero or negative.
    pub fn decode_pairs(&self, pairs: impl IntoIterator<Item = (usize, f64)>) -> Vec<f64> {
        let mut out = self.b_dec.clone();
        for (i, v) in pairs {
            linalg::axpy(v, self.decoder_column(i), &mut out);
        }
        out
    }

    pub fn decode_dense(&self, h: &[f64]) -> Vec<f64> {
        self.decode_pairs(h.iter().copied().enumerate().filter(|&(_, v)| v != 0.0))
    }

    /// Top-k encoding of a dense latent target, used by the iterative optimiser.
    pub fn encode_dense(&self, x: &[f64]) -> Vec<f64> {
        self.encode(x).to_dense(self.n())
    }

    /// Renormalizes every decoder column to unit length.
    pub fn normalize_decoder(&mut self) {
        for col in self.w_dec.chunks_exact_mut(self.dim) {
            linalg::normalize(col);
        }
    }

    pub fn max_decoder_norm_error(&self) -> f64 {
        self.w_dec
            .chunks_exact(self.dim)
            .map(|c| libm::fabs(linalg::norm(c) - 1.0))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.w_enc.iter().chain(&self.b_enc).chain(&self.w_dec).chain(&self.b_dec).all(|v| v.is_finite())
    }
}

/// ReLU pre-activations truncated to the `k` largest.
pub fn encode_topk(model: &SaeModel, x: &[f64]) -> SparseActivation {
    let pre = model.pre_activations(x);
    let kept = top_k_positive(&pre, model.k(), |_| true);
    let (indices, values) = kept.into_iter().unzip();
    SparseActivation { indices, values }
}

/// `b_d + Σ h_i w_i` over the support of `h`; costs |support|·d.
pub fn decode(model: &SaeModel, h: &SparseActivation) -> Vec<f64> {
    model.decode_pairs(h.iter())
}

/// Encodes every corpus row.
pub fn encode_corpus(model: &SaeModel, corpus: &EmbeddingCorpus) -> Vec<SparseActivation> {
    let mut x = vec![0.0; corpus.dim()];
    (0..corpus.len())
        .map(|r| {
            corpus.row_f64_into(r, &mut x);
            encode_topk(model, &x)
        })
        .collect()
}

/// Fresh model for `config` on a (normalized) sample.
///
/// * decoder bias: geometric median of up to 2048 sampled rows
/// * decoder columns: isotropic random directions of unit length
/// * encoder rows: parallel to their decoder columns, with one shared scale
///   chosen so the mean reconstruction norm `‖x̂ − b_d‖` matches the mean
///   input norm `‖x − b_d‖` over the sample
/// * encoder bias: zero
pub fn init_model(config: &SaeConfig, sample: &EmbeddingCorpus) -> Result<SaeModel> {
    config.validate()?;
    if sample.is_empty() {
        return Err(Error::InvalidCorpus("cannot initialise from an empty sample".into()));
    }
    let d = sample.dim();
    let n = config.n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let picked: Vec<usize> = if sample.len() <= MEDIAN_SAMPLE {
        (0..sample.len()).collect()
    } else {
        let mut idx = rand::seq::index::sample(&mut rng, sample.len(), MEDIAN_SAMPLE).into_vec();
        idx.sort_unstable();
        idx
    };
    let rows: Vec<Vec<f64>> = picked.iter().map(|&r| sample.row_f64(r)).collect();
    let b_dec = geometric_median(&rows, 1e-7, 200);

    let mut w_dec: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    for col in w_dec.chunks_exact_mut(d) {
        if linalg::normalize(col) == 0.0 {
            col[0] = 1.0;
        }
    }

    let mut model = SaeModel {
        config: config.clone(),
        dim: d,
        w_enc: w_dec.clone(),
        b_enc: vec![0.0; n],
        w_dec,
        b_dec,
    };

    let mut input_norm = 0.0;
    let mut recon_norm = 0.0;
    let mut centered = vec![0.0; d];
    for row in &rows {
        for ((c, x), b) in centered.iter_mut().zip(row).zip(&model.b_dec) {
            *c = x - b;
        }
        input_norm += linalg::norm(&centered);
        let h = encode_topk(&model, row);
        let mut recon = vec![0.0; d];
        for (i, v) in h.iter() {
            linalg::axpy(v, model.decoder_column(i), &mut recon);
        }
        recon_norm += linalg::norm(&recon);
    }
    // With b_e = 0 the top-k support is scale invariant, so the reconstruction
    // norm scales linearly with the encoder scale.
    if recon_norm > 0.0 && input_norm > 0.0 {
        let scale = input_norm / recon_norm;
        for w in &mut model.w_enc {
            *w *= scale;
        }
    }
    Ok(model)
}
