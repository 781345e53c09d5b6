//! Loss, gradients and the training loop.
//!
//! Per input `x` with top-k latents `h`, reconstruction `x̂` and residual
//! `e = x − x̂`:
//!
//! ```text
//! main  = (1/d) ‖x − x̂‖²
//! aux   = ‖e − W_d z‖²        z: top-k_aux positive pre-activations among dead latents
//! total = main + α · aux      aux ≡ 0 when no latent is dead
//! ```
//!
//! During training `main` is divided by a global factor fixed at the start
//! (mean per-dimension variance of the training set, so it reads as a
//! normalized MSE) and `aux` by the residual variance of the current batch.
//! Both factors are constants with respect to the gradient.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::EmbeddingCorpus;
use crate::linalg;
use crate::model::{init_model, top_k_positive, SaeModel};
use crate::optim::{clip_global_norm, AdamParams, AdamState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Losses {
    pub main: f64,
    pub aux: f64,
    pub total: f64,
}

/// How the two loss terms are scaled before they are summed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossScales {
    /// Multiplier on the main term.
    pub main: f64,
    /// Divide the auxiliary term by the batch residual variance.
    pub aux_per_batch: bool,
}

impl LossScales {
    pub const RAW: LossScales = LossScales { main: 1.0, aux_per_batch: false };
}

/// Gradients with the same layout as [`SaeModel`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_enc: Vec<f64>,
    pub b_enc: Vec<f64>,
    pub w_dec: Vec<f64>,
    pub b_dec: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &SaeModel) -> Self {
        Self {
            w_enc: vec![0.0; model.w_enc.len()],
            b_enc: vec![0.0; model.b_enc.len()],
            w_dec: vec![0.0; model.w_dec.len()],
            b_dec: vec![0.0; model.b_dec.len()],
        }
    }

    fn clear(&mut self) {
        for t in [&mut self.w_enc, &mut self.b_enc, &mut self.w_dec, &mut self.b_dec] {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

struct SampleForward {
    active: Vec<(usize, f64)>,
    aux: Vec<(usize, f64)>,
    /// x̂ − x
    residual: Vec<f64>,
    /// x̂ − x + W_d z, i.e. −(e − ê)
    aux_residual: Vec<f64>,
}

fn forward_sample(model: &SaeModel, x: &[f64], dead: &[bool], any_dead: bool, pre: &mut [f64]) -> SampleForward {
    model.pre_activations_into(x, pre);
    let active = top_k_positive(pre, model.k(), |_| true);
    let mut residual = model.b_dec.clone();
    for &(i, v) in &active {
        linalg::axpy(v, model.decoder_column(i), &mut residual);
    }
    linalg::axpy(-1.0, x, &mut residual);
    let (aux, aux_residual) = if any_dead {
        let aux = top_k_positive(pre, model.config.k_aux, |i| dead[i]);
        let mut q = residual.clone();
        for &(j, z) in &aux {
            linalg::axpy(z, model.decoder_column(j), &mut q);
        }
        (aux, q)
    } else {
        (Vec::new(), Vec::new())
    };
    SampleForward { active, aux, residual, aux_residual }
}

/// Forward pass, and backward pass when `grads` is given.
///
/// `batch` holds rows of length `model.dim` back to back. `fired` (length n)
/// is set for every latent in some row's top-k support.
pub fn forward_backward(
    model: &SaeModel,
    batch: &[f64],
    dead: &[bool],
    scales: LossScales,
    grads: Option<&mut Gradients>,
    fired: Option<&mut [bool]>,
) -> Losses {
    let d = model.dim;
    assert!(d > 0 && batch.len().is_multiple_of(d) && !batch.is_empty(), "batch must hold whole rows");
    assert_eq!(dead.len(), model.n());
    let rows = batch.len() / d;
    let b = rows as f64;
    let any_dead = dead.iter().any(|&x| x);

    let mut pre = vec![0.0; model.n()];
    let samples: Vec<SampleForward> =
        batch.chunks_exact(d).map(|x| forward_sample(model, x, dead, any_dead, &mut pre)).collect();

    let main_raw = samples.iter().map(|s| linalg::dot(&s.residual, &s.residual)).sum::<f64>() / (b * d as f64);
    let aux_raw = if any_dead {
        samples.iter().map(|s| linalg::dot(&s.aux_residual, &s.aux_residual)).sum::<f64>() / b
    } else {
        0.0
    };

    let aux_divisor = if any_dead && scales.aux_per_batch {
        let mut mean_e = vec![0.0; d];
        for s in &samples {
            linalg::axpy(-1.0 / b, &s.residual, &mut mean_e);
        }
        let var = samples
            .iter()
            .map(|s| s.residual.iter().zip(&mean_e).map(|(r, m)| (-r - m) * (-r - m)).sum::<f64>())
            .sum::<f64>()
            / b;
        if var > 1e-12 {
            var
        } else {
            1.0
        }
    } else {
        1.0
    };

    let alpha = model.config.alpha;
    let main = scales.main * main_raw;
    let aux = aux_raw / aux_divisor;
    let losses = Losses { main, aux, total: main + alpha * aux };

    if let Some(fired) = fired {
        for s in &samples {
            for &(i, _) in &s.active {
                fired[i] = true;
            }
        }
    }

    let Some(g) = grads else {
        return losses;
    };
    g.clear();
    let main_coef = scales.main * 2.0 / (b * d as f64);
    let aux_coef = alpha / aux_divisor * 2.0 / b;
    let mut g_r = vec![0.0; d];
    let mut g_q = vec![0.0; d];
    let mut x = vec![0.0; d];
    for (s, row) in samples.iter().zip(batch.chunks_exact(d)) {
        x.copy_from_slice(row);
        for (o, &r) in g_r.iter_mut().zip(&s.residual) {
            *o = main_coef * r;
        }
        if any_dead {
            for ((o, gq), &q) in g_r.iter_mut().zip(g_q.iter_mut()).zip(&s.aux_residual) {
                *gq = aux_coef * q;
                *o += *gq;
            }
        }
        linalg::axpy(1.0, &g_r, &mut g.b_dec);

        for &(i, h) in &s.active {
            let col = model.decoder_column(i);
            let da = linalg::dot(col, &g_r);
            linalg::axpy(h, &g_r, &mut g.w_dec[i * d..(i + 1) * d]);
            linalg::axpy(da, &x, &mut g.w_enc[i * d..(i + 1) * d]);
            g.b_enc[i] += da;
        }
        for &(j, z) in &s.aux {
            let col = model.decoder_column(j);
            let da = linalg::dot(col, &g_q);
            linalg::axpy(z, &g_q, &mut g.w_dec[j * d..(j + 1) * d]);
            linalg::axpy(da, &x, &mut g.w_enc[j * d..(j + 1) * d]);
            g.b_enc[j] += da;
        }
    }
    losses
}

/// Unscaled losses on a batch of rows (see the module docs).
pub fn compute_losses(model: &SaeModel, batch: &[f64], dead: &[bool]) -> Losses {
    forward_backward(model, batch, dead, LossScales::RAW, None, None)
}

/// Unscaled losses and their gradients.
pub fn loss_and_gradients(model: &SaeModel, batch: &[f64], dead: &[bool], scales: LossScales) -> (Losses, Gradients) {
    let mut g = Gradients::zeros(model);
    let l = forward_backward(model, batch, dead, scales, Some(&mut g), None);
    (l, g)
}

/// Removes from each decoder-column gradient its component along the column.
pub fn project_decoder_gradient(model: &SaeModel, grad_w_dec: &mut [f64]) {
    let d = model.dim;
    for (i, g) in grad_w_dec.chunks_exact_mut(d).enumerate() {
        let w = model.decoder_column(i);
        let along = linalg::dot(g, w);
        linalg::axpy(-along, w, g);
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub step: usize,
    pub main_loss: f64,
    pub aux_loss: f64,
    pub dead_latents: usize,
    pub flops_cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    /// Latents that had not fired for a full epoch when training stopped.
    pub final_dead: Vec<usize>,
    pub epochs_completed: usize,
    /// Mean per-dimension variance of the training rows; divides the main loss.
    pub main_normalizer: f64,
}

/// Parameter deltas computed but not yet applied.
#[derive(Debug, Clone)]
pub struct PreparedStep {
    pub losses: Losses,
    pub delta: Gradients,
    pub fired: Vec<bool>,
    pub rows: usize,
    pub grad_norm: f64,
}

/// Single-threaded trainer. Identical inputs give bitwise identical weights.
pub struct Trainer {
    model: SaeModel,
    adam: AdamParams,
    states: [AdamState; 4],
    step: usize,
    samples_since_fired: Vec<u64>,
    train_rows: u64,
    main_scale: f64,
    log: TrainingLog,
    grads: Gradients,
}

impl Trainer {
    pub fn new(model: SaeModel, train_rows: usize, main_normalizer: f64) -> Self {
        let states = [
            AdamState::new(model.w_enc.len()),
            AdamState::new(model.b_enc.len()),
            AdamState::new(model.w_dec.len()),
            AdamState::new(model.b_dec.len()),
        ];
        let grads = Gradients::zeros(&model);
        let n = model.n();
        Self {
            model,
            adam: AdamParams::default(),
            states,
            step: 0,
            samples_since_fired: vec![0; n],
            train_rows: train_rows as u64,
            main_scale: 1.0 / main_normalizer,
            log: TrainingLog { main_normalizer, ..Default::default() },
            grads,
        }
    }

    pub fn model(&self) -> &SaeModel {
        &self.model
    }

    pub fn dead_mask(&self) -> Vec<bool> {
        self.samples_since_fired.iter().map(|&s| s >= self.train_rows).collect()
    }

    /// Loss, projected and clipped gradients, and the Adam update for one batch.
    pub fn prepare_step(&mut self, batch: &[f64]) -> Result<PreparedStep> {
        let dead = self.dead_mask();
        let mut fired = vec![false; self.model.n()];
        let scales = LossScales { main: self.main_scale, aux_per_batch: true };
        let losses = forward_backward(&self.model, batch, &dead, scales, Some(&mut self.grads), Some(&mut fired));
        if !losses.total.is_finite() {
            return Err(Error::TrainingDiverged { step: self.step, log: Box::new(self.log.clone()) });
        }

        project_decoder_gradient(&self.model, &mut self.grads.w_dec);
        let grad_norm = {
            let g = &mut self.grads;
            clip_global_norm(&mut [&mut g.w_enc, &mut g.b_enc, &mut g.w_dec, &mut g.b_dec], self.model.config.grad_clip)
        };

        let lr = self.model.config.learning_rate;
        let t = self.step as u64 + 1;
        let mut delta = Gradients::zeros(&self.model);
        let m = &self.model;
        let g = &self.grads;
        let [s_we, s_be, s_wd, s_bd] = &mut self.states;
        s_we.delta(&self.adam, lr, t, &m.w_enc, &g.w_enc, &mut delta.w_enc);
        s_be.delta(&self.adam, lr, t, &m.b_enc, &g.b_enc, &mut delta.b_enc);
        s_wd.delta(&self.adam, lr, t, &m.w_dec, &g.w_dec, &mut delta.w_dec);
        s_bd.delta(&self.adam, lr, t, &m.b_dec, &g.b_dec, &mut delta.b_dec);
        // Adam rescales coordinates independently, which reintroduces a radial
        // component; strip it so the column update stays tangent.
        project_decoder_gradient(&self.model, &mut delta.w_dec);

        Ok(PreparedStep { losses, delta, fired, rows: batch.len() / self.model.dim, grad_norm })
    }

    /// Applies a prepared update, renormalizes the decoder and logs the step.
    pub fn commit(&mut self, prepared: PreparedStep) {
        let m = &mut self.model;
        let d = &prepared.delta;
        for (p, dp) in [
            (&mut m.w_enc, &d.w_enc),
            (&mut m.b_enc, &d.b_enc),
            (&mut m.w_dec, &d.w_dec),
            (&mut m.b_dec, &d.b_dec),
        ] {
            linalg::axpy(1.0, dp, p);
        }
        m.normalize_decoder();

        for (since, &f) in self.samples_since_fired.iter_mut().zip(&prepared.fired) {
            *since = if f { 0 } else { since.saturating_add(prepared.rows as u64) };
        }
        self.step += 1;
        let flops_step = 6.0 * m.n() as f64 * m.dim as f64 * prepared.rows as f64;
        let flops_cumulative = self.log.steps.last().map_or(0.0, |s| s.flops_cumulative) + flops_step;
        let dead_latents = self.samples_since_fired.iter().filter(|&&s| s >= self.train_rows).count();
        self.log.steps.push(StepRecord {
            step: self.step,
            main_loss: prepared.losses.main,
            aux_loss: prepared.losses.aux,
            dead_latents,
            flops_cumulative,
        });
    }

    pub fn step(&mut self, batch: &[f64]) -> Result<Losses> {
        let prepared = self.prepare_step(batch)?;
        let losses = prepared.losses;
        self.commit(prepared);
        Ok(losses)
    }

    pub fn finish(mut self, epochs_completed: usize) -> (SaeModel, TrainingLog) {
        self.log.epochs_completed = epochs_completed;
        self.log.final_dead = self.dead_mask().iter().enumerate().filter(|(_, &d)| d).map(|(i, _)| i).collect();
        (self.model, self.log)
    }
}

/// Mean over rows of (1/d)‖x − x̄‖².
pub fn mean_variance(corpus: &EmbeddingCorpus) -> f64 {
    let mean = linalg::column_mean(corpus);
    let total: f64 = corpus
        .rows()
        .map(|r| r.iter().zip(&mean).map(|(&v, m)| (v as f64 - m) * (v as f64 - m)).sum::<f64>())
        .sum();
    total / (corpus.len() as f64 * corpus.dim() as f64)
}

/// Trains a model from scratch on a normalized corpus.
///
/// Adam (β₁ = 0.9, β₂ = 0.999) at a constant learning rate with global-norm
/// gradient clipping. Each step projects decoder-column gradients onto the
/// tangent space of their column and renormalizes the columns afterwards. A
/// latent counts as dead once it has gone a full epoch of samples without
/// entering any top-k support.
pub fn train(corpus: &EmbeddingCorpus, config: &crate::SaeConfig) -> Result<(SaeModel, TrainingLog)> {
    config.validate()?;
    if corpus.norm_stats().is_none() {
        return Err(Error::Config("training expects a normalized corpus".into()));
    }
    let model = init_model(config, corpus)?;
    if config.epochs == 0 {
        return Ok((model, TrainingLog::default()));
    }
    let normalizer = mean_variance(corpus);
    if !(normalizer > 0.0) {
        return Err(Error::InvalidCorpus("training rows have zero variance".into()));
    }

    let d = corpus.dim();
    let mut trainer = Trainer::new(model, corpus.len(), normalizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size * d);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            for &r in chunk {
                batch.extend(corpus.row(r).iter().map(|&v| v as f64));
            }
            trainer.step(&batch)?;
        }
    }
    Ok(trainer.finish(config.epochs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SaeConfig;

    fn tiny() -> SaeModel {
        // d = 2, n = 4, k = 1, k_aux = 1
        let mut cfg = SaeConfig::new(1, 4);
        cfg.k_aux = 1;
        cfg.alpha = 0.5;
        SaeModel::from_parts(
            cfg,
            2,
            vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.5, 0.5],
            vec![0.0, 0.0, 0.0, -0.1],
            vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.6, 0.8],
            vec![0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_losses() {
        let m = tiny();
        // x1 = (2, 1): pre = (2, 1, -2, 1.4) -> keep latent 0 (2.0); x̂ = (2, 0); e = (0, 1)
        //   dead = {3}: aux pre 1.4 -> ê = 1.4 * (0.6, 0.8) = (0.84, 1.12); e - ê = (-0.84, -0.12)
        // x2 = (0, 3): pre = (0, 3, 0, 1.4) -> keep latent 1 (3.0); x̂ = (0, 3); e = 0
        //   ê = (0.84, 1.12); e - ê = (-0.84, -1.12)
        let batch = [2.0, 1.0, 0.0, 3.0];
        let l = compute_losses(&m, &batch, &[false, false, false, true]);
        let main = (1.0 / 2.0 + 0.0) / 2.0;
        let aux = ((0.84f64 * 0.84 + 0.12 * 0.12) + (0.84 * 0.84 + 1.12 * 1.12)) / 2.0;
        assert!((l.main - main).abs() < 1e-10);
        assert!((l.aux - aux).abs() < 1e-10);
        assert!((l.total - (main + 0.5 * aux)).abs() < 1e-10);
    }

    #[test]
    fn no_dead_latents_means_no_aux() {
        let m = tiny();
        let l = compute_losses(&m, &[2.0, 1.0, 0.0, 3.0], &[false; 4]);
        assert_eq!(l.aux, 0.0);
        assert_eq!(l.total, l.main);
    }

    #[test]
    fn perfect_reconstruction_leaves_only_aux() {
        let m = tiny();
        let l = compute_losses(&m, &[0.0, 3.0], &[true, false, false, true]);
        assert_eq!(l.main, 0.0);
        assert!((l.total - 0.5 * l.aux).abs() < 1e-15);
        assert!(l.aux > 0.0);
    }

    #[test]
    fn projected_gradient_is_tangent() {
        let m = tiny();
        let (_, mut g) = loss_and_gradients(&m, &[2.0, 1.0, 0.0, 3.0], &[false, false, true, true], LossScales::RAW);
        project_decoder_gradient(&m, &mut g.w_dec);
        for i in 0..4 {
            assert!(linalg::dot(&g.w_dec[i * 2..i * 2 + 2], m.decoder_column(i)).abs() < 1e-12);
        }
    }
}
