#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use saerch_core::{SaeConfig, SaeModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let mut v = gaussian(rng, d);
    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Random model with unit decoder columns and a small positive encoder bias.
pub fn random_model(d: usize, n: usize, k: usize, seed: u64) -> SaeModel {
    let mut r = rng(seed);
    let w_dec: Vec<f64> = (0..n).flat_map(|_| unit(&mut r, d)).collect();
    let w_enc = gaussian(&mut r, n * d).into_iter().map(|v| v / (d as f64).sqrt()).collect();
    let b_enc = (0..n).map(|_| r.random_range(0.0..0.2)).collect();
    let b_dec = gaussian(&mut r, d).into_iter().map(|v| 0.1 * v).collect();
    SaeModel::from_parts(SaeConfig::new(k, n), d, w_enc, b_enc, w_dec, b_dec).unwrap()
}
