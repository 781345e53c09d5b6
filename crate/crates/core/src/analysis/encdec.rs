//! Encoder/decoder geometry: how closely each encoder row follows its decoder
//! column, and whether that tracks decoder crowding.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::cosine;
use crate::model::SaeModel;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderDecoderSimilarity {
    /// cos(encoder row i, decoder column i).
    pub self_cosine: Vec<f64>,
    /// max over j ≠ i of cos(decoder column i, decoder column j).
    pub max_neighbor_cosine: Vec<f64>,
    pub mean_self_cosine: f64,
    /// Spearman correlation between the two series; `None` if either is constant.
    pub spearman: Option<f64>,
}

pub fn encoder_decoder_similarity(model: &SaeModel) -> EncoderDecoderSimilarity {
    let n = model.n();
    let self_cosine: Vec<f64> = (0..n).map(|i| cosine(model.encoder_row(i), model.decoder_column(i))).collect();
    let mut max_neighbor_cosine = vec![f64::NEG_INFINITY; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = cosine(model.decoder_column(i), model.decoder_column(j));
            max_neighbor_cosine[i] = max_neighbor_cosine[i].max(c);
            max_neighbor_cosine[j] = max_neighbor_cosine[j].max(c);
        }
    }
    if n == 1 {
        max_neighbor_cosine[0] = 0.0;
    }
    let mean_self_cosine = self_cosine.iter().sum::<f64>() / n.max(1) as f64;
    let spearman = spearman(&self_cosine, &max_neighbor_cosine);
    EncoderDecoderSimilarity { self_cosine, max_neighbor_cosine, mean_self_cosine, spearman }
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    crate::autointerp::pearson(&average_ranks(xs), &average_ranks(ys))
}
