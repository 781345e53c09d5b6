mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use saerch_core::analysis::FamilyForest;
use saerch_core::search::{SearchIndex, SteerEdits};
use saerch_core::steering::{apply_intervention, iterative_optimize, reencode_objective, Intervention, InterventionMode, IterativeParams};
use saerch_core::{DocumentRecord, EmbeddingCorpus, FeatureCatalog};

const D: usize = 12;

fn docs(rows: &[Vec<f64>], ids: &[usize]) -> EmbeddingCorpus {
    let data = rows.iter().flatten().map(|&v| v as f32).collect();
    let records = ids
        .iter()
        .map(|i| DocumentRecord {
            doc_id: format!("doc{i:03}"),
            title: format!("title {i}"),
            abstract_text: format!("abstract {i}"),
            ..Default::default()
        })
        .collect();
    EmbeddingCorpus::new(D, data, records).unwrap()
}

fn index(rows: &[Vec<f64>], ids: &[usize], seed: u64) -> SearchIndex {
    let model = common::random_model(D, 24, 4, seed);
    let catalog = FeatureCatalog::from_directions(&model);
    SearchIndex::build(&docs(rows, ids), model, catalog, FamilyForest::default()).unwrap()
}

/// Cosine computed from the stored f32 rows in f64, sorted by score then doc id.
fn oracle(rows: &[Vec<f64>], ids: &[usize], q: &[f64]) -> Vec<(String, f64)> {
    let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut scored: Vec<(String, f64)> = rows
        .iter()
        .zip(ids)
        .map(|(r, i)| {
            let r32: Vec<f64> = r.iter().map(|&v| v as f32 as f64).collect();
            let rn = r32.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = r32.iter().zip(q).map(|(a, b)| a * b).sum();
            (format!("doc{i:03}"), dot / (rn * qn))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

#[test]
fn ranking_matches_exhaustive_sort() {
    let mut r = common::rng(11);
    let rows: Vec<Vec<f64>> = (0..50).map(|_| common::gaussian(&mut r, D)).collect();
    let ids: Vec<usize> = (0..50).collect();
    let idx = index(&rows, &ids, 3);
    for _ in 0..20 {
        let q = common::gaussian(&mut r, D);
        let top_k = r.random_range(1..=50);
        let got = idx.rank(&q, top_k).unwrap();
        let want = oracle(&rows, &ids, &q);
        assert_eq!(got.len(), top_k);
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.doc_id, w.0);
            assert!((g.score - w.1).abs() < 1e-6);
        }
    }
    for (i, row) in rows.iter().enumerate() {
        let hit = &idx.rank(row, 1).unwrap()[0];
        assert_eq!(hit.row, i);
        assert!((hit.score - 1.0).abs() <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ranking_ignores_corpus_order(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| common::gaussian(&mut r, D)).collect();
        let ids: Vec<usize> = (0..30).collect();
        let mut perm = ids.clone();
        perm.shuffle(&mut r);
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let q = common::gaussian(&mut r, D);
        let a: Vec<String> = index(&rows, &ids, 1).rank(&q, 10).unwrap().into_iter().map(|h| h.doc_id).collect();
        let b: Vec<String> = index(&shuffled, &perm, 1).rank(&q, 10).unwrap().into_iter().map(|h| h.doc_id).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn empty_steer_ranks_the_reconstruction() {
    let mut r = common::rng(5);
    let rows: Vec<Vec<f64>> = (0..40).map(|_| common::gaussian(&mut r, D)).collect();
    let ids: Vec<usize> = (0..40).collect();
    let idx = index(&rows, &ids, 8);
    let q = common::gaussian(&mut r, D);
    let (result, steered) = idx.steer(&q, &SteerEdits::default()).unwrap();
    assert_eq!(result.fidelity, Some(1.0));
    let want = idx.rank(&steered.original, 10).unwrap();
    assert_eq!(result.hits, want);
}

#[test]
fn iterative_activation_lowers_objective() {
    let model = common::random_model(16, 32, 4, 77);
    let params = IterativeParams::default();
    let mut r = common::rng(99);
    let mut improved = 0;
    for _ in 0..100 {
        let x = common::gaussian(&mut r, 16);
        let h = model.encode(&x);
        let zeros: Vec<usize> = (0..32).filter(|&i| h.get(i) == 0.0).collect();
        let feature = zeros[r.random_range(0..zeros.len())];
        let mut target = h.to_dense(32);
        target[feature] = 2.0;
        let (latents, trace) = iterative_optimize(&model, &x, &target, &params).unwrap();
        assert_eq!(trace.len(), params.steps + 1);
        assert!((trace[params.steps] - reencode_objective(&model, &latents, &target)).abs() < 1e-9);
        if trace[params.steps] < trace[0] {
            improved += 1;
        }
    }
    assert!(improved >= 95, "{improved}/100 trials improved");
}

#[test]
fn iterative_intervention_reports_trace() {
    let model = common::random_model(16, 32, 4, 4);
    let x = common::gaussian(&mut common::rng(1), 16);
    let iv = Intervention { edits: BTreeMap::from([(3, 1.5)]), mode: InterventionMode::Iterative, ..Default::default() };
    let out = apply_intervention(&model, &x, &iv).unwrap();
    assert_eq!(out.trace.len(), 11);
    assert!(out.fidelity <= 1.0 + 1e-12);
}
