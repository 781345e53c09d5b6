mod common;

use std::collections::BTreeSet;

use rand::Rng;
use saerch_core::analysis::{annotate_metrics, build_cooccurrence, extract_families, maximum_spanning_forest, FamilyConfig};
use saerch_core::SparseActivation;

/// Decodes a Prüfer sequence over `n` nodes into its tree's edges.
fn prufer_tree(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &s in seq {
        let leaf = (0..n).find(|&i| degree[i] == 1).unwrap();
        edges.push((leaf, s));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| degree[i] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Maximum spanning-tree weight over all n^(n−2) labelled trees.
fn brute_force_max(n: usize, weight: &[Vec<Option<f64>>]) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut seq = vec![0usize; n - 2];
    loop {
        let total: Option<f64> = prufer_tree(&seq, n).iter().map(|&(a, b)| weight[a][b]).sum();
        if let Some(t) = total {
            best = Some(best.map_or(t, |b: f64| b.max(t)));
        }
        // next sequence in base n
        let mut pos = 0;
        loop {
            if pos == seq.len() {
                return best;
            }
            seq[pos] += 1;
            if seq[pos] < n {
                break;
            }
            seq[pos] = 0;
            pos += 1;
        }
    }
}

#[test]
fn mst_matches_exhaustive_search() {
    const N: usize = 8;
    let mut r = common::rng(2024);
    let mut tested = 0;
    while tested < 20 {
        let mut weight = vec![vec![None; N]; N];
        let mut edges = Vec::new();
        for a in 0..N {
            for b in a + 1..N {
                if r.random_bool(0.7) {
                    let w: f64 = r.random_range(0.0..1.0);
                    weight[a][b] = Some(w);
                    weight[b][a] = Some(w);
                    edges.push((a, b, w));
                }
            }
        }
        let Some(best) = brute_force_max(N, &weight) else { continue }; // disconnected
        let tree = maximum_spanning_forest(N, &edges);
        assert_eq!(tree.len(), N - 1);
        let total: f64 = tree.iter().map(|e| e.2).sum();
        assert!((total - best).abs() < 1e-12, "graph {tested}: {total} vs {best}");
        tested += 1;
    }
}

#[test]
fn prufer_decoding_is_a_tree() {
    let t = prufer_tree(&[3, 3, 3, 4], 6);
    assert_eq!(t, vec![(0, 3), (1, 3), (2, 3), (3, 4), (4, 5)]);
}

/// Ground truth: parents 0..3, children 3 + 4f .. 7 + 4f, noise 15..20.
fn planted_activations(docs: usize, seed: u64) -> (Vec<SparseActivation>, Vec<BTreeSet<usize>>) {
    let mut r = common::rng(seed);
    let mut acts = Vec::with_capacity(docs);
    for _ in 0..docs {
        let mut fired = Vec::new();
        if r.random_bool(0.75) {
            let f = r.random_range(0..3);
            fired.push(f);
            if r.random_bool(0.8) {
                fired.push(3 + 4 * f + r.random_range(0..4));
            }
        } else {
            fired.push(15 + r.random_range(0..5));
        }
        let values = fired.iter().map(|_| r.random_range(0.5..2.0)).collect();
        acts.push(SparseActivation { indices: fired, values });
    }
    let truth = (0..3).map(|f| std::iter::once(f).chain((0..4).map(|c| 3 + 4 * f + c)).collect()).collect();
    (acts, truth)
}

fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    a.intersection(b).count() as f64 / a.union(b).count() as f64
}

#[test]
fn planted_families_are_recovered() {
    let (acts, truth) = planted_activations(4000, 9);
    let n = 20;
    let graphs = build_cooccurrence(&acts, n, 1e-6, 0.1);
    let densities: Vec<f64> = graphs.frequency.iter().map(|&f| f as f64 / acts.len() as f64).collect();
    let include = vec![true; n];
    let mut forest = extract_families(&graphs, &densities, &include, &FamilyConfig::default());
    annotate_metrics(&mut forest, &graphs, &densities, &include);
    assert_eq!(forest.families.len(), 3);
    for t in &truth {
        let best = forest
            .families
            .iter()
            .map(|f| jaccard(t, &f.members().into_iter().collect()))
            .fold(0.0, f64::max);
        assert!(best >= 0.9, "family {t:?} recovered with Jaccard {best}");
    }
    for f in &forest.families {
        let m = f.metrics.as_ref().unwrap();
        assert!(m.r_pc.is_infinite() && m.r_pc_unbounded, "children never co-occur");
    }
}
