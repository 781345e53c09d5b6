//! Feature families from the co-occurrence graph.
//!
//! Each round builds a maximum spanning forest over the thresholded,
//! symmetrized `C_norm`, orients every edge from the denser feature to the
//! sparser one and reads families off the resulting DAG: every node with
//! outgoing edges is the parent of the set of nodes reachable from it. The
//! parents found in a round are removed before the next round, which exposes
//! finer families hidden beneath them. Families whose member sets overlap an
//! earlier family with Jaccard above the dedup threshold are dropped.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::cooccurrence::CoActivationGraphs;
use super::mst::maximum_spanning_forest;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FamilyConfig {
    pub iterations: usize,
    /// Families with Jaccard overlap above this with an earlier family are dropped.
    pub dedup_jaccard: f64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self { iterations: 3, dedup_jaccard: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FamilyMetrics {
    pub size: usize,
    /// Parent–child co-occurrence ratio; `+∞` when the children never co-occur
    /// with each other (or there is only one child).
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_util::extended_f64"))]
    pub r_pc: f64,
    pub r_pc_unbounded: bool,
    /// In-block over off-block mean of `C` (diagonal excluded), for the
    /// family's block in the greedy layout.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_util::extended_f64_opt", default))]
    pub c_block_ratio: Option<f64>,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_util::extended_f64_opt", default))]
    pub d_block_ratio: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub family_f1: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub family_pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Family {
    pub id: usize,
    pub parent: usize,
    /// Sorted ascending.
    pub children: Vec<usize>,
    /// 1-based round in which the family was found.
    pub iteration: usize,
    /// Directed spanning-tree edges (from, to, weight) inside the family.
    pub edges: Vec<(usize, usize, f64)>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub superfeature_label: Option<String>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub metrics: Option<FamilyMetrics>,
}

impl Family {
    /// Parent followed by children.
    pub fn members(&self) -> Vec<usize> {
        let mut m = Vec::with_capacity(self.children.len() + 1);
        m.push(self.parent);
        m.extend_from_slice(&self.children);
        m
    }

    pub fn size(&self) -> usize {
        self.children.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FamilyForest {
    pub families: Vec<Family>,
    /// Families kept per round after deduplication.
    pub new_per_iteration: Vec<usize>,
}

impl FamilyForest {
    pub fn get(&self, id: usize) -> Option<&Family> {
        self.families.iter().find(|f| f.id == id)
    }
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let sa: BTreeSet<usize> = a.iter().copied().collect();
    let sb: BTreeSet<usize> = b.iter().copied().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// True when `a` is the parent of the edge {a, b}: higher density, lower id on ties.
fn outranks(densities: &[f64], a: usize, b: usize) -> bool {
    match densities[a].total_cmp(&densities[b]) {
        core::cmp::Ordering::Greater => true,
        core::cmp::Ordering::Less => false,
        core::cmp::Ordering::Equal => a < b,
    }
}

/// Extracts feature families.
///
/// `include` marks the features allowed into the graph (the interpretability
/// filter); `densities` orients the edges.
pub fn extract_families(
    graphs: &CoActivationGraphs,
    densities: &[f64],
    include: &[bool],
    config: &FamilyConfig,
) -> FamilyForest {
    let n = graphs.n;
    let mut active: Vec<bool> = (0..n).map(|i| include.get(i).copied().unwrap_or(false)).collect();
    let mut forest = FamilyForest::default();

    for iteration in 1..=config.iterations {
        let edges = graphs.symmetric_edges(&active);
        let tree = maximum_spanning_forest(n, &edges);

        let mut out: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        let mut indegree = vec![0usize; n];
        for &(u, v, w) in &tree {
            let (p, c) = if outranks(densities, u, v) { (u, v) } else { (v, u) };
            out.entry(p).or_default().push((c, w));
            indegree[c] += 1;
        }
        for list in out.values_mut() {
            list.sort_by_key(|e| e.0);
        }

        // DFS from the roots; every node with children heads a (sub-)family.
        let roots: Vec<usize> = out.keys().copied().filter(|&p| indegree[p] == 0).collect();
        let mut heads = Vec::new();
        let mut seen = vec![false; n];
        for root in roots {
            let mut stack = vec![root];
            while let Some(node) = stack.pop() {
                if seen[node] {
                    continue;
                }
                seen[node] = true;
                if let Some(children) = out.get(&node) {
                    heads.push(node);
                    for &(c, _) in children.iter().rev() {
                        stack.push(c);
                    }
                }
            }
        }

        let mut kept = 0;
        for &head in &heads {
            let mut members = BTreeSet::new();
            let mut family_edges = Vec::new();
            let mut stack = vec![head];
            while let Some(node) = stack.pop() {
                if let Some(children) = out.get(&node) {
                    for &(c, w) in children {
                        if members.insert(c) {
                            family_edges.push((node, c, w));
                            stack.push(c);
                        }
                    }
                }
            }
            let children: Vec<usize> = members.into_iter().collect();
            let mut all = children.clone();
            all.push(head);
            let duplicate =
                forest.families.iter().any(|f| jaccard(&f.members(), &all) > config.dedup_jaccard);
            if duplicate {
                continue;
            }
            family_edges.sort_by_key(|a| (a.0, a.1));
            forest.families.push(Family {
                id: forest.families.len(),
                parent: head,
                children,
                iteration,
                edges: family_edges,
                superfeature_label: None,
                metrics: None,
            });
            kept += 1;
        }
        forest.new_per_iteration.push(kept);

        if heads.is_empty() {
            // nothing left to peel off; later rounds would see the same graph
            for _ in iteration..config.iterations {
                forest.new_per_iteration.push(0);
            }
            break;
        }
        for &h in &heads {
            active[h] = false;
        }
    }
    forest
}

/// Block assignment used for the in-block/off-block ratios.
///
/// Families are visited by descending size (then id); each takes the features
/// not already claimed by an earlier block. Included features left over are
/// appended by descending density and belong to no block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    /// Row/column permutation of the included features.
    pub order: Vec<usize>,
    /// Features assigned to each family, keyed by family id.
    pub blocks: BTreeMap<usize, Vec<usize>>,
}

impl BlockLayout {
    pub fn greedy(forest: &FamilyForest, densities: &[f64], include: &[bool]) -> Self {
        let mut fams: Vec<&Family> = forest.families.iter().collect();
        fams.sort_by(|a, b| b.size().cmp(&a.size()).then(a.id.cmp(&b.id)));
        let mut claimed = vec![false; include.len()];
        let mut order = Vec::new();
        let mut blocks = BTreeMap::new();
        for f in fams {
            let mut block = Vec::new();
            for m in f.members() {
                if m < claimed.len() && !claimed[m] {
                    claimed[m] = true;
                    block.push(m);
                }
            }
            order.extend_from_slice(&block);
            blocks.insert(f.id, block);
        }
        let mut rest: Vec<usize> = (0..include.len()).filter(|&i| include[i] && !claimed[i]).collect();
        rest.sort_by(|&a, &b| densities[b].total_cmp(&densities[a]).then(a.cmp(&b)));
        order.extend(rest);
        Self { order, blocks }
    }
}

fn block_ratio(block: &[usize], universe: &[usize], value: impl Fn(usize, usize) -> f64) -> Option<f64> {
    if block.len() < 2 {
        return None;
    }
    let inside: BTreeSet<usize> = block.iter().copied().collect();
    let (mut in_sum, mut in_count) = (0.0, 0usize);
    let (mut off_sum, mut off_count) = (0.0, 0usize);
    for &i in block {
        for &j in universe {
            if i == j {
                continue;
            }
            if inside.contains(&j) {
                in_sum += value(i, j);
                in_count += 1;
            } else {
                off_sum += value(i, j);
                off_count += 1;
            }
        }
    }
    let in_mean = in_sum / in_count as f64;
    if off_count == 0 {
        return None;
    }
    let off_mean = off_sum / off_count as f64;
    if off_mean == 0.0 {
        return if in_mean > 0.0 { Some(f64::INFINITY) } else { None };
    }
    Some(in_mean / off_mean)
}

/// Structure metrics for one family.
///
/// `R(p, 𝒞)` is the mean co-occurrence of each child with the parent over the
/// mean co-occurrence of ordered child pairs. The block ratios use the
/// family's block in `layout` against every other feature of the layout.
pub fn family_metrics(family: &Family, graphs: &CoActivationGraphs, layout: &BlockLayout) -> FamilyMetrics {
    let p = family.parent;
    let children = &family.children;
    let numer = children.iter().map(|&c| graphs.c(c, p) as f64).sum::<f64>() / children.len().max(1) as f64;
    let mut pair_sum = 0.0;
    let mut pairs = 0usize;
    for &a in children {
        for &b in children {
            if a != b {
                pair_sum += graphs.c(a, b) as f64;
                pairs += 1;
            }
        }
    }
    let (r_pc, r_pc_unbounded) = if pairs == 0 || pair_sum == 0.0 {
        (f64::INFINITY, true)
    } else {
        (numer / (pair_sum / pairs as f64), false)
    };

    let empty = Vec::new();
    let block = layout.blocks.get(&family.id).unwrap_or(&empty);
    FamilyMetrics {
        size: family.size(),
        r_pc,
        r_pc_unbounded,
        c_block_ratio: block_ratio(block, &layout.order, |i, j| graphs.c(i, j) as f64),
        d_block_ratio: block_ratio(block, &layout.order, |i, j| graphs.d(i, j)),
        family_f1: None,
        family_pearson: None,
    }
}

/// Fills `metrics` for every family using the greedy block layout.
pub fn annotate_metrics(forest: &mut FamilyForest, graphs: &CoActivationGraphs, densities: &[f64], include: &[bool]) {
    let layout = BlockLayout::greedy(forest, densities, include);
    for f in &mut forest.families {
        let m = family_metrics(f, graphs, &layout);
        let (f1, pearson) = f.metrics.as_ref().map_or((None, None), |old| (old.family_f1, old.family_pearson));
        f.metrics = Some(FamilyMetrics { family_f1: f1, family_pearson: pearson, ..m });
    }
}

/// Median of the finite values, `None` if there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[cfg(test)]
mod tests {
    use super::super::cooccurrence::build_cooccurrence;
    use super::*;
    use crate::model::SparseActivation;

    fn act(features: &[usize]) -> SparseActivation {
        SparseActivation { indices: features.to_vec(), values: vec![1.0; features.len()] }
    }

    /// Parent 0 with children 1, 2, 3 that fire only alongside it and never together.
    fn planted() -> Vec<SparseActivation> {
        let mut acts = Vec::new();
        for child in 1..=3 {
            for _ in 0..5 {
                acts.push(act(&[0, child]));
            }
        }
        for _ in 0..5 {
            acts.push(act(&[0]));
        }
        acts
    }

    #[test]
    fn single_planted_family() {
        let acts = planted();
        let g = build_cooccurrence(&acts, 4, 1e-6, 0.1);
        let dens: Vec<f64> = g.frequency.iter().map(|&f| f as f64 / acts.len() as f64).collect();
        let forest = extract_families(&g, &dens, &[true; 4], &FamilyConfig::default());
        assert_eq!(forest.families.len(), 1);
        assert_eq!(forest.families[0].parent, 0);
        assert_eq!(forest.families[0].children, vec![1, 2, 3]);
        assert_eq!(forest.new_per_iteration, vec![1, 0, 0]);
    }

    #[test]
    fn two_disconnected_families() {
        let mut acts = planted();
        for a in planted() {
            acts.push(SparseActivation { indices: a.indices.iter().map(|i| i + 4).collect(), values: a.values });
        }
        let g = build_cooccurrence(&acts, 8, 1e-6, 0.1);
        let dens: Vec<f64> = g.frequency.iter().map(|&f| f as f64 / acts.len() as f64).collect();
        let forest = extract_families(&g, &dens, &[true; 8], &FamilyConfig::default());
        assert_eq!(forest.families.len(), 2);
        assert_eq!(forest.families[0].members(), vec![0, 1, 2, 3]);
        assert_eq!(forest.families[1].members(), vec![4, 5, 6, 7]);
    }

    #[test]
    fn no_edges_no_families() {
        let acts = vec![act(&[0]), act(&[1]), act(&[2])];
        let g = build_cooccurrence(&acts, 3, 1e-6, 0.1);
        let forest = extract_families(&g, &[0.3; 3], &[true; 3], &FamilyConfig::default());
        assert!(forest.families.is_empty());
    }

    #[test]
    fn filter_excludes_features() {
        let acts = planted();
        let g = build_cooccurrence(&acts, 4, 1e-6, 0.1);
        let dens: Vec<f64> = g.frequency.iter().map(|&f| f as f64 / acts.len() as f64).collect();
        let forest = extract_families(&g, &dens, &[false, true, true, true], &FamilyConfig::default());
        assert!(forest.families.is_empty());
    }

    #[test]
    fn hand_counted_metrics() {
        // parent 0, children 1 and 2; C(1,0) = 4, C(2,0) = 2, C(1,2) = 1
        let acts = vec![act(&[0, 1, 2]), act(&[0, 1]), act(&[0, 1]), act(&[0, 1]), act(&[0, 2]), act(&[3])];
        let g = build_cooccurrence(&acts, 4, 1e-6, 0.1);
        let fam = Family {
            id: 0,
            parent: 0,
            children: vec![1, 2],
            iteration: 1,
            edges: vec![],
            superfeature_label: None,
            metrics: None,
        };
        let forest = FamilyForest { families: vec![fam.clone()], new_per_iteration: vec![1] };
        let dens = [5.0 / 6.0, 4.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0];
        let layout = BlockLayout::greedy(&forest, &dens, &[true; 4]);
        assert_eq!(layout.order, vec![0, 1, 2, 3]);
        let m = family_metrics(&fam, &g, &layout);
        // (4 + 2) / 2 over (1 + 1) / 2
        assert!((m.r_pc - 3.0).abs() < 1e-12);
        assert!(!m.r_pc_unbounded);
        // in-block off-diagonal: C01 C02 C10 C12 C20 C21 = 4 2 4 1 2 1 -> 14 / 6; off-block vs feature 3: all 0
        assert_eq!(m.c_block_ratio, Some(f64::INFINITY));
        assert_eq!(m.size, 3);
    }

    #[test]
    fn exclusive_children_are_unbounded() {
        let acts = planted();
        let g = build_cooccurrence(&acts, 4, 1e-6, 0.1);
        let dens: Vec<f64> = g.frequency.iter().map(|&f| f as f64 / acts.len() as f64).collect();
        let mut forest = extract_families(&g, &dens, &[true; 4], &FamilyConfig::default());
        annotate_metrics(&mut forest, &g, &dens, &[true; 4]);
        let m = forest.families[0].metrics.as_ref().unwrap();
        assert!(m.r_pc_unbounded && m.r_pc.is_infinite());
    }

    #[test]
    fn medians() {
        assert_eq!(median([3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median([4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median([]), None);
    }
}
