//! Labels for whole families.
//!
//! The member labels are summarised into one superfeature label, which is then
//! scored like a feature label: positives are drawn evenly from the top decile
//! of each child's activations, negatives from documents on which no member
//! fires.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;

use super::families::Family;
use crate::autointerp::{
    complete_label, feature_rng, render, score_label_as, ExampleDoc, FeatureLabel, InterpScore, PredictorSet, Role,
    SUPERFEATURE_TEMPLATE,
};
use crate::catalog::FeatureCatalog;
use crate::corpus::DocumentRecord;
use crate::{Error, Result};

pub fn superfeature_prompt(member_labels: &[&str], subject: &str) -> String {
    let descriptions: Vec<String> = member_labels.iter().map(|l| format!("- {l}")).collect();
    render(SUPERFEATURE_TEMPLATE, &[("subject", subject), ("descriptions", &descriptions.join("\n"))])
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FamilyLabel {
    pub family_id: usize,
    pub label: String,
    pub score: InterpScore,
}

/// Held-out documents for a family label.
///
/// `columns[i]` lists (row, activation) for feature `i`. `per_side` is the
/// number of positives and of negatives.
pub fn family_predictor_set(
    family: &Family,
    columns: &[Vec<(usize, f64)>],
    docs: &[DocumentRecord],
    per_side: usize,
    seed: u64,
) -> Result<PredictorSet> {
    let mut rng = feature_rng(seed ^ 0xFA417, family.id);
    let children = if family.children.is_empty() { core::slice::from_ref(&family.parent) } else { &family.children[..] };
    let mut picked = BTreeSet::new();
    let mut positives = Vec::new();
    let quota = per_side.div_ceil(children.len());
    for &c in children {
        let mut col = columns[c].clone();
        col.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let decile = col.len().div_ceil(10).max(quota.min(col.len()));
        let pool: Vec<&(usize, f64)> = col[..decile].iter().filter(|p| !picked.contains(&p.0)).collect();
        for &&(row, v) in pool.choose_multiple(&mut rng, quota) {
            if positives.len() < per_side && picked.insert(row) {
                positives.push((row, v));
            }
        }
    }
    if positives.len() < per_side {
        return Err(Error::TooSparse { feature: family.parent, active: positives.len() });
    }
    let fired: BTreeSet<usize> =
        family.members().iter().flat_map(|&m| columns[m].iter().map(|p| p.0)).collect();
    let silent: Vec<usize> = (0..docs.len()).filter(|r| !fired.contains(r)).collect();
    if silent.len() < per_side {
        return Err(Error::TooDense { feature: family.parent, inactive: silent.len() });
    }
    let mut negatives: Vec<usize> = silent.choose_multiple(&mut rng, per_side).copied().collect();
    negatives.sort_unstable();
    positives.sort_by_key(|p| p.0);
    let doc = |row: usize, activation: f64| ExampleDoc {
        row,
        doc_id: docs[row].doc_id.clone(),
        text: docs[row].abstract_text.clone(),
        activation,
    };
    Ok(PredictorSet {
        positives: positives.into_iter().map(|(r, v)| doc(r, v)).collect(),
        negatives: negatives.into_iter().map(|r| doc(r, 0.0)).collect(),
    })
}

/// Labels and scores one family. Requests carry the family id as subject id.
///
/// A family whose members have no labels yet fails with `UnknownFeature`.
pub fn label_family<C: crate::autointerp::CompletionClient + ?Sized>(
    family: &Family,
    catalog: &FeatureCatalog,
    columns: &[Vec<(usize, f64)>],
    docs: &[DocumentRecord],
    client: &C,
    subject: &str,
    per_side: usize,
    seed: u64,
) -> Result<FamilyLabel> {
    let members = family.members();
    let mut labels = Vec::with_capacity(members.len());
    for &m in &members {
        labels.push(catalog.label(m).ok_or(Error::UnknownFeature(m))?);
    }
    let label = if family.children.len() == 1 {
        // nothing to summarise beyond the child itself
        String::from(labels[1])
    } else {
        let prompt = superfeature_prompt(&labels, subject);
        complete_label(client, Role::Superfeature, family.id, &prompt)?.0
    };
    let held_out = family_predictor_set(family, columns, docs, per_side, seed)?;
    let as_feature = FeatureLabel { feature_id: family.id, label: label.clone(), interpreter_transcript: String::new() };
    let score = score_label_as(Role::FamilyPredictor, &as_feature, &held_out, client, subject, seed)?;
    Ok(FamilyLabel { family_id: family.id, label, score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn docs(n: usize) -> Vec<DocumentRecord> {
        (0..n)
            .map(|i| DocumentRecord { doc_id: format!("d{i}"), abstract_text: format!("text {i}"), ..Default::default() })
            .collect()
    }

    fn family() -> Family {
        Family { id: 7, parent: 0, children: vec![1, 2], iteration: 1, edges: vec![], superfeature_label: None, metrics: None }
    }

    #[test]
    fn positives_split_between_children() {
        let mut cols = vec![Vec::new(); 3];
        for r in 0..40 {
            cols[0].push((r, 1.0));
        }
        for r in 0..20 {
            cols[1].push((r, r as f64));
        }
        for r in 20..40 {
            cols[2].push((r, r as f64));
        }
        let set = family_predictor_set(&family(), &cols, &docs(60), 4, 1).unwrap();
        let from_1 = set.positives.iter().filter(|d| d.row < 20).count();
        assert_eq!(from_1, 2);
        assert!(set.positives.iter().all(|d| d.row == 18 || d.row == 19 || d.row == 38 || d.row == 39));
        assert!(set.negatives.iter().all(|d| d.row >= 40));
    }

    #[test]
    fn prompt_lists_members() {
        let p = superfeature_prompt(&["stars", "red giants"], "astronomy");
        assert!(p.contains("- stars\n- red giants"));
        assert!(!p.contains('{'));
    }
}
