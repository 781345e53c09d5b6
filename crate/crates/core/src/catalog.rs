//! Per-feature catalog: decoder direction, activation statistics, label and scores.

use alloc::string::String;
use alloc::vec::Vec;

use crate::metrics::FeatureStats;
use crate::model::SaeModel;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureEntry {
    pub id: usize,
    pub decoder_direction: Vec<f64>,
    pub density: f64,
    pub mean_nonzero_activation: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub label: Option<String>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub pearson: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub f1: Option<f64>,
}

impl FeatureEntry {
    /// Labelled and scoring at or above both thresholds.
    pub fn passes(&self, min_f1: f64, min_pearson: f64) -> bool {
        self.label.is_some()
            && self.f1.is_some_and(|f| f >= min_f1)
            && self.pearson.is_some_and(|p| p >= min_pearson)
    }
}

/// A feature the labelling pipeline could not finish, with the reason.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkippedFeature {
    pub id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureCatalog {
    pub dim: usize,
    pub features: Vec<FeatureEntry>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub skipped: Vec<SkippedFeature>,
}

impl FeatureCatalog {
    /// Unlabelled catalog straight from a model and its corpus statistics.
    pub fn from_model(model: &SaeModel, stats: &FeatureStats) -> Self {
        let features = (0..model.n())
            .map(|i| FeatureEntry {
                id: i,
                decoder_direction: model.decoder_column(i).to_vec(),
                density: stats.density[i],
                mean_nonzero_activation: stats.mean_nonzero_activation[i],
                label: None,
                pearson: None,
                f1: None,
            })
            .collect();
        Self { dim: model.dim, features, skipped: Vec::new() }
    }

    /// Catalog of bare directions (e.g. for matching two models).
    pub fn from_directions(model: &SaeModel) -> Self {
        let features = (0..model.n())
            .map(|i| FeatureEntry {
                id: i,
                decoder_direction: model.decoder_column(i).to_vec(),
                density: 0.0,
                mean_nonzero_activation: 0.0,
                label: None,
                pearson: None,
                f1: None,
            })
            .collect();
        Self { dim: model.dim, features, skipped: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&FeatureEntry> {
        self.features.get(id).filter(|f| f.id == id).or_else(|| self.features.iter().find(|f| f.id == id))
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.get(id).and_then(|f| f.label.as_deref())
    }

    pub fn densities(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.density).collect()
    }

    /// Mask of features passing the interpretability filter, indexed by id.
    pub fn interpretable_mask(&self, min_f1: f64, min_pearson: f64) -> Vec<bool> {
        let n = self.features.iter().map(|f| f.id + 1).max().unwrap_or(0);
        let mut mask = alloc::vec![false; n];
        for f in &self.features {
            mask[f.id] = f.passes(min_f1, min_pearson);
        }
        mask
    }
}
