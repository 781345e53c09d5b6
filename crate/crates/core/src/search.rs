//! Brute-force cosine retrieval with optional feature steering.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::analysis::FamilyForest;
use crate::catalog::FeatureCatalog;
use crate::corpus::{DocumentRecord, EmbeddingCorpus};
use crate::model::SaeModel;
use crate::steering::{apply_intervention, Intervention, SteeredEmbedding};
use crate::{linalg, Error, Result};

/// Immutable retrieval state: unit-normalized corpus rows plus the model,
/// catalog and families used to describe and steer queries.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    dim: usize,
    unit_rows: Vec<f32>,
    docs: Vec<DocumentRecord>,
    model: SaeModel,
    catalog: FeatureCatalog,
    forest: FamilyForest,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchHit {
    pub row: usize,
    pub doc_id: String,
    pub title: String,
    pub score: f64,
    pub year: Option<i32>,
    pub citation_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QueryFeature {
    pub id: usize,
    pub label: Option<String>,
    pub activation: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchResult {
    pub hits: Vec<SearchHit>,
    /// Active features of the query, strongest first.
    pub query_features: Vec<QueryFeature>,
    /// Cosine between reconstructed and steered query; only set by steering.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub fidelity: Option<f64>,
}

/// Edits applied to a query before retrieval.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SteerEdits {
    #[cfg_attr(feature = "serde", serde(default))]
    pub edits: BTreeMap<usize, f64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub family_edits: BTreeMap<usize, f64>,
    #[cfg_attr(feature = "serde", serde(default = "default_top_k"))]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    10
}

impl Default for SteerEdits {
    fn default() -> Self {
        Self { edits: BTreeMap::new(), family_edits: BTreeMap::new(), top_k: default_top_k() }
    }
}

impl SearchIndex {
    /// Builds the index; the corpus must already be normalized with the model's statistics.
    pub fn build(corpus: &EmbeddingCorpus, model: SaeModel, catalog: FeatureCatalog, forest: FamilyForest) -> Result<Self> {
        if corpus.dim() != model.dim {
            return Err(Error::Config(alloc::format!(
                "corpus dimension {} does not match model dimension {}",
                corpus.dim(),
                model.dim
            )));
        }
        let mut unit_rows = Vec::with_capacity(corpus.len() * corpus.dim());
        for (r, row) in corpus.rows().enumerate() {
            let norm = libm::sqrt(row.iter().map(|&v| v as f64 * v as f64).sum::<f64>());
            if norm == 0.0 {
                return Err(Error::ZeroEmbedding { doc_id: corpus.doc(r).doc_id.clone() });
            }
            unit_rows.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        }
        Ok(Self { dim: corpus.dim(), unit_rows, docs: corpus.docs().to_vec(), model, catalog, forest })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model(&self) -> &SaeModel {
        &self.model
    }

    pub fn catalog(&self) -> &FeatureCatalog {
        &self.catalog
    }

    pub fn forest(&self) -> &FamilyForest {
        &self.forest
    }

    pub fn docs(&self) -> &[DocumentRecord] {
        &self.docs
    }

    pub fn unit_row(&self, row: usize) -> &[f32] {
        &self.unit_rows[row * self.dim..(row + 1) * self.dim]
    }

    fn check_query(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: q.len() });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("query embedding is not finite".into()));
        }
        Ok(())
    }

    /// Top `top_k` rows by cosine; ties broken by ascending doc id.
    pub fn rank(&self, q: &[f64], top_k: usize) -> Result<Vec<SearchHit>> {
        self.check_query(q)?;
        let qn = linalg::norm(q);
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .map(|r| {
                let dot: f64 = self.unit_row(r).iter().zip(q).map(|(&a, &b)| a as f64 * b).sum();
                (if qn > 0.0 { dot / qn } else { 0.0 }, r)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            b.0.total_cmp(&a.0).then_with(|| self.docs[a.1].doc_id.cmp(&self.docs[b.1].doc_id))
        };
        let keep = top_k.min(scored.len());
        if keep == 0 {
            return Ok(Vec::new());
        }
        if keep < scored.len() {
            scored.select_nth_unstable_by(keep - 1, cmp);
            scored.truncate(keep);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(score, r)| {
                let d = &self.docs[r];
                SearchHit {
                    row: r,
                    doc_id: d.doc_id.clone(),
                    title: d.title.clone(),
                    score,
                    year: d.year,
                    citation_count: d.citation_count,
                }
            })
            .collect())
    }

    pub fn query_features(&self, q: &[f64]) -> Vec<QueryFeature> {
        let h = self.model.encode(q);
        let mut feats: Vec<QueryFeature> = h
            .iter()
            .map(|(id, activation)| QueryFeature { id, label: self.catalog.label(id).map(String::from), activation })
            .collect();
        feats.sort_by(|a, b| b.activation.total_cmp(&a.activation).then(a.id.cmp(&b.id)));
        feats
    }

    /// Plain retrieval on the (normalized) query embedding itself.
    pub fn search(&self, q: &[f64], top_k: usize) -> Result<SearchResult> {
        let hits = self.rank(q, top_k)?;
        Ok(SearchResult { hits, query_features: self.query_features(q), fidelity: None })
    }

    /// Per-feature edits with family edits spread uniformly over the members;
    /// explicit feature edits win over family edits.
    pub fn expand_edits(&self, req: &SteerEdits) -> Result<BTreeMap<usize, f64>> {
        let mut out = BTreeMap::new();
        for (&fid, &w) in &req.family_edits {
            let family = self.forest.get(fid).ok_or(Error::UnknownFamily(fid))?;
            for m in family.members() {
                out.insert(m, w);
            }
        }
        for (&id, &w) in &req.edits {
            out.insert(id, w);
        }
        for (&id, w) in &out {
            if id >= self.model.n() {
                return Err(Error::UnknownFeature(id));
            }
            if !w.is_finite() {
                return Err(Error::Config(alloc::format!("edit weight for feature {id} is not finite")));
            }
        }
        Ok(out)
    }

    pub fn steer(&self, q: &[f64], req: &SteerEdits) -> Result<(SearchResult, SteeredEmbedding)> {
        if req.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        self.check_query(q)?;
        let edits = self.expand_edits(req)?;
        let steered = apply_intervention(&self.model, q, &Intervention::direct(edits))?;
        let hits = self.rank(&steered.modified, req.top_k)?;
        let result = SearchResult { hits, query_features: self.query_features(q), fidelity: Some(steered.fidelity) };
        Ok((result, steered))
    }
}
