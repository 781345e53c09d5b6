//! Query embedding: fetch (or recall) the raw embedding of a text, then apply
//! the corpus normalization.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use saerch_core::corpus::NormStats;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::EmbeddingClient;
use crate::error::{Error, Result};

pub fn text_key(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Least-recently-used map from text hash to raw embedding.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingCache {
    capacity: usize,
    tick: u64,
    entries: HashMap<String, (u64, Vec<f64>)>,
    order: BTreeMap<u64, String>,
}

#[derive(Serialize, Deserialize)]
struct StoredCache {
    capacity: usize,
    /// Oldest first.
    entries: Vec<(String, Vec<f64>)>,
}

impl EmbeddingCache {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&mut self, text: &str) -> Option<Vec<f64>> {
        let key = text_key(text);
        self.tick += 1;
        let tick = self.tick;
        let (old, v) = self.entries.get_mut(&key)?;
        self.order.remove(old);
        *old = tick;
        self.order.insert(tick, key);
        Some(v.clone())
    }

    pub fn insert(&mut self, text: &str, vector: Vec<f64>) {
        self.insert_key(text_key(text), vector);
    }

    fn insert_key(&mut self, key: String, vector: Vec<f64>) {
        if self.capacity == 0 {
            return;
        }
        self.tick += 1;
        if let Some((old, _)) = self.entries.remove(&key) {
            self.order.remove(&old);
        }
        self.entries.insert(key.clone(), (self.tick, vector));
        self.order.insert(self.tick, key);
        while self.entries.len() > self.capacity {
            let (_, oldest) = self.order.pop_first().expect("order tracks entries");
            self.entries.remove(&oldest);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries = self.order.values().map(|k| (k.clone(), self.entries[k].1.clone())).collect();
        crate::formats::write_json(path, &StoredCache { capacity: self.capacity, entries })
    }

    /// Loads a saved cache; a missing file gives an empty cache.
    pub fn load(path: &Path, capacity: usize) -> Result<Self> {
        let mut cache = Self::new(capacity);
        if !path.exists() {
            return Ok(cache);
        }
        let stored: StoredCache = crate::formats::read_json(path)?;
        for (k, v) in stored.entries {
            cache.insert_key(k, v);
        }
        Ok(cache)
    }
}

/// Normalized query embeddings with a shared cache. Safe to share across threads.
pub struct QueryEmbedder {
    client: Option<Box<dyn EmbeddingClient>>,
    stats: NormStats,
    cache: Mutex<EmbeddingCache>,
    cache_path: Option<PathBuf>,
}

impl QueryEmbedder {
    pub fn new(client: Option<Box<dyn EmbeddingClient>>, stats: NormStats, cache: EmbeddingCache) -> Self {
        Self { client, stats, cache: Mutex::new(cache), cache_path: None }
    }

    /// Persist the cache to `path` after every miss.
    pub fn persist_to(mut self, path: PathBuf) -> Self {
        self.cache_path = Some(path);
        self
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn raw(&self, text: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.cache.lock().unwrap().get(text) {
            return Ok(v);
        }
        let client = self.client.as_ref().ok_or_else(|| Error::EmbedUnavailable(text.to_string()))?;
        let v = client.embed_raw(&[text.to_string()])?.pop().expect("one text, one vector");
        if v.len() != self.stats.dim() {
            return Err(Error::Core(saerch_core::Error::DimensionMismatch { expected: self.stats.dim(), actual: v.len() }));
        }
        let mut cache = self.cache.lock().unwrap();
        cache.insert(text, v.clone());
        if let Some(path) = &self.cache_path {
            if let Err(e) = cache.save(path) {
                log::warn!("could not persist embedding cache: {e}");
            }
        }
        Ok(v)
    }

    pub fn embed_query(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.stats.normalize(&self.raw(text)?))
    }
}

impl saerch_core::steering::Embedder for QueryEmbedder {
    fn embed(&self, text: &str) -> saerch_core::Result<Vec<f64>> {
        self.embed_query(text).map_err(|e| match e {
            Error::Core(c) => c,
            other => saerch_core::Error::Client(other.to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lru_eviction() {
        let mut c = EmbeddingCache::new(2);
        c.insert("a", vec![1.0]);
        c.insert("b", vec![2.0]);
        assert!(c.get("a").is_some());
        c.insert("c", vec![3.0]);
        assert!(c.get("b").is_none());
        assert_eq!(c.get("a"), Some(vec![1.0]));
        assert_eq!(c.get("c"), Some(vec![3.0]));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn persisted_order_survives() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.json");
        let mut c = EmbeddingCache::new(2);
        c.insert("a", vec![1.0]);
        c.insert("b", vec![2.0]);
        c.get("a");
        c.save(&path).unwrap();
        let mut back = EmbeddingCache::load(&path, 2).unwrap();
        back.insert("c", vec![3.0]);
        assert!(back.get("b").is_none());
        assert!(back.get("a").is_some());
    }
}
