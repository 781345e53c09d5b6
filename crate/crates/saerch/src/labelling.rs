//! Catalog-wide labelling with bounded parallelism and a resumable journal.
//!
//! Each finished feature is appended to a JSON-lines journal as soon as it
//! completes. A rerun reads the journal first and only processes features it
//! does not mention, so an interrupted run resumes where it stopped. Client
//! failures are not journalled and are retried on the next run.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use saerch_core::autointerp::{label_feature, CompletionClient, LabelSettings, LabelledFeature};
use saerch_core::catalog::SkippedFeature;
use saerch_core::{DocumentRecord, FeatureCatalog};
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum JournalEntry {
    Labelled { feature_id: usize, result: LabelledFeature },
    Skipped { feature_id: usize, reason: String },
}

impl JournalEntry {
    pub fn feature_id(&self) -> usize {
        match self {
            JournalEntry::Labelled { feature_id, .. } | JournalEntry::Skipped { feature_id, .. } => *feature_id,
        }
    }
}

/// Reads a journal, ignoring a torn final line.
pub fn read_journal(path: &Path) -> Result<BTreeMap<usize, JournalEntry>> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let file = std::fs::File::open(path).at(path)?;
    for line in BufReader::new(file).lines() {
        let line = line.at(path)?;
        match serde_json::from_str::<JournalEntry>(&line) {
            Ok(e) => {
                out.insert(e.feature_id(), e);
            }
            Err(_) if !line.trim().is_empty() => log::warn!("{}: ignoring unreadable journal line", path.display()),
            Err(_) => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LabelRun<'a> {
    /// Per-feature (row, activation) columns over `docs`.
    pub columns: &'a [Vec<(usize, f64)>],
    pub docs: &'a [DocumentRecord],
    pub settings: LabelSettings,
    /// Features to label; all when empty.
    pub features: Vec<usize>,
    pub max_concurrency: usize,
}

enum Outcome {
    Journal(JournalEntry),
    Transient { feature_id: usize, reason: String },
}

fn run_one<C: CompletionClient + ?Sized>(id: usize, run: &LabelRun<'_>, client: &C) -> Outcome {
    match label_feature(id, &run.columns[id], run.docs, client, &run.settings) {
        Ok(result) => Outcome::Journal(JournalEntry::Labelled { feature_id: id, result }),
        Err(e @ saerch_core::Error::Client(_)) => Outcome::Transient { feature_id: id, reason: e.to_string() },
        Err(e) => Outcome::Journal(JournalEntry::Skipped { feature_id: id, reason: e.to_string() }),
    }
}

/// Labels and scores every requested feature, filling `catalog` in place.
///
/// Results are merged by feature id, so the catalog does not depend on the
/// order in which workers finish.
pub fn label_catalog<C: CompletionClient + Sync + ?Sized>(
    catalog: &mut FeatureCatalog,
    run: &LabelRun<'_>,
    client: &C,
    journal: Option<&Path>,
) -> Result<()> {
    let mut done = match journal {
        Some(p) => read_journal(p)?,
        None => BTreeMap::new(),
    };
    let wanted: Vec<usize> =
        if run.features.is_empty() { (0..run.columns.len()).collect() } else { run.features.clone() };
    if let Some(&bad) = wanted.iter().find(|&&id| id >= run.columns.len()) {
        return Err(saerch_core::Error::UnknownFeature(bad).into());
    }
    let todo: Vec<usize> = wanted.iter().copied().filter(|id| !done.contains_key(id)).collect();
    log::info!("labelling {} features ({} already journalled)", todo.len(), wanted.len() - todo.len());

    let mut writer = match journal {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).at(parent)?;
            }
            Some((p, OpenOptions::new().create(true).append(true).open(p).at(p)?))
        }
        None => None,
    };
    // a torn last line from an interrupted run must not swallow the next entry
    if let Some((p, f)) = writer.as_mut() {
        let p: &Path = p;
        let len = f.metadata().at(p)?.len();
        if len > 0 && !std::fs::read(p).at(p)?.ends_with(b"\n") {
            f.write_all(b"\n").at(p)?;
        }
    }

    let mut transient = BTreeMap::new();
    let next = AtomicUsize::new(0);
    let workers = run.max_concurrency.clamp(1, todo.len().max(1));
    let (tx, rx) = mpsc::channel::<Outcome>();
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (todo, next) = (&todo, &next);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&id) = todo.get(i) else { break };
                if tx.send(run_one(id, run, client)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for outcome in rx {
            match outcome {
                Outcome::Journal(entry) => {
                    if let Some((p, f)) = writer.as_mut() {
                        serde_json::to_writer(&mut *f, &entry).at(p)?;
                        f.write_all(b"\n").at(p)?;
                        f.flush().at(p)?;
                    }
                    done.insert(entry.feature_id(), entry);
                }
                Outcome::Transient { feature_id, reason } => {
                    log::warn!("feature {feature_id}: {reason}");
                    transient.insert(feature_id, reason);
                }
            }
        }
        Ok(())
    })?;

    catalog.skipped.clear();
    for id in wanted {
        let entry = catalog.features.iter_mut().find(|f| f.id == id);
        match (done.get(&id), entry) {
            (Some(JournalEntry::Labelled { result, .. }), Some(f)) => {
                f.label = Some(result.label.label.clone());
                f.pearson = Some(result.score.pearson);
                f.f1 = Some(result.score.f1);
            }
            (Some(JournalEntry::Skipped { reason, .. }), _) => {
                catalog.skipped.push(SkippedFeature { id, reason: reason.clone() });
            }
            _ => {
                if let Some(reason) = transient.get(&id) {
                    catalog.skipped.push(SkippedFeature { id, reason: reason.clone() });
                }
            }
        }
    }
    Ok(())
}
