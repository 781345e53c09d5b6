//! On-disk formats.
//!
//! Embedding matrices use a 16-byte header of four
//! little-endian `u32` (magic, version, rows, columns) followed by the values
//! as little-endian `f32`, row-major. Document metadata is JSON lines, one
//! record per matrix row. Checkpoints use their own header (magic, version,
//! d, n, k) followed by `W_e` (n×d), `b_e`, `W_d` (d×n, row-major) and `b_d`
//! as `f32`, with a JSON sidecar holding the configuration, normalization
//! statistics and a training summary. Corpus encodings are stored sparsely
//! (see [`write_activations`]).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use saerch_core::corpus::NormStats;
use saerch_core::train::TrainingLog;
use saerch_core::{DocumentRecord, EmbeddingCorpus, SaeConfig, SaeModel, SparseActivation};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MATRIX_MAGIC: u32 = u32::from_le_bytes(*b"SAEM");
pub const MATRIX_VERSION: u32 = 1;
pub const ACTIVATIONS_MAGIC: u32 = u32::from_le_bytes(*b"SAEA");
pub const ACTIVATIONS_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: u32 = u32::from_le_bytes(*b"SAEC");
pub const CHECKPOINT_VERSION: u32 = 1;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    Ok(BufWriter::new(File::create(path).at(path)?))
}

fn read_u32s<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[u32; N]> {
    let mut out = [0u32; N];
    let mut buf = [0u8; 4];
    for v in &mut out {
        r.read_exact(&mut buf).map_err(|_| format_err(path, "truncated header"))?;
        *v = u32::from_le_bytes(buf);
    }
    Ok(out)
}

fn read_f32s(r: &mut impl Read, count: usize, path: &Path) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes).map_err(|_| format_err(path, format!("expected {count} values")))?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn write_f32s(w: &mut impl Write, values: impl IntoIterator<Item = f32>, path: &Path) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes()).at(path)?;
    }
    Ok(())
}

fn to_u32(value: usize, what: &str, path: &Path) -> Result<u32> {
    u32::try_from(value).map_err(|_| format_err(path, format!("{what} {value} does not fit the header")))
}

pub fn write_matrix(path: &Path, rows: usize, cols: usize, values: &[f32]) -> Result<()> {
    assert_eq!(values.len(), rows * cols, "matrix shape");
    let mut w = create(path)?;
    for v in [MATRIX_MAGIC, MATRIX_VERSION, to_u32(rows, "row count", path)?, to_u32(cols, "column count", path)?] {
        w.write_all(&v.to_le_bytes()).at(path)?;
    }
    write_f32s(&mut w, values.iter().copied(), path)?;
    w.flush().at(path)
}

/// Returns (rows, cols, values).
pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut r = BufReader::new(File::open(path).at(path)?);
    let [magic, version, rows, cols] = read_u32s::<4>(&mut r, path)?;
    if magic != MATRIX_MAGIC {
        return Err(format_err(path, "not a matrix file (bad magic)"));
    }
    if version != MATRIX_VERSION {
        return Err(format_err(path, format!("unsupported matrix version {version}")));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let values = read_f32s(&mut r, rows * cols, path)?;
    if r.read(&mut [0u8; 1]).at(path)? != 0 {
        return Err(format_err(path, "trailing bytes after matrix data"));
    }
    Ok((rows, cols, values))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).at(path)?;
        w.write_all(b"\n").at(path)?;
    }
    w.flush().at(path)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(File::open(path).at(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| format_err(path, format!("line {}: {e}", i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).at(path)?;
    w.write_all(b"\n").at(path)?;
    w.flush().at(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path).at(path)?);
    serde_json::from_reader(r).at(path)
}

/// Files making up a stored corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPaths {
    pub embeddings: PathBuf,
    pub metadata: PathBuf,
}

impl CorpusPaths {
    /// `embeddings.bin` and `metadata.jsonl` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self { embeddings: dir.join("embeddings.bin"), metadata: dir.join("metadata.jsonl") }
    }
}

/// Loads a corpus from a matrix file and a metadata file; `norm_stats` is unset.
pub fn ingest_corpus(embeddings: &Path, metadata: &Path) -> Result<EmbeddingCorpus> {
    let (rows, dim, values) = read_matrix(embeddings)?;
    let docs: Vec<DocumentRecord> = read_jsonl(metadata)?;
    if docs.len() != rows {
        return Err(Error::Ingest(format!(
            "{} has {rows} rows but {} has {} records",
            embeddings.display(),
            metadata.display(),
            docs.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Ingest(format!("non-finite value in row {}", i / dim.max(1))));
    }
    EmbeddingCorpus::new(dim, values, docs).map_err(|e| Error::Ingest(e.to_string()))
}

pub fn write_corpus(paths: &CorpusPaths, corpus: &EmbeddingCorpus) -> Result<()> {
    write_matrix(&paths.embeddings, corpus.len(), corpus.dim(), corpus.embeddings())?;
    write_jsonl(&paths.metadata, corpus.docs())
}

/// Sparse activations: header (magic, version, rows, n), then per row a
/// `u32` count followed by that many (`u32` index, `f32` value) pairs.
pub fn write_activations(path: &Path, acts: &[SparseActivation], n: usize) -> Result<()> {
    let mut w = create(path)?;
    for v in [ACTIVATIONS_MAGIC, ACTIVATIONS_VERSION, to_u32(acts.len(), "row count", path)?, to_u32(n, "latent count", path)?] {
        w.write_all(&v.to_le_bytes()).at(path)?;
    }
    for h in acts {
        w.write_all(&to_u32(h.len(), "support size", path)?.to_le_bytes()).at(path)?;
        for (i, v) in h.iter() {
            w.write_all(&to_u32(i, "latent index", path)?.to_le_bytes()).at(path)?;
            w.write_all(&(v as f32).to_le_bytes()).at(path)?;
        }
    }
    w.flush().at(path)
}

/// Returns (n, activations). Values come back as the stored `f32`.
pub fn read_activations(path: &Path) -> Result<(usize, Vec<SparseActivation>)> {
    let mut r = BufReader::new(File::open(path).at(path)?);
    let [magic, version, rows, n] = read_u32s::<4>(&mut r, path)?;
    if magic != ACTIVATIONS_MAGIC || version != ACTIVATIONS_VERSION {
        return Err(format_err(path, "not an activations file"));
    }
    let n = n as usize;
    let mut acts = Vec::with_capacity(rows as usize);
    for _ in 0..rows {
        let [count] = read_u32s::<1>(&mut r, path)?;
        let mut h = SparseActivation { indices: Vec::with_capacity(count as usize), values: Vec::with_capacity(count as usize) };
        for _ in 0..count {
            let [i, bits] = read_u32s::<2>(&mut r, path)?;
            if i as usize >= n || h.indices.last().is_some_and(|&last| last >= i as usize) {
                return Err(format_err(path, format!("bad latent index {i}")));
            }
            h.indices.push(i as usize);
            h.values.push(f32::from_bits(bits) as f64);
        }
        acts.push(h);
    }
    if r.read(&mut [0u8; 1]).at(path)? != 0 {
        return Err(format_err(path, "trailing bytes after activations"));
    }
    Ok((n, acts))
}

/// Rounds activation values to the stored precision, so freshly computed and
/// reloaded activations agree exactly.
pub fn round_activations(acts: &mut [SparseActivation]) {
    for h in acts {
        h.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

/// JSON sidecar written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: SaeConfig,
    pub dim: usize,
    pub norm_stats: Option<NormStats>,
    pub summary: TrainingSummary,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub steps: usize,
    pub epochs_completed: usize,
    pub final_main_loss: Option<f64>,
    pub final_aux_loss: Option<f64>,
    pub final_dead: usize,
    pub flops: f64,
    pub main_normalizer: f64,
    #[serde(default)]
    pub val_normalized_mse: Option<f64>,
}

impl TrainingSummary {
    pub fn from_log(log: &TrainingLog) -> Self {
        let last = log.steps.last();
        Self {
            steps: log.steps.len(),
            epochs_completed: log.epochs_completed,
            final_main_loss: last.map(|s| s.main_loss),
            final_aux_loss: last.map(|s| s.aux_loss),
            final_dead: log.final_dead.len(),
            flops: last.map_or(0.0, |s| s.flops_cumulative),
            main_normalizer: log.main_normalizer,
            val_normalized_mse: None,
        }
    }
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    checkpoint.with_file_name(name)
}

/// Writes the weights as `f32`; the model is rounded accordingly on reload.
pub fn write_checkpoint(path: &Path, model: &SaeModel, meta: &CheckpointMeta) -> Result<()> {
    let (d, n) = (model.dim, model.n());
    let mut w = create(path)?;
    for v in [
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        to_u32(d, "dimension", path)?,
        to_u32(n, "latent count", path)?,
        to_u32(model.k(), "k", path)?,
    ] {
        w.write_all(&v.to_le_bytes()).at(path)?;
    }
    write_f32s(&mut w, model.w_enc.iter().map(|&v| v as f32), path)?;
    write_f32s(&mut w, model.b_enc.iter().map(|&v| v as f32), path)?;
    // W_d is held column-contiguous in memory; on disk it is d×n row-major.
    write_f32s(&mut w, (0..d).flat_map(|r| (0..n).map(move |c| (r, c))).map(|(r, c)| model.w_dec[c * d + r] as f32), path)?;
    write_f32s(&mut w, model.b_dec.iter().map(|&v| v as f32), path)?;
    w.flush().at(path)?;
    write_json(&sidecar_path(path), meta)
}

pub fn read_checkpoint(path: &Path) -> Result<(SaeModel, CheckpointMeta)> {
    let meta: CheckpointMeta = read_json(&sidecar_path(path))?;
    let mut r = BufReader::new(File::open(path).at(path)?);
    let [magic, version, d, n, k] = read_u32s::<5>(&mut r, path)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(format_err(path, "not a checkpoint (bad magic)"));
    }
    if version != CHECKPOINT_VERSION {
        return Err(format_err(path, format!("unsupported checkpoint version {version}")));
    }
    let (d, n, k) = (d as usize, n as usize, k as usize);
    if meta.config.n != n || meta.config.k != k || meta.dim != d {
        return Err(format_err(path, "header disagrees with the JSON sidecar"));
    }
    let widen = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<f64>>();
    let w_enc = widen(read_f32s(&mut r, n * d, path)?);
    let b_enc = widen(read_f32s(&mut r, n, path)?);
    let w_dec_rows = read_f32s(&mut r, d * n, path)?;
    let b_dec = widen(read_f32s(&mut r, d, path)?);
    if r.read(&mut [0u8; 1]).at(path)? != 0 {
        return Err(format_err(path, "trailing bytes after checkpoint data"));
    }
    let mut w_dec = vec![0.0; d * n];
    for row in 0..d {
        for col in 0..n {
            w_dec[col * d + row] = w_dec_rows[row * n + col] as f64;
        }
    }
    let model = SaeModel::from_parts(meta.config.clone(), d, w_enc, b_enc, w_dec, b_dec)?;
    Ok((model, meta))
}
