//! Command-line entry point.
//!
//! Every subcommand reads the shared config, writes its artifacts under the
//! output directory and finishes by writing a JSON summary (to
//! `--summary-json`, or `<out>/<command>.summary.json`). Exit status is 0 on
//! success, 1 for usage errors and 2 for runtime failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use saerch_core::analysis::{
    annotate_metrics, build_cooccurrence, extract_families, label_family, match_features, median, FamilyConfig,
    FamilyForest,
};
use saerch_core::autointerp::{activation_columns, CompletionClient, ExampleCounts, LabelSettings, Role};
use saerch_core::corpus::split_corpus;
use saerch_core::metrics::{feature_stats, feature_stats_from, fit_power_law, normalized_mse_of, PowerLawFit};
use saerch_core::model::encode_corpus;
use saerch_core::search::SearchIndex;
use saerch_core::steering::{evaluate_interventions, EvalQuery, EvalSettings};
use saerch_core::{EmbeddingCorpus, FeatureCatalog, NormStats, SaeModel, SparseActivation};
use serde::Serialize;
use serde_json::{json, Value};

use crate::client::{EmbeddingClient, HttpCompletionClient, HttpEmbeddingClient, StaticEmbeddingClient};
use crate::config::Config;
use crate::embed::{EmbeddingCache, QueryEmbedder};
use crate::error::{Error, IoContext, Result};
use crate::formats::{self, CheckpointMeta, CorpusPaths, TrainingSummary};
use crate::labelling::{label_catalog, LabelRun};
use crate::mock::ScriptedClient;
use crate::server::{self, ServiceState};

#[derive(Debug, Parser)]
#[command(name = "saerch", version, about = "Sparse autoencoders over text-embedding corpora")]
pub struct Cli {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Where to write the run summary.
    #[arg(long, global = true)]
    pub summary_json: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an embedding matrix and metadata and copy them into the output directory.
    Ingest(IngestArgs),
    /// Train the configured model (and every grid point).
    Train(CorpusArg),
    /// Reconstruction and sparsity metrics, with power-law fits over a grid.
    Metrics(MetricsArgs),
    /// Label features with the interpreter/predictor pipeline.
    Label(LabelArgs),
    /// Extract feature families from co-occurrence.
    Families(FamiliesArgs),
    /// Match features between a smaller and a larger model.
    Match(MatchArgs),
    /// Evaluate feature interventions against query rewriting.
    SteerEval(SteerEvalArgs),
    /// Run the HTTP search service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorpusArg {
    /// Ingested corpus directory (default `<out>/corpus`).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "val")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Label only these features (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct FamiliesArgs {
    /// Use every feature instead of only those passing the score filter.
    #[arg(long)]
    pub all_features: bool,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub small: Option<PathBuf>,
    #[arg(long)]
    pub large: Option<PathBuf>,
    /// Corpus for activation similarity of matched pairs.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SteerEvalArgs {
    /// One query per line.
    #[arg(long)]
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<String>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Train(_) => "train",
            Command::Metrics(_) => "metrics",
            Command::Label(_) => "label",
            Command::Families(_) => "families",
            Command::Match(_) => "match",
            Command::SteerEval(_) => "steer-eval",
            Command::Serve(_) => "serve",
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut config = match &cli.config {
        Some(p) => match Config::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        },
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    let name = cli.command.name();
    let summary_path = cli.summary_json.clone().unwrap_or_else(|| config.out_path(&format!("{name}.summary.json")));

    let outcome = run(&config, &cli.command);
    let (code, summary) = match outcome {
        Ok(details) => (0, json!({ "command": name, "status": "ok", "details": details })),
        Err(e) => {
            eprintln!("error: {e}");
            (2, json!({ "command": name, "status": "error", "error": e.to_string() }))
        }
    };
    if let Err(e) = formats::write_json(&summary_path, &summary) {
        eprintln!("error: could not write summary: {e}");
        return 2;
    }
    code
}

pub fn run(config: &Config, command: &Command) -> Result<Value> {
    std::fs::create_dir_all(&config.out).at(&config.out)?;
    match command {
        Command::Ingest(a) => ingest(config, a),
        Command::Train(a) => train(config, a),
        Command::Metrics(a) => metrics(config, a),
        Command::Label(a) => label(config, a),
        Command::Families(a) => families(config, a),
        Command::Match(a) => matching(config, a),
        Command::SteerEval(a) => steer_eval(config, a),
        Command::Serve(a) => serve(config, a),
    }
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("summaries serialize")
}

fn load_corpus(dir: &Path) -> Result<EmbeddingCorpus> {
    let paths = CorpusPaths::in_dir(dir);
    formats::ingest_corpus(&paths.embeddings, &paths.metadata)
}

fn ingest(config: &Config, args: &IngestArgs) -> Result<Value> {
    let embeddings = args.embeddings.clone().or_else(|| config.corpus.embeddings.clone());
    let metadata = args.metadata.clone().or_else(|| config.corpus.metadata.clone());
    let (Some(embeddings), Some(metadata)) = (embeddings, metadata) else {
        return Err(Error::Config("ingest needs --embeddings and --metadata".into()));
    };
    let corpus = formats::ingest_corpus(&embeddings, &metadata)?;
    let dir = config.corpus_dir();
    formats::write_corpus(&CorpusPaths::in_dir(&dir), &corpus)?;
    log::info!("ingested {} documents of dimension {}", corpus.len(), corpus.dim());
    Ok(json!({ "documents": corpus.len(), "dim": corpus.dim(), "corpus": dir }))
}

/// Files computed from a trained model; stale once the model changes.
fn derived_artifacts(config: &Config) -> [PathBuf; 4] {
    [
        config.activations_path(),
        config.catalog_path(),
        config.families_path(),
        config.out_path("label_journal.jsonl"),
    ]
}

fn train(config: &Config, args: &CorpusArg) -> Result<Value> {
    let corpus = load_corpus(&args.corpus.clone().unwrap_or_else(|| config.corpus_dir()))?;
    let (train_rows, val_rows) = split_corpus(&corpus, config.corpus.val_fraction, config.seed)?;
    let stats = NormStats::fit(&train_rows)?;
    let train_rows = train_rows.apply_stats(&stats)?;
    let val_rows = val_rows.apply_stats(&stats)?;

    let main = (config.train.k, config.train.n);
    let mut points = vec![main];
    if let Some(grid) = &config.grid {
        for &k in &grid.k {
            for &n in &grid.n {
                if !points.contains(&(k, n)) {
                    points.push((k, n));
                }
            }
        }
    }

    let mut runs = Vec::new();
    for (k, n) in points {
        let sae = config.train.sae_config(k, n, config.seed);
        log::info!("training k={k} n={n} for {} epochs on {} rows", sae.epochs, train_rows.len());
        let (model, log) = saerch_core::train(&train_rows, &sae)?;
        let mut summary = TrainingSummary::from_log(&log);
        summary.val_normalized_mse = Some(saerch_core::metrics::normalized_mse(&model, &val_rows));
        let meta = CheckpointMeta { config: sae, dim: model.dim, norm_stats: Some(stats.clone()), summary };

        let mut paths = Vec::new();
        if (k, n) == main {
            let path = config.checkpoint_path();
            let previous = std::fs::read(&path).ok();
            formats::write_checkpoint(&path, &model, &meta)?;
            if previous.is_some_and(|old| std::fs::read(&path).ok().as_ref() != Some(&old)) {
                for stale in derived_artifacts(config).iter().filter(|p| p.exists()) {
                    log::warn!("model changed; removing {}", stale.display());
                    std::fs::remove_file(stale).at(stale)?;
                }
            }
            formats::write_jsonl(&config.out_path("train_log.jsonl"), &log.steps)?;
            paths.push(path);
        }
        if config.grid.as_ref().is_some_and(|g| g.k.contains(&k) && g.n.contains(&n)) {
            let path = config.grid_checkpoint_path(k, n);
            formats::write_checkpoint(&path, &model, &meta)?;
            formats::write_jsonl(&path.with_extension("log.jsonl"), &log.steps)?;
            paths.push(path);
        }
        runs.push(json!({
            "k": k,
            "n": n,
            "checkpoints": paths,
            "val_normalized_mse": meta.summary.val_normalized_mse,
            "dead_latents": meta.summary.final_dead,
            "steps": meta.summary.steps,
            "flops": meta.summary.flops,
        }));
    }
    Ok(json!({ "train_rows": train_rows.len(), "val_rows": val_rows.len(), "runs": runs }))
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub k: usize,
    pub n: usize,
    pub normalized_mse: f64,
    /// Mean log10 density over live features.
    pub log_fd: f64,
    pub act_mean: f64,
    pub dead_features: usize,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub k: usize,
    pub n: Vec<usize>,
    pub fit: PowerLawFit,
}

fn checkpoint_stats(meta: &CheckpointMeta, path: &Path) -> Result<NormStats> {
    meta.norm_stats
        .clone()
        .ok_or_else(|| Error::Format { path: path.into(), message: "checkpoint has no normalization statistics".into() })
}

fn metrics_row(path: &Path, corpus: &EmbeddingCorpus, split: Split, seed: u64, val_fraction: f64) -> Result<MetricsRow> {
    let (model, meta) = formats::read_checkpoint(path)?;
    let stats = checkpoint_stats(&meta, path)?;
    let rows = match split {
        Split::All => corpus.clone(),
        Split::Train => split_corpus(corpus, val_fraction, seed)?.0,
        Split::Val => split_corpus(corpus, val_fraction, seed)?.1,
    };
    let fs = feature_stats(&model, &rows.apply_stats(&stats)?);
    Ok(MetricsRow {
        k: model.k(),
        n: model.n(),
        normalized_mse: fs.normalized_mse,
        log_fd: fs.mean_log10_density,
        act_mean: fs.activation_mean,
        dead_features: fs.dead_features,
        rows: fs.rows,
    })
}

fn metrics(config: &Config, args: &MetricsArgs) -> Result<Value> {
    let corpus = load_corpus(&args.corpus.clone().unwrap_or_else(|| config.corpus_dir()))?;
    let (seed, vf) = (config.seed, config.corpus.val_fraction);
    let mut rows = Vec::new();
    let main = args.checkpoint.clone().unwrap_or_else(|| config.checkpoint_path());
    if main.exists() || config.grid.is_none() {
        rows.push(metrics_row(&main, &corpus, args.split, seed, vf)?);
    }
    let mut fits = Vec::new();
    if let Some(grid) = &config.grid {
        let mut grid_rows = Vec::new();
        for &k in &grid.k {
            for &n in &grid.n {
                let path = config.grid_checkpoint_path(k, n);
                if path.exists() {
                    grid_rows.push(metrics_row(&path, &corpus, args.split, seed, vf)?);
                } else {
                    log::warn!("grid point k={k} n={n} has no checkpoint");
                }
            }
        }
        for &k in &grid.k {
            let mut pts: Vec<&MetricsRow> = grid_rows.iter().filter(|r| r.k == k).collect();
            pts.sort_by_key(|r| r.n);
            if pts.len() < 3 {
                continue;
            }
            let xs: Vec<f64> = pts.iter().map(|r| r.n as f64).collect();
            let ys: Vec<f64> = pts.iter().map(|r| r.normalized_mse).collect();
            match fit_power_law(&xs, &ys) {
                Ok(fit) => fits.push(ScalingFit { k, n: pts.iter().map(|r| r.n).collect(), fit }),
                Err(e) => log::warn!("no power-law fit for k={k}: {e}"),
            }
        }
        rows.extend(grid_rows);
    }

    let csv_path = config.out_path("metrics.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Format { path: csv_path.clone(), message: e.to_string() })?;
    let csv_err = |e: csv::Error| Error::Format { path: csv_path.clone(), message: e.to_string() };
    w.write_record(["k", "n", "MSE", "LogFD", "ActMean"]).map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            r.k.to_string(),
            r.n.to_string(),
            format!("{:.6}", r.normalized_mse),
            format!("{:.4}", r.log_fd),
            format!("{:.4}", r.act_mean),
        ])
        .map_err(csv_err)?;
    }
    w.flush().at(&csv_path)?;
    let report = json!({ "split": format!("{:?}", args.split).to_lowercase(), "rows": rows, "fits": fits });
    formats::write_json(&config.out_path("metrics.json"), &report)?;
    Ok(report)
}

/// The main model with the full corpus normalized by its statistics and encoded.
struct Prepared {
    model: SaeModel,
    corpus: EmbeddingCorpus,
    stats: NormStats,
    acts: Vec<SparseActivation>,
}

fn prepare(config: &Config) -> Result<Prepared> {
    let path = config.checkpoint_path();
    let (model, meta) = formats::read_checkpoint(&path)?;
    let stats = checkpoint_stats(&meta, &path)?;
    let corpus = load_corpus(&config.corpus_dir())?.apply_stats(&stats)?;
    let cached = config.activations_path();
    let acts = match formats::read_activations(&cached) {
        Ok((n, acts)) if n == model.n() && acts.len() == corpus.len() => acts,
        _ => {
            let mut acts = encode_corpus(&model, &corpus);
            formats::round_activations(&mut acts);
            formats::write_activations(&cached, &acts, model.n())?;
            acts
        }
    };
    Ok(Prepared { model, corpus, stats, acts })
}

fn base_catalog(config: &Config, p: &Prepared) -> Result<FeatureCatalog> {
    let path = config.catalog_path();
    if path.exists() {
        return formats::read_json(&path);
    }
    let d = p.corpus.dim();
    let mut recon = Vec::with_capacity(p.corpus.len() * d);
    for h in &p.acts {
        recon.extend(p.model.decode(h));
    }
    let nmse = normalized_mse_of(&p.corpus, &recon);
    Ok(FeatureCatalog::from_model(&p.model, &feature_stats_from(&p.acts, p.model.n(), nmse)))
}

type DynClient = Box<dyn CompletionClient + Send + Sync>;

fn completion_client(config: &Config) -> Result<DynClient> {
    if let Some(script) = &config.completion.mock {
        return Ok(Box::new(ScriptedClient::load(script)?));
    }
    Ok(Box::new(
        HttpCompletionClient::new(&config.completion)
            .with_model(Role::Judge, &config.steer_eval.judge_model)
            .with_model(Role::Rewriter, &config.steer_eval.rewriter_model),
    ))
}

fn query_embedder(config: &Config, stats: NormStats) -> Result<QueryEmbedder> {
    let section = &config.embedding;
    let client: Box<dyn EmbeddingClient> = match &section.mock {
        Some(path) => Box::new(StaticEmbeddingClient::load(path)?),
        None => Box::new(HttpEmbeddingClient::new(section)),
    };
    let cache_path = config.embedding_cache_path();
    let cache = EmbeddingCache::load(&cache_path, section.cache_capacity)?;
    Ok(QueryEmbedder::new(Some(client), stats, cache).persist_to(cache_path))
}

fn label(config: &Config, args: &LabelArgs) -> Result<Value> {
    let p = prepare(config)?;
    let mut catalog = base_catalog(config, &p)?;
    let client = completion_client(config)?;
    let columns = activation_columns(&p.acts, p.model.n());
    let l = &config.label;
    let run = LabelRun {
        columns: &columns,
        docs: p.corpus.docs(),
        settings: LabelSettings {
            subject: l.subject.clone(),
            counts: ExampleCounts {
                interpreter_max: l.interpreter_max,
                interpreter_zero: l.interpreter_zero,
                predictor_positive: l.predictor_positive,
                predictor_negative: l.predictor_negative,
            },
            seed: config.seed,
        },
        features: if args.features.is_empty() { l.features.clone() } else { args.features.clone() },
        max_concurrency: config.completion.max_concurrency,
    };
    label_catalog(&mut catalog, &run, &*client, Some(&config.out_path("label_journal.jsonl")))?;
    formats::write_json(&config.catalog_path(), &catalog)?;

    let labelled: Vec<_> = catalog.features.iter().filter(|f| f.label.is_some()).collect();
    Ok(json!({
        "labelled": labelled.len(),
        "skipped": catalog.skipped.len(),
        "median_pearson": median(labelled.iter().filter_map(|f| f.pearson)),
        "median_f1": median(labelled.iter().filter_map(|f| f.f1)),
        "catalog": config.catalog_path(),
    }))
}

fn read_forest(config: &Config) -> Result<FamilyForest> {
    let path = config.families_path();
    if path.exists() {
        formats::read_json(&path)
    } else {
        Ok(FamilyForest::default())
    }
}

fn families(config: &Config, args: &FamiliesArgs) -> Result<Value> {
    let p = prepare(config)?;
    let catalog = base_catalog(config, &p)?;
    let n = p.model.n();
    let fc = &config.families;
    let include: Vec<bool> = if args.all_features {
        vec![true; n]
    } else {
        let mut mask = catalog.interpretable_mask(fc.min_f1, fc.min_pearson);
        mask.resize(n, false);
        mask
    };
    if !include.contains(&true) {
        log::warn!("no feature passes the score filter; run `label` first or pass --all-features");
    }
    let graphs = build_cooccurrence(&p.acts, n, fc.epsilon, fc.tau);
    let densities = catalog.densities();
    let mut forest = extract_families(
        &graphs,
        &densities,
        &include,
        &FamilyConfig { iterations: fc.iterations, dedup_jaccard: fc.dedup_jaccard },
    );
    annotate_metrics(&mut forest, &graphs, &densities, &include);

    let mut label_failures = BTreeMap::new();
    if fc.label {
        let client = completion_client(config)?;
        let columns = activation_columns(&p.acts, n);
        for f in &mut forest.families {
            match label_family(
                f,
                &catalog,
                &columns,
                p.corpus.docs(),
                &*client,
                &config.label.subject,
                fc.predictor_examples,
                config.seed,
            ) {
                Ok(fl) => {
                    f.superfeature_label = Some(fl.label);
                    if let Some(m) = f.metrics.as_mut() {
                        m.family_f1 = Some(fl.score.f1);
                        m.family_pearson = Some(fl.score.pearson);
                    }
                }
                Err(e) => {
                    label_failures.insert(f.id, e.to_string());
                }
            }
        }
    }
    formats::write_json(&config.families_path(), &forest)?;

    let metrics: Vec<_> = forest.families.iter().filter_map(|f| f.metrics.as_ref()).collect();
    Ok(json!({
        "families": forest.families.len(),
        "new_per_iteration": forest.new_per_iteration,
        "included_features": include.iter().filter(|&&b| b).count(),
        "median_size": median(metrics.iter().map(|m| m.size as f64)),
        "median_r_pc": median(metrics.iter().map(|m| m.r_pc)),
        "unbounded_r_pc": metrics.iter().filter(|m| m.r_pc_unbounded).count(),
        "median_c_block_ratio": median(metrics.iter().filter_map(|m| m.c_block_ratio)),
        "median_d_block_ratio": median(metrics.iter().filter_map(|m| m.d_block_ratio)),
        "label_failures": label_failures,
        "output": config.families_path(),
    }))
}

fn matching(config: &Config, args: &MatchArgs) -> Result<Value> {
    let small = args.small.clone().or_else(|| config.matching.small.clone());
    let large = args.large.clone().or_else(|| config.matching.large.clone());
    let (Some(small), Some(large)) = (small, large) else {
        return Err(Error::Config("match needs --small and --large checkpoints".into()));
    };
    let (small_model, small_meta) = formats::read_checkpoint(&small)?;
    let (large_model, large_meta) = formats::read_checkpoint(&large)?;
    let mut result = match_features(
        &FeatureCatalog::from_directions(&small_model),
        &FeatureCatalog::from_directions(&large_model),
        config.matching.recurrent_threshold,
    )?;
    let corpus_dir = args.corpus.clone().unwrap_or_else(|| config.corpus_dir());
    let with_activations = CorpusPaths::in_dir(&corpus_dir).embeddings.exists();
    if with_activations {
        let corpus = load_corpus(&corpus_dir)?;
        let cols = |model: &SaeModel, meta: &CheckpointMeta, path: &Path| -> Result<Vec<Vec<(usize, f64)>>> {
            let normalized = corpus.apply_stats(&checkpoint_stats(meta, path)?)?;
            Ok(activation_columns(&encode_corpus(model, &normalized), model.n()))
        };
        let small_cols = cols(&small_model, &small_meta, &small)?;
        let large_cols = cols(&large_model, &large_meta, &large)?;
        result.attach_activation_similarity(&small_cols, &large_cols);
    }
    let out = config.out_path("match.json");
    formats::write_json(&out, &result)?;
    Ok(json!({
        "small_features": small_model.n(),
        "large_features": large_model.n(),
        "recurrent_fraction": result.recurrent_fraction(),
        "activation_similarity": with_activations,
        "output": out,
    }))
}

fn read_queries(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).at(path)?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn steer_eval(config: &Config, args: &SteerEvalArgs) -> Result<Value> {
    let Some(queries_path) = args.queries.clone().or_else(|| config.steer_eval.queries.clone()) else {
        return Err(Error::Config("steer-eval needs --queries".into()));
    };
    let p = prepare(config)?;
    let catalog = base_catalog(config, &p)?;
    let forest = read_forest(config)?;
    let embedder = query_embedder(config, p.stats.clone())?;
    let queries = read_queries(&queries_path)?
        .into_iter()
        .map(|text| Ok(EvalQuery { embedding: embedder.embed_query(&text)?, text }))
        .collect::<Result<Vec<_>>>()?;
    let index = SearchIndex::build(&p.corpus, p.model, catalog, forest)?;
    let client = completion_client(config)?;
    let s = &config.steer_eval;
    let settings = EvalSettings {
        trials: s.trials,
        retrieve: s.retrieve,
        min_f1: s.min_f1,
        min_pearson: s.min_pearson,
        max_pair_cosine: s.max_pair_cosine,
        lambda_up_max: s.lambda_up_max,
        bin_width: s.bin_width,
        snippet_chars: s.snippet_chars,
        subject: config.label.subject.clone(),
        seed: config.seed,
        ..EvalSettings::default()
    };
    let report = evaluate_interventions(&queries, &index, &*client, &*client, &embedder, &settings)?;

    formats::write_jsonl(&config.out_path("eval.jsonl"), &report.records)?;
    let csv_path = config.out_path("eval.csv");
    let csv_err = |e: csv::Error| Error::Format { path: csv_path.clone(), message: e.to_string() };
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    for b in &report.bins {
        w.serialize(b).map_err(csv_err)?;
    }
    w.flush().at(&csv_path)?;
    Ok(json!({
        "records": report.records.len(),
        "failures": report.failures,
        "sae_accuracy": report.sae_accuracy,
        "rewrite_accuracy": report.rewrite_accuracy,
        "bins": to_value(&report.bins),
    }))
}

/// Loads everything the HTTP service needs from the output directory.
pub fn service_state(config: &Config) -> Result<ServiceState> {
    let p = prepare(config)?;
    let catalog = base_catalog(config, &p)?;
    let forest = read_forest(config)?;
    let embedder = query_embedder(config, p.stats.clone())?;
    let index = SearchIndex::build(&p.corpus, p.model, catalog, forest)?;
    Ok(ServiceState::new(index, embedder, &p.acts, config.families.tau, config.families.epsilon))
}

fn serve(config: &Config, args: &ServeArgs) -> Result<Value> {
    let state = Arc::new(service_state(config)?);
    let addr = args.addr.clone().unwrap_or_else(|| config.serve.addr.clone());
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Config(format!("tokio runtime: {e}")))?;
    runtime
        .block_on(server::serve(state, &addr))
        .map_err(|source| Error::Io { path: PathBuf::from(&addr), source })?;
    Ok(json!({ "addr": addr }))
}
