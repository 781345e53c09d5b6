mod support;

use std::process::Command;

use saerch::formats;
use saerch_core::analysis::FamilyForest;
use saerch_core::FeatureCatalog;

const GRID: &str = "[grid]\nk = [2]\nn = [8, 12, 16]\n";

fn bytes(p: &std::path::Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(saerch::cli::dispatch(["saerch", "bogus"]), 1);
    assert_eq!(saerch::cli::dispatch(["saerch"]), 1);
    assert_eq!(saerch::cli::dispatch(["saerch", "train", "--no-such-flag"]), 1);
    assert_eq!(saerch::cli::dispatch(["saerch", "--help"]), 0);

    let out = Command::new(env!("CARGO_BIN_EXE_saerch")).arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn runtime_failures_exit_2_with_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let summary = dir.path().join("s.json");
    let code = saerch::cli::dispatch([
        "saerch",
        "--out",
        out.to_str().unwrap(),
        "--summary-json",
        summary.to_str().unwrap(),
        "train",
    ]);
    assert_eq!(code, 2);
    let s: serde_json::Value = formats::read_json(&summary).unwrap();
    assert_eq!(s["status"], "error");
    assert_eq!(s["command"], "train");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nno_such_key = 1\n").unwrap();
    assert_eq!(saerch::cli::dispatch(["saerch", "--config", bad.to_str().unwrap(), "train"]), 1);
}

#[test]
fn full_pipeline() {
    let fx = support::fixture(GRID);
    let out = &fx.out;

    assert_eq!(fx.run(&["ingest"]), 0);
    assert_eq!(fx.summary("ingest")["details"]["documents"], 400);
    let corpus = formats::ingest_corpus(&out.join("corpus/embeddings.bin"), &out.join("corpus/metadata.jsonl")).unwrap();
    assert_eq!(corpus, fx.topics.corpus);

    assert_eq!(fx.run(&["train"]), 0);
    let s = fx.summary("train");
    assert_eq!(s["details"]["runs"].as_array().unwrap().len(), 3);
    assert_eq!(s["details"]["val_rows"], 40);
    for n in [8, 12, 16] {
        assert!(out.join(format!("grid/k2_n{n}.sae")).exists());
    }
    let (model, meta) = formats::read_checkpoint(&out.join("model.sae")).unwrap();
    assert_eq!((model.k(), model.n()), (2, 16));
    assert!(meta.norm_stats.is_some());
    let log_lines = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap().lines().count();
    assert_eq!(log_lines, meta.summary.steps);

    // retraining with the same inputs is byte-identical and keeps derived files
    let checkpoint = bytes(&out.join("model.sae"));
    assert_eq!(fx.run(&["metrics"]), 0);
    let m = fx.summary("metrics");
    assert_eq!(m["details"]["rows"].as_array().unwrap().len(), 4);
    assert_eq!(m["details"]["fits"].as_array().unwrap().len(), 1);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,n,MSE,LogFD,ActMean"));
    assert_eq!(csv.lines().count(), 5);

    assert_eq!(fx.run(&["label", "--features", "0,1,2,3"]), 0);
    let catalog_bytes = bytes(&out.join("catalog.json"));
    let catalog: FeatureCatalog = formats::read_json(&out.join("catalog.json")).unwrap();
    let labelled: Vec<usize> = catalog.features.iter().filter(|f| f.label.is_some()).map(|f| f.id).collect();
    let skipped: Vec<usize> = catalog.skipped.iter().map(|f| f.id).collect();
    assert_eq!(labelled.len() + skipped.len(), 4, "labelled {labelled:?}, skipped {skipped:?}");
    assert!(out.join("activations.bin").exists());

    assert_eq!(fx.run(&["train"]), 0);
    assert_eq!(bytes(&out.join("model.sae")), checkpoint);
    assert_eq!(bytes(&out.join("catalog.json")), catalog_bytes);

    // the journal makes a repeated label run a no-op with identical output
    assert_eq!(fx.run(&["label", "--features", "0,1,2,3"]), 0);
    assert_eq!(bytes(&out.join("catalog.json")), catalog_bytes);

    assert_eq!(fx.run(&["families", "--all-features"]), 0);
    let families_bytes = bytes(&out.join("families.json"));
    let forest: FamilyForest = formats::read_json(&out.join("families.json")).unwrap();
    assert_eq!(fx.summary("families")["details"]["families"], forest.families.len());
    assert_eq!(fx.run(&["families", "--all-features"]), 0);
    assert_eq!(bytes(&out.join("families.json")), families_bytes);

    let small = out.join("grid/k2_n8.sae");
    let large = out.join("grid/k2_n16.sae");
    assert_eq!(fx.run(&["match", "--small", small.to_str().unwrap(), "--large", large.to_str().unwrap()]), 0);
    let matched: serde_json::Value = formats::read_json(&out.join("match.json")).unwrap();
    assert_eq!(matched["pairs"].as_array().unwrap().len(), 16);
    assert!(matched["pairs"][0]["activation_similarity"].is_number());

    let queries = fx.root().join("queries.txt");
    assert_eq!(fx.run(&["steer-eval", "--queries", queries.to_str().unwrap()]), 0);
    let eval = fx.summary("steer-eval");
    let records = eval["details"]["records"].as_u64().unwrap() as usize;
    let failures = eval["details"]["failures"].as_array().unwrap().len();
    // every trial either yields an up and a down record or a recorded failure
    assert_eq!(records / 2 + failures, 50);
    assert!(out.join("eval.jsonl").exists() && out.join("eval.csv").exists());

    // a changed model invalidates everything derived from the old one
    std::fs::write(&fx.config, std::fs::read_to_string(&fx.config).unwrap().replace("epochs = 8", "epochs = 9")).unwrap();
    assert_eq!(fx.run(&["train"]), 0);
    assert!(!out.join("catalog.json").exists());
    assert!(!out.join("families.json").exists());
    assert!(!out.join("activations.bin").exists());
}

#[test]
fn flags_override_the_config() {
    let fx = support::fixture("");
    let other = fx.root().join("elsewhere");
    assert_eq!(fx.run(&["--out", other.to_str().unwrap(), "ingest"]), 0);
    assert!(other.join("corpus/embeddings.bin").exists());
    assert!(other.join("ingest.summary.json").exists());
    assert!(!fx.out.join("corpus").exists());

    assert_eq!(fx.run(&["--out", other.to_str().unwrap(), "--seed", "9", "train"]), 0);
    let (_, meta) = formats::read_checkpoint(&other.join("model.sae")).unwrap();
    assert_eq!(meta.config.seed, 9);
}
