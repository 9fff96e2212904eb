//! End-to-end tests of the command-line binary: every subcommand runs
//! against a small synthetic dataset in a temp directory, and deterministic
//! outputs are checked byte for byte across reruns.

use relcorr::corpus::RelationSchema;
use relcorr::evaluator::{predictions_to_json, PredictionSet};
use relcorr::synth;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relcorr"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn schema_json(schema: &RelationSchema) -> String {
    let mut map = serde_json::Map::new();
    for (i, id) in schema.ids().iter().enumerate() {
        map.insert(id.clone(), serde_json::Value::String(schema.name(i).to_string()));
    }
    serde_json::to_string_pretty(&serde_json::Value::Object(map)).unwrap()
}

/// A workspace with a saved synthetic dataset, dev split and schema file.
struct Fixture {
    dir: TempDir,
    dataset: PathBuf,
    dev: PathBuf,
    schema: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let schema = synth::schema();
        let train_docs = synth::generate_corpus(12, 61);
        let dev_docs = synth::generate_corpus(4, 62);
        let dataset = dir.path().join("train.json");
        let dev = dir.path().join("dev.json");
        let schema_path = dir.path().join("schema.json");
        relcorr::corpus::save_dataset(&train_docs, &schema, &dataset).unwrap();
        relcorr::corpus::save_dataset(&dev_docs, &schema, &dev).unwrap();
        std::fs::write(&schema_path, schema_json(&schema)).unwrap();
        Fixture {
            dir,
            dataset,
            dev,
            schema: schema_path,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_tiny_config(&self) -> PathBuf {
        let path = self.path("config.json");
        std::fs::write(
            &path,
            r#"{
  "batch_size": 4,
  "epochs": 2,
  "lr_encoder": 0.001,
  "lr_other": 0.002,
  "seed": 5,
  "encoder": { "d_h": 16, "n_heads": 2, "layers": 1, "max_len": 48, "ffn_width": 16, "dropout": 0.1 }
}"#,
        )
        .unwrap();
        path
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("read {}: {e}", p.display()))
}

#[test]
fn stats_writes_all_artifacts_deterministically() {
    let fx = Fixture::new();
    let out1 = fx.path("stats1");
    let out2 = fx.path("stats2");
    for out in [&out1, &out2] {
        run_ok(&[
            "stats",
            "--dataset",
            s(&fx.dataset),
            "--schema",
            s(&fx.schema),
            "--out",
            s(out),
        ]);
    }
    for name in [
        "cooccurrence.csv",
        "ppmi.csv",
        "ppmi.json",
        "frequency.csv",
        "histogram.csv",
    ] {
        let a = read(&out1.join(name));
        let b = read(&out2.join(name));
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    // the PPMI matrix parses back and is 8x8
    let (matrix, names) =
        relcorr::relstats::matrix_from_json(&read(&out1.join("ppmi.json"))).unwrap();
    assert_eq!(matrix.dim(), (8, 8));
    assert_eq!(names.len(), 8);
}

#[test]
fn train_predict_evaluate_chain() {
    let fx = Fixture::new();
    let config = fx.write_tiny_config();
    let out1 = fx.path("run1");
    let out2 = fx.path("run2");
    for out in [&out1, &out2] {
        run_ok(&[
            "train",
            "--config",
            s(&config),
            "--dataset",
            s(&fx.dataset),
            "--dev",
            s(&fx.dev),
            "--schema",
            s(&fx.schema),
            "--out",
            s(out),
        ]);
    }
    for name in ["model.json", "model.tensors", "train_log.jsonl", "config.json"] {
        assert!(out1.join(name).exists(), "{name} missing");
    }
    // training is deterministic through the CLI
    let t1 = std::fs::read(out1.join("model.tensors")).unwrap();
    let t2 = std::fs::read(out2.join("model.tensors")).unwrap();
    assert_eq!(t1, t2, "tensors differ between identical runs");
    assert_eq!(
        read(&out1.join("train_log.jsonl")),
        read(&out2.join("train_log.jsonl"))
    );
    let log = read(&out1.join("train_log.jsonl"));
    assert_eq!(log.lines().count(), 2, "one log line per epoch");
    for line in log.lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "L_re", "L_coarse", "L_fine", "L", "dev_F1", "lr"] {
            assert!(entry.get(key).is_some(), "log line lacks {key}");
        }
    }

    // predict writes parseable prediction JSON
    let preds_path = fx.path("preds.json");
    run_ok(&[
        "predict",
        "--checkpoint",
        s(&out1.join("model")),
        "--dataset",
        s(&fx.dev),
        "--out",
        s(&preds_path),
    ]);
    let schema = synth::schema();
    let parsed =
        relcorr::evaluator::predictions_from_json(&read(&preds_path), &schema).unwrap();
    let reparsed =
        relcorr::evaluator::predictions_from_json(&read(&preds_path), &schema).unwrap();
    assert_eq!(parsed, reparsed);

    // evaluate the gold set against itself: micro F1 must be exactly 1
    let dev_docs = relcorr::corpus::load_dataset(&fx.dev, &schema).unwrap();
    let gold_preds = predictions_to_json(&PredictionSet::from_gold(&dev_docs), &schema);
    let gold_pred_path = fx.path("gold_preds.json");
    std::fs::write(&gold_pred_path, gold_preds).unwrap();
    let report_path = fx.path("report.json");
    run_ok(&[
        "evaluate",
        "--pred",
        s(&gold_pred_path),
        "--gold",
        s(&fx.dev),
        "--schema",
        s(&fx.schema),
        "--train",
        s(&fx.dataset),
        "--k-list",
        "3,1000",
        "--out",
        s(&report_path),
    ]);
    let report: serde_json::Value = serde_json::from_str(&read(&report_path)).unwrap();
    assert_eq!(report["micro_f1"], serde_json::json!(1.0));
    assert!(report.get("ign_f1").is_some());
    assert!(report["macro_at_k"].get("1000").is_some());

    // export-correl in both formats
    let correl_json = fx.path("correl.json");
    let correl_csv = fx.path("correl.csv");
    run_ok(&[
        "export-correl",
        "--checkpoint",
        s(&out1.join("model")),
        "--out",
        s(&correl_json),
        "--dataset",
        s(&fx.dataset),
    ]);
    run_ok(&[
        "export-correl",
        "--checkpoint",
        s(&out1.join("model")),
        "--out",
        s(&correl_csv),
    ]);
    let (matrix, _) = relcorr::relstats::matrix_from_json(&read(&correl_json)).unwrap();
    assert_eq!(matrix.dim(), (8, 8));
    assert!(read(&correl_csv).starts_with("relation,"));
}

#[test]
fn heatmap_renders_stats_output() {
    let fx = Fixture::new();
    let stats = fx.path("stats");
    run_ok(&[
        "stats",
        "--dataset",
        s(&fx.dataset),
        "--schema",
        s(&fx.schema),
        "--out",
        s(&stats),
    ]);
    let heat = fx.path("heat");
    run_ok(&[
        "plot-heatmap",
        "--matrix",
        s(&stats.join("ppmi.json")),
        "--out",
        s(&heat),
        "--top-n",
        "3",
        "--truncate",
        "2.5",
        "--freq",
        s(&stats.join("frequency.csv")),
    ]);
    let svg = read(&fx.path("heat.svg"));
    assert!(svg.starts_with("<svg"), "not an SVG: {}", &svg[..40.min(svg.len())]);
    assert!(svg.contains("<rect"));
    let csv = read(&fx.path("heat.csv"));
    assert!(csv.starts_with("relation,"));
    assert_eq!(csv.lines().count(), 9, "header plus one row per relation");

    // rerun is byte-identical
    let heat2 = fx.path("heat2");
    run_ok(&[
        "plot-heatmap",
        "--matrix",
        s(&stats.join("ppmi.json")),
        "--out",
        s(&heat2),
        "--top-n",
        "3",
        "--truncate",
        "2.5",
        "--freq",
        s(&stats.join("frequency.csv")),
    ]);
    assert_eq!(svg, read(&fx.path("heat2.svg")));
}

#[test]
fn train_flags_reach_the_config() {
    let fx = Fixture::new();
    let config = fx.write_tiny_config();
    let out = fx.path("ablated");
    run_ok(&[
        "train",
        "--config",
        s(&config),
        "--dataset",
        s(&fx.dataset),
        "--dev",
        s(&fx.dev),
        "--schema",
        s(&fx.schema),
        "--out",
        s(&out),
        "--epochs",
        "1",
        "--alpha",
        "0.0",
        "--no-correlation",
        "--dump-examples",
    ]);
    let saved: serde_json::Value = serde_json::from_str(&read(&out.join("config.json"))).unwrap();
    assert_eq!(saved["epochs"], serde_json::json!(1));
    assert_eq!(saved["alpha"], serde_json::json!(0.0));
    assert_eq!(saved["use_correlation"], serde_json::json!(false));

    let dump: serde_json::Value =
        serde_json::from_str(&read(&out.join("cooccur_examples.json"))).unwrap();
    let entries = dump.as_array().expect("array of per-document plans");
    assert!(!entries.is_empty());
    for entry in entries {
        assert!(entry.get("doc").is_some());
        assert!(entry["coarse"].is_array());
        assert!(entry["fine"].is_array());
    }
}

#[test]
fn error_paths_use_distinct_exit_codes() {
    let fx = Fixture::new();
    // missing input file: data error, exit 3
    let out = bin()
        .args([
            "stats",
            "--dataset",
            s(&fx.path("nope.json")),
            "--schema",
            s(&fx.schema),
            "--out",
            s(&fx.path("x")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // bad usage: clap's exit 2
    let out = bin().args(["stats", "--bogus-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // predict against a missing checkpoint: data error, exit 3
    let out = bin()
        .args([
            "predict",
            "--checkpoint",
            s(&fx.path("missing-model")),
            "--dataset",
            s(&fx.dev),
            "--out",
            s(&fx.path("p.json")),
            "--threshold",
            "1.5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}
