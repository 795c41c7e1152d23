use std::path::Path;
use std::process::{Command, Output};

use punner_harness::ner::save_model;
use punner_model::{ModelCheckpoint, OptimizerConfig, Trainer};

mod common;

fn punner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_punner")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn saved_model(dir: &Path) -> String {
    let m = common::model();
    let path = dir.join("m.ckpt");
    let t = Trainer::from_model(m.model.clone(), m.vocab.clone(), OptimizerConfig::default(), 0).unwrap();
    save_model(&path, &ModelCheckpoint::from_trainer(&t, false), &m.codec).unwrap();
    path.to_str().unwrap().to_string()
}

const TINY: &str = r#"{
  "id": "tiny",
  "corpora": {"kind": "synthetic", "sizes": [{"train": 12, "dev": 4, "test": 4}, {"train": 12, "dev": 4, "test": 4}], "seed": 1},
  "model": {"d_model": 16, "n_heads": 2, "n_encoder_layers": 1, "n_decoder_layers": 1, "d_ff": 32, "max_target_len": 120},
  "optimizer": {"batch_size": 4, "warmup_steps": 1},
  "budget": 2, "eval_every": 2,
  "eval": {"dev_limit": 2, "beam": 1, "match_mode": "surface", "metric": "micro"},
  "test_beam": 1
}"#;

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(punner(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(punner(&["train", "--out", "x.ckpt"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(punner(&["train", "--config", bad.to_str().unwrap(), "--out", "x"]).status.code(), Some(1));
    assert_eq!(punner(&["--help"]).status.code(), Some(0));
    assert!(String::from_utf8_lossy(&punner(&["predict", "--help"]).stdout).contains("--types"));
}

#[test]
fn runtime_failures_exit_with_two() {
    let out = punner(&["predict", "--model", "/nonexistent/m.ckpt", "--text", "x", "--types", "name"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_prints_the_generated_target() {
    let dir = tempfile::tempdir().unwrap();
    let model = saved_model(dir.path());
    let out = punner(&["predict", "--model", &model, "--text", common::TEXT, "--types", "time,location"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "((time):(tomorrow),(location):(zoo))");
    let out = punner(&["predict", "--model", &model, "--text", common::TEXT, "--types", "dragon"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_and_ingest_write_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("news.jsonl");
    let out = punner(&["synth", "--dataset", "synth_news", "--n", "25", "--seed", "4", "--output", synth.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&synth).unwrap().lines().count(), 25);

    let conll = dir.path().join("a.conll");
    std::fs::write(&conll, "张 B-PER\n三 I-PER\n在 O\n北 B-LOC\n京 I-LOC\n\n").unwrap();
    let jsonl = dir.path().join("a.jsonl");
    let out = punner(&["ingest", "--input", conll.to_str().unwrap(), "--format", "conll", "--dataset", "msra", "--output", jsonl.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let line = std::fs::read_to_string(&jsonl).unwrap();
    assert!(line.contains("张三") && line.contains("北京"));
}

#[test]
fn train_then_eval_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();
    let ckpt = dir.path().join("t.ckpt");
    let out = punner(&["train", "--config", cfg, "--seed", "3", "--out", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("t.ckpt.trace.csv").exists());
    let mut reports = Vec::new();
    for name in ["r1.json", "r2.json"] {
        let path = dir.path().join(name);
        let out = punner(&["eval", "--config", cfg, "--model", ckpt.to_str().unwrap(), "--beam", "1", "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(std::fs::read(path).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn ablation_tables_regenerate_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let out_dir = format!("out_dir=\"{}\"", dir.path().join("runs").display());
    let args = ["ablate", "--config", cfg.to_str().unwrap(), "--set", &out_dir, "--seed", "2", "--kind", "joint"];
    let first = punner(&args);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let mut again = args.to_vec();
    again.push("--regenerate");
    let second = punner(&again);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
    assert!(String::from_utf8_lossy(&first.stdout).contains("# models"));
}
