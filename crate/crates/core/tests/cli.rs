use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use exam::model::InteractionRecord;
use exam::synth::PlantedKeywords;
use exam::text::save_examples;
use serde_json::{json, Value};

fn exam(args: &[&str]) -> Output {
    exam_with_env(args, &[])
}

fn exam_with_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_exam"));
    cmd.args(args).env_remove("EXAM_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// A 4-class keyword task with train and test files on disk.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let gen = PlantedKeywords::new(4, 60, 6, 20);
        save_examples(&dir.path().join("train.csv"), &gen.multiclass(120, 1)).unwrap();
        save_examples(&dir.path().join("test.csv"), &gen.multiclass(40, 2)).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_config(&self, name: &str, body: Value) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, serde_json::to_string_pretty(&body).unwrap()).unwrap();
        p
    }

    fn toy(&self, extra: Value) -> Value {
        let mut v = json!({
            "profile": "toy",
            "classes": 4,
            "max_epochs": 4,
            "train_path": "train.csv",
            "test_path": "test.csv",
            "checkpoint_dir": "ck",
        });
        for (k, x) in extra.as_object().unwrap() {
            v[k] = x.clone();
        }
        v
    }

    fn train(&self, extra: Value) -> Output {
        let cfg = self.write_config("run.json", self.toy(extra));
        exam(&["train", "--config", cfg.to_str().unwrap()])
    }
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn train_writes_checkpoint_and_report() {
    let ws = Workspace::new();
    let out = ws.train(json!({}));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ck = ws.path("ck");
    for f in ["meta.json", "weights.bin", "vocab.txt", "report.json", "validation.csv"] {
        assert!(ck.join(f).exists(), "{f} missing");
    }
    let r = report(&ck);
    let epochs = r["epochs"].as_array().unwrap();
    assert!(!epochs.is_empty() && epochs.len() <= 4);
    for (i, e) in epochs.iter().enumerate() {
        assert_eq!(e["epoch"].as_u64(), Some(i as u64 + 1));
        assert!(e["train_loss"].as_f64().unwrap().is_finite());
    }
    assert_eq!(r["metric"], "accuracy");
    assert!(r["test"]["accuracy"].is_number());
    let printed: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(printed, r["test"]);
    assert!(stderr(&out).contains("epoch 1 loss"));
}

#[test]
fn eval_reproduces_best_validation_metric() {
    let ws = Workspace::new();
    assert_eq!(ws.train(json!({})).status.code(), Some(0));
    let ck = ws.path("ck");
    let out = exam(&[
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--data",
        ck.join("validation.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    let best = report(&ck)["best_validation_metric"].as_f64().unwrap();
    assert!(
        (summary["accuracy"].as_f64().unwrap() - best).abs() <= 1e-6,
        "{summary} vs {best}"
    );
}

#[test]
fn predict_is_sorted_normalised_and_deterministic() {
    let ws = Workspace::new();
    assert_eq!(ws.train(json!({})).status.code(), Some(0));
    let ck = ws.path("ck");
    let args = [
        "predict",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--text",
        "w1 key2 w3 w4",
    ];
    let a = exam(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&exam(&args)));
    let v: Value = serde_json::from_str(stdout(&a).trim()).unwrap();
    assert_eq!(v["task"], "multiclass");
    let top = v["top"].as_array().unwrap();
    assert_eq!(top.len(), 4);
    let probs: Vec<f64> = top.iter().map(|t| t["probability"].as_f64().unwrap()).collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    let c = top[0]["class"].as_u64().unwrap();
    assert_eq!(top[0]["name"], c.to_string());
}

#[test]
fn export_interaction_shape_and_alignment() {
    let ws = Workspace::new();
    assert_eq!(ws.train(json!({})).status.code(), Some(0));
    let ck = ws.path("ck");
    let out_file = ws.path("inter.json");
    let out = exam(&[
        "export-interaction",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--text",
        "w1 key3 unseenword",
        "--out",
        out_file.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rec = InteractionRecord::read_json(&out_file).unwrap();
    assert_eq!(rec.matrix.len(), 4);
    assert!(rec.matrix.iter().all(|row| row.len() == 32));
    assert_eq!(rec.tokens.len(), 32);
    assert_eq!(rec.padding_mask.len(), 32);
    assert_eq!(&rec.tokens[..3], ["w1", "key3", "unseenword"]);
    assert_eq!(rec.padding_mask[..4], [false, false, false, true]);
    assert_eq!(rec.class_names, ["0", "1", "2", "3"]);
}

#[test]
fn export_rejects_baseline_checkpoint() {
    let ws = Workspace::new();
    let out = ws.train(json!({"model": "encoder_only", "max_epochs": 1}));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = exam(&[
        "export-interaction",
        "--checkpoint",
        ws.path("ck").to_str().unwrap(),
        "--text",
        "w1",
        "--out",
        ws.path("x.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!ws.path("x.json").exists());
}

#[test]
fn missing_training_file_is_a_usage_error_naming_the_path() {
    let ws = Workspace::new();
    let out = ws.train(json!({"train_path": "nowhere.csv"}));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.csv"), "{}", stderr(&out));
    assert!(!ws.path("ck").join("meta.json").exists());
}

#[test]
fn empty_training_file_is_a_usage_error() {
    let ws = Workspace::new();
    fs::write(ws.path("empty.csv"), "").unwrap();
    let out = ws.train(json!({"train_path": "empty.csv"}));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no examples"), "{}", stderr(&out));
}

#[test]
fn fasttext_with_gru_is_rejected() {
    let ws = Workspace::new();
    let out = ws.train(json!({"model": "fasttext", "encoder": "gru"}));
    assert_eq!(out.status.code(), Some(2));
    assert!(!ws.path("ck").join("meta.json").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let ws = Workspace::new();
    let out = ws.train(json!({"learning_rate": 0.1}));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn multilabel_checkpoint_refuses_multiclass_data() {
    let ws = Workspace::new();
    let gen = PlantedKeywords::new(6, 60, 6, 20);
    save_examples(&ws.path("ml.tsv"), &gen.multilabel(60, 2, 3)).unwrap();
    let out = ws.train(json!({
        "task": "multilabel",
        "classes": 6,
        "encoder": "gru",
        "max_epochs": 1,
        "train_path": "ml.tsv",
        "test_path": null,
    }));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(ws.path("ck").join("validation.tsv").exists());
    let out = exam(&[
        "eval",
        "--checkpoint",
        ws.path("ck").to_str().unwrap(),
        "--data",
        ws.path("test.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn seed_from_environment_overrides_config() {
    let ws = Workspace::new();
    let run = |seed: Option<&str>| {
        let cfg = ws.write_config("run.json", ws.toy(json!({"max_epochs": 2, "seed": 5})));
        let env: Vec<(&str, &str)> = seed.map(|s| vec![("EXAM_SEED", s)]).unwrap_or_default();
        let out = exam_with_env(&["train", "--config", cfg.to_str().unwrap()], &env);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        fs::read(ws.path("ck").join("weights.bin")).unwrap()
    };
    let from_config = run(None);
    assert_eq!(run(Some("5")), from_config);
    assert_ne!(run(Some("6")), from_config);

    let cfg = ws.path("run.json");
    let out = exam_with_env(&["train", "--config", cfg.to_str().unwrap()], &[("EXAM_SEED", "abc")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    assert_eq!(exam(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(exam(&["eval", "--checkpoint", "x"]).status.code(), Some(2));
    assert_eq!(exam(&["--help"]).status.code(), Some(0));
    let out = exam(&["predict", "--checkpoint", "/definitely/not/here", "--text", "hi"]);
    assert_eq!(out.status.code(), Some(2));
}
