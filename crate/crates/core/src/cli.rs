//! `exam` command line: train, eval, predict and export-interaction.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Deserializer};
use serde_json::{json, Map, Value};

use crate::encoders::{EncoderKind, GruVariant};
use crate::error::Error;
use crate::metrics::{LogBase, TOP_K};
use crate::model::{Classifier, ModelConfig, ModelKind};
use crate::text::{
    encode_examples, load_examples, save_examples, split_holdout, tokenize, Example, Instance, Label, SequencePolicy,
    Task, Vocabulary,
};
use crate::train::{evaluate, load_checkpoint, train, AdamConfig, CheckpointTarget, TrainConfig, DEFAULT_GRU_CLIP};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const SEED_ENV: &str = "EXAM_SEED";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Parser)]
#[command(name = "exam", version, about = "Explicit interaction model for text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print metrics of a checkpoint on a labelled data file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Logarithm base of the rank discount in multi-label precision.
        #[arg(long, default_value = "e", value_parser = ["e", "2"])]
        precision_log_base: String,
    },
    /// Print the top classes for one text.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Write the class-by-word interaction matrix of one text as JSON.
    ExportInteraction {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn deserialize_some<'de, D, T>(d: D) -> std::result::Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    T::deserialize(d).map(Some)
}

fn default_max_epochs() -> usize {
    20
}
fn default_patience() -> usize {
    3
}
fn default_validation_fraction() -> f64 {
    0.1
}
fn default_min_count() -> usize {
    1
}

/// Contents of a `train --config` file after profile defaults are merged in.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub model: ModelKind,
    pub encoder: EncoderKind,
    pub embed_dim: usize,
    pub seq_len: usize,
    #[serde(default)]
    pub region_radius: usize,
    #[serde(default)]
    pub gru_hidden: usize,
    /// Defaults to twice `seq_len`.
    #[serde(default)]
    pub aggregation_hidden: Option<usize>,
    pub classes: usize,
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    #[serde(default)]
    pub gru_variant: GruVariant,
    #[serde(default)]
    pub mask_padding_interactions: bool,
    #[serde(default)]
    pub dropout: f64,

    pub lr: f64,
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    /// Absent: on for the GRU encoder only. `null`: off.
    #[serde(default, deserialize_with = "deserialize_some")]
    pub grad_clip: Option<Option<f64>>,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub precision_log_base: LogBase,

    #[serde(default = "default_min_count")]
    pub min_count: usize,
    pub train_path: PathBuf,
    #[serde(default)]
    pub validation_path: Option<PathBuf>,
    /// Share of the training file held out when no validation file is given.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
    /// Defaults to `report.json` inside the checkpoint directory.
    #[serde(default)]
    pub report_path: Option<PathBuf>,
}

/// Named sets of defaults selected with `"profile"` in a run configuration.
pub fn profile(name: &str) -> Option<Value> {
    let v = match name {
        "multiclass-paper" => json!({
            "task": "multiclass",
            "model": "exam",
            "encoder": "region",
            "embed_dim": 128,
            "region_radius": 3,
            "seq_len": 64,
            "lr": 1e-4,
            "batch_size": 16,
        }),
        "multilabel-paper" => json!({
            "task": "multilabel",
            "model": "exam",
            "encoder": "gru",
            "embed_dim": 256,
            "gru_hidden": 1024,
            "seq_len": 30,
            "aggregation_hidden": 60,
            "lr": 1e-3,
            "batch_size": 1000,
        }),
        "toy" => json!({
            "task": "multiclass",
            "model": "exam",
            "encoder": "region",
            "embed_dim": 16,
            "region_radius": 1,
            "seq_len": 32,
            "gru_hidden": 16,
            "lr": 3e-3,
            "batch_size": 8,
        }),
        _ => return None,
    };
    Some(v)
}

pub const PROFILES: [&str; 3] = ["multiclass-paper", "multilabel-paper", "toy"];

impl RunConfig {
    /// Parses a configuration, merging the named profile (if any) under the
    /// file's own keys and resolving relative paths against `base_dir`.
    pub fn from_json(body: &str, base_dir: &Path) -> crate::Result<Self> {
        let value: Value = serde_json::from_str(body).map_err(|e| Error::Config(e.to_string()))?;
        let Value::Object(mut fields) = value else {
            return Err(Error::Config("configuration must be a JSON object".into()));
        };
        let mut merged = Map::new();
        if let Some(p) = fields.remove("profile") {
            let name = p
                .as_str()
                .ok_or_else(|| Error::Config("`profile` must be a string".into()))?;
            let Some(Value::Object(defaults)) = profile(name) else {
                return Err(Error::Config(format!(
                    "unknown profile `{name}`, expected one of {}",
                    PROFILES.join(", ")
                )));
            };
            merged.extend(defaults);
        }
        merged.extend(fields);
        let mut cfg: RunConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.train_path);
        resolve(&mut cfg.checkpoint_dir);
        for p in [&mut cfg.validation_path, &mut cfg.test_path, &mut cfg.report_path]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&body, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.model_config(2).validate()?;
        self.train_config().validate()?;
        if let Some(names) = &self.class_names {
            if names.len() != self.classes {
                return Err(Error::Config(format!(
                    "class_names has {} entries for {} classes",
                    names.len(),
                    self.classes
                )));
            }
        }
        if self.task == Task::Multilabel && self.classes < TOP_K {
            return Err(Error::Config(format!("multilabel needs at least {TOP_K} classes")));
        }
        if self.min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            task: self.task,
            model: self.model,
            encoder: self.encoder,
            vocab_size,
            seq_len: self.seq_len,
            embed_dim: self.embed_dim,
            region_radius: self.region_radius,
            gru_hidden: self.gru_hidden,
            aggregation_hidden: self.aggregation_hidden.unwrap_or(2 * self.seq_len),
            classes: self.classes,
            gru_variant: self.gru_variant,
            mask_padding_interactions: self.mask_padding_interactions,
            dropout: self.dropout,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let default_clip = (self.encoder == EncoderKind::Gru).then_some(DEFAULT_GRU_CLIP);
        TrainConfig {
            optimizer: AdamConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            grad_clip: self.grad_clip.unwrap_or(default_clip),
            log_base: self.precision_log_base,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.class_names
            .clone()
            .unwrap_or_else(|| (0..self.classes).map(|c| c.to_string()).collect())
    }

    pub fn report_path(&self) -> PathBuf {
        self.report_path
            .clone()
            .unwrap_or_else(|| self.checkpoint_dir.join(REPORT_FILE))
    }
}

fn seed_override() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::usage(format!("{SEED_ENV}=`{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn load_nonempty(path: &Path, task: Task, classes: usize) -> CliResult<Vec<Example>> {
    let examples = load_examples(path, task, classes).map_err(CliError::usage)?;
    if examples.is_empty() {
        return Err(CliError::usage(format!("{}: no examples", path.display())));
    }
    Ok(examples)
}

fn cmd_train(config_path: &Path) -> CliResult<()> {
    let mut cfg = RunConfig::load(config_path).map_err(CliError::usage)?;
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    let train_examples = load_nonempty(&cfg.train_path, cfg.task, cfg.classes)?;
    let (train_examples, validation_examples, held_out) = match &cfg.validation_path {
        Some(p) => (train_examples, load_nonempty(p, cfg.task, cfg.classes)?, false),
        None => {
            let (t, v) = split_holdout(train_examples, cfg.validation_fraction, cfg.seed).map_err(CliError::usage)?;
            if t.is_empty() || v.is_empty() {
                return Err(CliError::usage(
                    "training file too small to hold out a validation split",
                ));
            }
            (t, v, true)
        }
    };
    let test_examples = match &cfg.test_path {
        Some(p) => Some(load_nonempty(p, cfg.task, cfg.classes)?),
        None => None,
    };

    let tokens: Vec<Vec<String>> = train_examples.iter().map(|e| tokenize(&e.text)).collect();
    let vocab = Vocabulary::build(&tokens, cfg.min_count).map_err(CliError::usage)?;
    let policy = SequencePolicy::for_task(cfg.task, cfg.seq_len);
    let train_set = encode_examples(&train_examples, &vocab, policy);
    let validation = encode_examples(&validation_examples, &vocab, policy);
    let class_names = cfg.class_names();

    let mut model = Classifier::<f32>::new(cfg.model_config(vocab.len()), cfg.seed).map_err(CliError::usage)?;
    fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| CliError::usage(Error::io(&cfg.checkpoint_dir, e)))?;
    if held_out {
        let ext = match cfg.task {
            Task::Multiclass => "csv",
            Task::Multilabel => "tsv",
        };
        save_examples(
            &cfg.checkpoint_dir.join(format!("validation.{ext}")),
            &validation_examples,
        )
        .map_err(CliError::runtime)?;
    }
    let target = CheckpointTarget {
        dir: &cfg.checkpoint_dir,
        vocab: &vocab,
        class_names: &class_names,
    };
    let report =
        train(&mut model, &train_set, &validation, &cfg.train_config(), Some(target)).map_err(CliError::runtime)?;
    for e in &report.epochs {
        eprintln!(
            "epoch {} loss {:.6} validation {} {:.6} ({:.1}s)",
            e.epoch, e.train_loss, report.metric, e.validation_metric, e.wall_time_secs
        );
    }
    let mut report_json = serde_json::to_value(&report).map_err(CliError::runtime)?;
    if let Some(test) = test_examples {
        let test = encode_examples(&test, &vocab, policy);
        let summary = evaluate(&model, &test, cfg.precision_log_base).map_err(CliError::runtime)?;
        println!("{}", summary.to_json());
        report_json["test"] = serde_json::from_str(&summary.to_json()).map_err(CliError::runtime)?;
    }
    let report_path = cfg.report_path();
    let body = serde_json::to_string_pretty(&report_json).map_err(CliError::runtime)?;
    fs::write(&report_path, body).map_err(|e| CliError::runtime(Error::io(&report_path, e)))?;
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data: &Path, log_base: LogBase) -> CliResult<()> {
    let ck = load_checkpoint(checkpoint).map_err(CliError::usage)?;
    let cfg = ck.model.config();
    let examples = load_nonempty(data, cfg.task, cfg.classes)?;
    let instances = encode_examples(&examples, &ck.vocab, SequencePolicy::for_task(cfg.task, cfg.seq_len));
    let summary = evaluate(&ck.model, &instances, log_base).map_err(CliError::runtime)?;
    println!("{}", summary.to_json());
    Ok(())
}

fn encode_text(ck: &crate::train::Checkpoint, text: &str) -> Instance {
    let cfg = ck.model.config();
    let label = match cfg.task {
        Task::Multiclass => Label::Class(0),
        Task::Multilabel => Label::Set(Vec::new()),
    };
    Instance::from_text(text, label, &ck.vocab, SequencePolicy::for_task(cfg.task, cfg.seq_len))
}

fn cmd_predict(checkpoint: &Path, text: &str) -> CliResult<()> {
    let ck = load_checkpoint(checkpoint).map_err(CliError::usage)?;
    let inst = encode_text(&ck, text);
    let probs = ck.model.predict(&inst.ids).map_err(CliError::runtime)?;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let top: Vec<Value> = order
        .iter()
        .take(TOP_K)
        .map(|&c| json!({"class": c, "name": ck.class_names[c], "probability": probs[c]}))
        .collect();
    println!("{}", json!({ "task": ck.model.config().task, "top": top }));
    Ok(())
}

fn cmd_export(checkpoint: &Path, text: &str, out: &Path) -> CliResult<()> {
    let ck = load_checkpoint(checkpoint).map_err(CliError::usage)?;
    if ck.model.config().model != ModelKind::Exam {
        return Err(CliError::usage(Error::Unsupported(format!(
            "interaction export from a `{}` model",
            ck.model.config().model.as_str()
        ))));
    }
    let inst = encode_text(&ck, text);
    let record = ck
        .model
        .export_interaction(&inst, &ck.class_names)
        .map_err(CliError::runtime)?;
    record.write_json(out).map_err(CliError::runtime)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Train { config } => cmd_train(config),
        Command::Eval {
            checkpoint,
            data,
            precision_log_base,
        } => {
            let base = if precision_log_base == "2" {
                LogBase::Two
            } else {
                LogBase::E
            };
            cmd_eval(checkpoint, data, base)
        }
        Command::Predict { checkpoint, text } => cmd_predict(checkpoint, text),
        Command::ExportInteraction { checkpoint, text, out } => cmd_export(checkpoint, text, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
