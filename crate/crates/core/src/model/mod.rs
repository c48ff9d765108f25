//! EXAM and its two baselines assembled into a trainable classifier.
//!
//! * `exam`: encoder, then the class-by-word interaction matrix, then a shared
//!   MLP that turns each class row into a logit.
//! * `fasttext`: mean-pooled word embeddings and a linear layer.
//! * `encoder_only`: any encoder, max-pooled over positions, and a linear layer.

mod export;
mod layers;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use export::InteractionRecord;
pub use layers::{
    aggregate, encoder_only_forward, exam_average_aggregation_forward, fasttext_forward, interact, AggregationVars,
};

use crate::encoders::{Encoder, EncoderKind, GruVariant};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamSet, Real, Tensor, Var};
use crate::text::{Instance, Label, Task, PAD_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Exam,
    Fasttext,
    EncoderOnly,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Exam => "exam",
            ModelKind::Fasttext => "fasttext",
            ModelKind::EncoderOnly => "encoder_only",
        }
    }
}

/// Architecture and dimensions of a classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub task: Task,
    pub model: ModelKind,
    pub encoder: EncoderKind,
    /// v
    pub vocab_size: usize,
    /// n
    pub seq_len: usize,
    /// k
    pub embed_dim: usize,
    /// s; the region spans `2s + 1` words.
    pub region_radius: usize,
    pub gru_hidden: usize,
    /// h, hidden width of the aggregation MLP.
    pub aggregation_hidden: usize,
    /// c
    pub classes: usize,
    #[serde(default)]
    pub gru_variant: GruVariant,
    #[serde(default)]
    pub mask_padding_interactions: bool,
    /// Dropout rate on the word-level representation during training.
    #[serde(default)]
    pub dropout: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
            ("embed_dim", self.embed_dim),
            ("classes", self.classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must cover <pad> and <unk>".into()));
        }
        if self.encoder == EncoderKind::Gru && self.gru_hidden == 0 {
            return Err(Error::Config("gru_hidden must be positive".into()));
        }
        if self.model == ModelKind::Exam && self.aggregation_hidden == 0 {
            return Err(Error::Config("aggregation_hidden must be positive".into()));
        }
        if self.model == ModelKind::Fasttext && self.encoder != EncoderKind::EmbedOnly {
            return Err(Error::Config(format!(
                "model `fasttext` requires encoder `embed_only`, got `{}`",
                serde_json::to_value(self.encoder)?.as_str().unwrap_or("?")
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Width of the rows of `H`.
    pub fn encoder_output_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::Gru => self.gru_hidden,
            EncoderKind::Region | EncoderKind::EmbedOnly => self.embed_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregationParams {
    pub w1: ParamId,
    pub b: ParamId,
    pub w2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
enum Head {
    Exam { classes: ParamId, mlp: AggregationParams },
    Linear { weight: ParamId, bias: ParamId },
}

/// Whether a forward pass is for training (dropout active) or inference.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

/// A classifier with its parameters.
#[derive(Clone, Debug)]
pub struct Classifier<S: Real> {
    config: ModelConfig,
    params: ParamSet<S>,
    encoder: Encoder,
    head: Head,
}

impl<S: Real> Classifier<S> {
    /// Randomly initialised model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = Encoder::init(
            config.encoder,
            &mut params,
            config.vocab_size,
            config.embed_dim,
            config.region_radius,
            config.gru_hidden,
            config.gru_variant,
            &mut rng,
        );
        let width = config.encoder_output_dim();
        let c = config.classes;
        let head = match config.model {
            ModelKind::Exam => {
                let classes = params.add("class_matrix", Tensor::glorot(&[c, width], &mut rng));
                let h = config.aggregation_hidden;
                let mlp = AggregationParams {
                    w1: params.add("aggregation_w1", Tensor::glorot(&[config.seq_len, h], &mut rng)),
                    b: params.add("aggregation_b", Tensor::zeros(&[1, h])),
                    w2: params.add("aggregation_w2", Tensor::glorot(&[h, 1], &mut rng)),
                };
                Head::Exam { classes, mlp }
            }
            ModelKind::Fasttext | ModelKind::EncoderOnly => Head::Linear {
                weight: params.add("fc_weight", Tensor::glorot(&[width, c], &mut rng)),
                bias: params.add("fc_bias", Tensor::zeros(&[1, c])),
            },
        };
        Ok(Self {
            config,
            params,
            encoder,
            head,
        })
    }

    /// Model with the given parameter values; names and shapes must match the
    /// layout implied by `config`.
    pub fn from_params(config: ModelConfig, params: ParamSet<S>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.copy_values_from(&params)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn cast<T: Real>(&self) -> Classifier<T> {
        Classifier {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            head: self.head.clone(),
        }
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.len() != self.config.seq_len {
            return Err(Error::Contract(format!(
                "expected {} token ids, got {}",
                self.config.seq_len,
                ids.len()
            )));
        }
        Ok(())
    }

    fn words(&self, g: &mut Graph<'_, S>, ids: &[usize], mode: Mode<'_>) -> Result<Var> {
        self.check_ids(ids)?;
        let h = self.encoder.encode(g, ids)?;
        match mode {
            Mode::Train(rng) if self.config.dropout > 0.0 => {
                let keep = 1.0 - self.config.dropout;
                let scale = S::from_f64_lossy(1.0 / keep);
                let shape = g.shape(h).to_vec();
                let mut mask = Tensor::<S>::zeros(&shape);
                for m in mask.data_mut() {
                    if rng.gen_bool(keep) {
                        *m = scale;
                    }
                }
                let mask = g.constant(mask);
                g.mul(h, mask)
            }
            _ => Ok(h),
        }
    }

    fn interaction_var(&self, g: &mut Graph<'_, S>, ids: &[usize], words: Var) -> Result<Var> {
        let Head::Exam { classes, .. } = &self.head else {
            return Err(Error::Unsupported(format!(
                "interaction matrix of a `{}` model",
                self.config.model.as_str()
            )));
        };
        let t = g.param(*classes);
        let i = interact(g, words, t)?;
        if self.config.mask_padding_interactions {
            let mask = ids
                .iter()
                .map(|&id| if id == PAD_ID { S::zero() } else { S::one() })
                .collect();
            let mask = g.constant(Tensor::new(&[1, ids.len()], mask)?);
            return g.mul(i, mask);
        }
        Ok(i)
    }

    /// Logits as a `1 x c` row.
    pub fn logits(&self, g: &mut Graph<'_, S>, ids: &[usize], mode: Mode<'_>) -> Result<Var> {
        let words = self.words(g, ids, mode)?;
        match &self.head {
            Head::Exam { mlp, .. } => {
                let i = self.interaction_var(g, ids, words)?;
                let vars = AggregationVars {
                    w1: g.param(mlp.w1),
                    b: g.param(mlp.b),
                    w2: g.param(mlp.w2),
                };
                aggregate(g, i, vars)
            }
            Head::Linear { weight, bias } => {
                let (w, b) = (g.param(*weight), g.param(*bias));
                match self.config.model {
                    ModelKind::Fasttext => {
                        let f = g.mean_rows(words)?;
                        let z = g.matmul(f, w)?;
                        g.add(z, b)
                    }
                    _ => encoder_only_forward(g, words, w, b),
                }
            }
        }
    }

    /// Training loss of one instance: softmax cross-entropy for multi-class,
    /// summed binary cross-entropy for multi-label.
    pub fn loss(&self, g: &mut Graph<'_, S>, instance: &Instance, mode: Mode<'_>) -> Result<Var> {
        self.check_label(&instance.label)?;
        let logits = self.logits(g, &instance.ids, mode)?;
        match &instance.label {
            Label::Class(c) => g.softmax_cross_entropy(logits, *c),
            Label::Set(_) => {
                let targets: Vec<S> = instance
                    .label
                    .multi_hot(self.config.classes)
                    .into_iter()
                    .map(S::from_f64_lossy)
                    .collect();
                g.sigmoid_binary_cross_entropy(logits, &targets)
            }
        }
    }

    fn check_label(&self, label: &Label) -> Result<()> {
        if label.task() != self.config.task {
            return Err(Error::Contract(format!(
                "{} label given to a {} model",
                label.task(),
                self.config.task
            )));
        }
        if let Some(&bad) = label.class_ids().iter().find(|&&c| c >= self.config.classes) {
            return Err(Error::Contract(format!(
                "label {bad} outside [0, {})",
                self.config.classes
            )));
        }
        Ok(())
    }

    /// Class probabilities: softmax for multi-class, independent sigmoids for
    /// multi-label.
    pub fn predict(&self, ids: &[usize]) -> Result<Vec<S>> {
        let mut g = Graph::new(&self.params);
        let logits = self.logits(&mut g, ids, Mode::Eval)?;
        let probs = match self.config.task {
            Task::Multiclass => g.softmax(logits),
            Task::Multilabel => g.sigmoid(logits),
        };
        Ok(g.data(probs).to_vec())
    }

    /// Fixes the sign of the interaction scores without changing any output.
    ///
    /// Negating both the class matrix and the first aggregation layer leaves
    /// every logit unchanged, so training can settle on either sign. This
    /// picks the one where raising a whole interaction row raises the logit
    /// (with all hidden units active), so large scores read as support for
    /// the class. Returns whether the parameters were flipped; a no-op for
    /// the baselines.
    pub fn orient_interactions(&mut self) -> bool {
        let Head::Exam { classes, mlp } = &self.head else {
            return false;
        };
        let (classes, w1_id) = (*classes, mlp.w1);
        let w1 = self.params.get(mlp.w1).data();
        let w2 = self.params.get(mlp.w2).data();
        let h = w2.len();
        let sensitivity: f64 = w1
            .chunks(h)
            .flat_map(|row| row.iter().zip(w2).map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy()))
            .sum();
        if sensitivity >= 0.0 {
            return false;
        }
        for id in [classes, w1_id] {
            self.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = -*x);
        }
        true
    }

    /// The `c x n` interaction matrix for `ids`.
    pub fn interaction_matrix(&self, ids: &[usize]) -> Result<Tensor<S>> {
        if self.config.model != ModelKind::Exam {
            return Err(Error::Unsupported(format!(
                "interaction export from a `{}` model",
                self.config.model.as_str()
            )));
        }
        let mut g = Graph::new(&self.params);
        let words = self.words(&mut g, ids, Mode::Eval)?;
        let i = self.interaction_var(&mut g, ids, words)?;
        Ok(g.value(i).clone())
    }

    pub fn export_interaction(&self, instance: &Instance, class_names: &[String]) -> Result<InteractionRecord> {
        if class_names.len() != self.config.classes {
            return Err(Error::Contract(format!(
                "{} class names for {} classes",
                class_names.len(),
                self.config.classes
            )));
        }
        let matrix = self.interaction_matrix(&instance.ids)?;
        let n = self.config.seq_len;
        Ok(InteractionRecord {
            class_names: class_names.to_vec(),
            tokens: instance.tokens.clone(),
            padding_mask: instance.padding_mask(),
            matrix: matrix.to_f64_vec().chunks(n).map(<[f64]>::to_vec).collect(),
        })
    }
}
