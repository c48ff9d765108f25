//! Shared test oracles: central finite differences, gradient-check cases and
//! synthetic corpora.
#![allow(dead_code)]

use exam::encoders::{EncoderKind, GruParams, GruVariant, RegionParams};
use exam::model::{Classifier, Mode, ModelConfig, ModelKind};
use exam::synth::PlantedKeywords;
use exam::tensor::{Graph, ParamSet, Tensor, Var};
use exam::text::{encode_examples, tokenize, Example, Instance, Label, SequencePolicy, Task, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;
pub const GRAD_SEEDS: u64 = 20;

pub type Build = Box<dyn Fn(&mut Graph<'_, f64>) -> Var>;

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn eval(params: &ParamSet<f64>, build: &Build) -> f64 {
    let mut g = Graph::new(params);
    let out = build(&mut g);
    g.scalar(out)
}

/// Largest relative error between backpropagated gradients and central
/// differences over every scalar of every parameter.
pub fn max_fd_error(params: &ParamSet<f64>, build: &Build) -> f64 {
    let grads = {
        let mut g = Graph::new(params);
        let out = build(&mut g);
        g.backward(out).expect("backward")
    };
    let mut worst = 0.0f64;
    let mut p = params.clone();
    for id in params.ids() {
        let analytic = grads.dense(id);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = p.get(id).data()[i];
            p.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let plus = eval(&p, build);
            p.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let minus = eval(&p, build);
            p.get_mut(id).data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(a, fd));
        }
    }
    worst
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `sum(v * R)` with a fixed random `R`, so every output entry gets its own
/// upstream gradient.
pub fn readout(g: &mut Graph<'_, f64>, v: Var, seed: u64) -> Var {
    let shape = g.shape(v).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = g.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    let prod = g.mul(v, r).unwrap();
    g.sum(prod)
}

pub struct Case {
    pub name: &'static str,
    pub tol: f64,
    pub make: fn(u64) -> (ParamSet<f64>, Build),
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5))
}

macro_rules! unary_case {
    ($name:literal, $lo:expr, $hi:expr, |$g:ident, $a:ident| $body:expr) => {
        Case {
            name: $name,
            tol: OP_TOL,
            make: |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (m, n, _) = dims(&mut rng);
                let mut ps = ParamSet::new();
                let id = ps.add("a", rand_tensor(&mut rng, &[m, n], $lo, $hi));
                let build: Build = Box::new(move |$g: &mut Graph<'_, f64>| {
                    let $a = $g.param(id);
                    let out = $body;
                    readout($g, out, seed)
                });
                (ps, build)
            },
        }
    };
}

macro_rules! binary_case {
    ($name:literal, $lhs:expr, $rhs:expr, |$g:ident, $a:ident, $b:ident| $body:expr) => {
        Case {
            name: $name,
            tol: OP_TOL,
            make: |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (m, n, k) = dims(&mut rng);
                let shape_of = |which: u8| -> Vec<usize> {
                    match which {
                        0 => vec![m, n],
                        1 => vec![1, n],
                        2 => vec![n, k],
                        _ => vec![m, k],
                    }
                };
                let mut ps = ParamSet::new();
                let ia = ps.add("a", rand_tensor(&mut rng, &shape_of($lhs), -1.0, 1.0));
                let ib = ps.add("b", rand_tensor(&mut rng, &shape_of($rhs), -1.0, 1.0));
                let build: Build = Box::new(move |$g: &mut Graph<'_, f64>| {
                    let $a = $g.param(ia);
                    let $b = $g.param(ib);
                    let out = $body;
                    readout($g, out, seed)
                });
                (ps, build)
            },
        }
    };
}

/// One case per differentiable graph operation.
pub fn op_cases() -> Vec<Case> {
    vec![
        binary_case!("matmul", 0, 2, |g, a, b| g.matmul(a, b).unwrap()),
        unary_case!("transpose", -1.0, 1.0, |g, a| g.transpose(a).unwrap()),
        unary_case!("reshape", -1.0, 1.0, |g, a| {
            let n = g.value(a).numel();
            g.reshape(a, &[n, 1]).unwrap()
        }),
        binary_case!("add", 0, 0, |g, a, b| g.add(a, b).unwrap()),
        binary_case!("add_broadcast_right", 0, 1, |g, a, b| g.add(a, b).unwrap()),
        binary_case!("add_broadcast_left", 1, 0, |g, a, b| g.add(a, b).unwrap()),
        binary_case!("sub", 0, 0, |g, a, b| g.sub(a, b).unwrap()),
        binary_case!("sub_broadcast", 1, 0, |g, a, b| g.sub(a, b).unwrap()),
        binary_case!("mul", 0, 0, |g, a, b| g.mul(a, b).unwrap()),
        binary_case!("mul_broadcast", 0, 1, |g, a, b| g.mul(a, b).unwrap()),
        unary_case!("scale", -1.0, 1.0, |g, a| g.scale(a, -2.5)),
        unary_case!("sigmoid", -3.0, 3.0, |g, a| g.sigmoid(a)),
        unary_case!("tanh", -2.0, 2.0, |g, a| g.tanh(a)),
        unary_case!("relu", -1.0, 1.0, |g, a| g.relu(a)),
        unary_case!("log", 0.2, 3.0, |g, a| g.log(a)),
        unary_case!("neg", -1.0, 1.0, |g, a| g.neg(a)),
        unary_case!("one_minus", -1.0, 1.0, |g, a| g.one_minus(a).unwrap()),
        unary_case!("sum", -1.0, 1.0, |g, a| {
            let sq = g.mul(a, a).unwrap();
            g.sum(sq)
        }),
        unary_case!("mean_axis_0", -1.0, 1.0, |g, a| g.mean_axis(a, 0).unwrap()),
        unary_case!("mean_axis_1", -1.0, 1.0, |g, a| g.mean_axis(a, 1).unwrap()),
        unary_case!("mean_rows", -1.0, 1.0, |g, a| g.mean_rows(a).unwrap()),
        unary_case!("max_axis_0", -1.0, 1.0, |g, a| g.max_axis(a, 0).unwrap()),
        unary_case!("max_axis_1", -1.0, 1.0, |g, a| g.max_axis(a, 1).unwrap()),
        Case {
            name: "softmax",
            tol: OP_TOL,
            make: |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (m, c) = (rng.gen_range(1..4), rng.gen_range(2..7));
                let mut ps = ParamSet::new();
                let id = ps.add("a", rand_tensor(&mut rng, &[m, c], -2.0, 2.0));
                let build: Build = Box::new(move |g: &mut Graph<'_, f64>| {
                    let a = g.param(id);
                    let out = g.softmax(a);
                    readout(g, out, seed)
                });
                (ps, build)
            },
        },
        unary_case!("row", -1.0, 1.0, |g, a| {
            let last = g.shape(a)[0] - 1;
            g.row(a, last).unwrap()
        }),
        unary_case!("stack_rows", -1.0, 1.0, |g, a| {
            let rows: Vec<Var> = (0..g.shape(a)[0]).rev().map(|i| g.row(a, i).unwrap()).collect();
            g.stack_rows(&rows).unwrap()
        }),
        binary_case!("concat_cols", 0, 3, |g, a, b| g.concat_cols(a, b).unwrap()),
        Case {
            name: "mean_axis_rank3",
            tol: OP_TOL,
            make: |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (m, n, k) = dims(&mut rng);
                let mut ps = ParamSet::new();
                let id = ps.add("a", rand_tensor(&mut rng, &[m, n, k], -1.0, 1.0));
                let build: Build = Box::new(move |g: &mut Graph<'_, f64>| {
                    let a = g.param(id);
                    let out = g.mean_axis(a, 1).unwrap();
                    readout(g, out, seed)
                });
                (ps, build)
            },
        },
        Case {
            name: "embedding_lookup",
            tol: OP_TOL,
            make: |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (v, k, n) = (rng.gen_range(2..6), rng.gen_range(1..4), rng.gen_range(1..7));
                let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..v)).collect();
                let mut ps = ParamSet::new();
                let id = ps.add("table", rand_tensor(&mut rng, &[v, k], -1.0, 1.0));
                let build: Build = Box::new(move |g: &mut Graph<'_, f64>| {
                    let t = g.param(id);
                    let out = g.embedding_lookup(t, &ids).unwrap();
                    readout(g, out, seed)
                });
                (ps, build)
            },
        },
        Case {
            name: "embedding_lookup_rank3",
            tol: OP_TOL,
            make: |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (v, w, k, n) = (
                    rng.gen_range(2..5),
                    rng.gen_range(1..4),
                    rng.gen_range(1..3),
                    rng.gen_range(1..6),
                );
                let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..v)).collect();
                let mut ps = ParamSet::new();
                let id = ps.add("table", rand_tensor(&mut rng, &[v, w, k], -1.0, 1.0));
                let build: Build = Box::new(move |g: &mut Graph<'_, f64>| {
                    let t = g.param(id);
                    let out = g.embedding_lookup(t, &ids).unwrap();
                    readout(g, out, seed)
                });
                (ps, build)
            },
        },
        Case {
            name: "region_max",
            tol: OP_TOL,
            make: |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (n, k, s) = (rng.gen_range(1..7), rng.gen_range(1..4), rng.gen_range(0..3));
                let mut ps = ParamSet::new();
                let w = ps.add("weights", rand_tensor(&mut rng, &[n, 2 * s + 1, k], -1.0, 1.0));
                let e = ps.add("embeds", rand_tensor(&mut rng, &[n, k], -1.0, 1.0));
                let build: Build = Box::new(move |g: &mut Graph<'_, f64>| {
                    let (w, e) = (g.param(w), g.param(e));
                    let out = g.region_max(w, e, s).unwrap();
                    readout(g, out, seed)
                });
                (ps, build)
            },
        },
        Case {
            name: "softmax_cross_entropy",
            tol: OP_TOL,
            make: |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let c = rng.gen_range(2..8);
                let target = rng.gen_range(0..c);
                let mut ps = ParamSet::new();
                let id = ps.add("logits", rand_tensor(&mut rng, &[1, c], -3.0, 3.0));
                let build: Build = Box::new(move |g: &mut Graph<'_, f64>| {
                    let z = g.param(id);
                    g.softmax_cross_entropy(z, target).unwrap()
                });
                (ps, build)
            },
        },
        Case {
            name: "sigmoid_binary_cross_entropy",
            tol: OP_TOL,
            make: |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let c = rng.gen_range(1..8);
                let targets: Vec<f64> = (0..c).map(|_| f64::from(rng.gen_bool(0.4) as u8)).collect();
                let mut ps = ParamSet::new();
                let id = ps.add("logits", rand_tensor(&mut rng, &[1, c], -3.0, 3.0));
                let build: Build = Box::new(move |g: &mut Graph<'_, f64>| {
                    let z = g.param(id);
                    g.sigmoid_binary_cross_entropy(z, &targets).unwrap()
                });
                (ps, build)
            },
        },
    ]
}

fn random_ids(rng: &mut ChaCha8Rng, n: usize, v: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..v)).collect()
}

/// The two encoders (plus the reset-free GRU variant), checked on their own.
pub fn encoder_cases() -> Vec<Case> {
    vec![
        Case {
            name: "region_encoder",
            tol: OP_TOL,
            make: |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (v, k, n, s) = (
                    rng.gen_range(3..8),
                    rng.gen_range(1..5),
                    rng.gen_range(1..8),
                    rng.gen_range(0..3),
                );
                let ids = random_ids(&mut rng, n, v);
                let mut ps = ParamSet::new();
                let p = RegionParams::init(&mut ps, v, k, s, &mut rng);
                for id in ps.ids().collect::<Vec<_>>() {
                    let shape = ps.get(id).shape().to_vec();
                    *ps.get_mut(id) = rand_tensor(&mut rng, &shape, -1.0, 1.0);
                }
                let build: Build = Box::new(move |g: &mut Graph<'_, f64>| {
                    let out = exam::encoders::region_encode(g, &ids, &p).unwrap();
                    readout(g, out, seed)
                });
                (ps, build)
            },
        },
        Case {
            name: "gru_encoder",
            tol: OP_TOL,
            make: |seed| gru_case(seed, GruVariant::Standard),
        },
        Case {
            name: "gru_encoder_as_printed",
            tol: OP_TOL,
            make: |seed| gru_case(seed, GruVariant::AsPrinted),
        },
    ]
}

fn gru_case(seed: u64, variant: GruVariant) -> (ParamSet<f64>, Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, k, hidden, n) = (
        rng.gen_range(3..8),
        rng.gen_range(1..4),
        rng.gen_range(1..4),
        rng.gen_range(1..6),
    );
    let ids = random_ids(&mut rng, n, v);
    let mut ps = ParamSet::new();
    let embedding = ps.add("embedding", rand_tensor(&mut rng, &[v, k], -1.0, 1.0));
    let cell = GruParams::init(&mut ps, k, hidden, variant, &mut rng);
    let build: Build = Box::new(move |g: &mut Graph<'_, f64>| {
        let out = exam::encoders::gru_encode(g, &ids, &cell, embedding).unwrap();
        readout(g, out, seed)
    });
    (ps, build)
}

pub fn small_config(model: ModelKind, encoder: EncoderKind, task: Task) -> ModelConfig {
    ModelConfig {
        task,
        model,
        encoder,
        vocab_size: 9,
        seq_len: 5,
        embed_dim: 3,
        region_radius: 1,
        gru_hidden: 3,
        aggregation_hidden: 4,
        classes: 6,
        gru_variant: GruVariant::Standard,
        mask_padding_interactions: false,
        dropout: 0.0,
    }
}

fn model_case(seed: u64, model: ModelKind, encoder: EncoderKind, task: Task) -> (ParamSet<f64>, Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_config(model, encoder, task);
    let mut m = Classifier::<f64>::new(cfg.clone(), seed).unwrap();
    for id in m.params().ids().collect::<Vec<_>>() {
        let shape = m.params().get(id).shape().to_vec();
        *m.params_mut().get_mut(id) = rand_tensor(&mut rng, &shape, -0.8, 0.8);
    }
    let ids = random_ids(&mut rng, cfg.seq_len, cfg.vocab_size);
    let label = match task {
        Task::Multiclass => Label::Class(rng.gen_range(0..cfg.classes)),
        Task::Multilabel => Label::set([rng.gen_range(0..cfg.classes), rng.gen_range(0..cfg.classes)]),
    };
    let inst = Instance {
        ids,
        label,
        tokens: vec![String::new(); cfg.seq_len],
    };
    let ps = m.params().clone();
    let build: Build = Box::new(move |g: &mut Graph<'_, f64>| m.loss(g, &inst, Mode::Eval).unwrap());
    (ps, build)
}

/// Full classifier losses, checked at the looser end-to-end tolerance.
pub fn model_cases() -> Vec<Case> {
    vec![
        Case {
            name: "exam_region_multiclass",
            tol: END_TO_END_TOL,
            make: |s| model_case(s, ModelKind::Exam, EncoderKind::Region, Task::Multiclass),
        },
        Case {
            name: "exam_gru_multilabel",
            tol: END_TO_END_TOL,
            make: |s| model_case(s, ModelKind::Exam, EncoderKind::Gru, Task::Multilabel),
        },
        Case {
            name: "exam_embed_only_multiclass",
            tol: END_TO_END_TOL,
            make: |s| model_case(s, ModelKind::Exam, EncoderKind::EmbedOnly, Task::Multiclass),
        },
        Case {
            name: "fasttext_multiclass",
            tol: END_TO_END_TOL,
            make: |s| model_case(s, ModelKind::Fasttext, EncoderKind::EmbedOnly, Task::Multiclass),
        },
        Case {
            name: "encoder_only_region_multiclass",
            tol: END_TO_END_TOL,
            make: |s| model_case(s, ModelKind::EncoderOnly, EncoderKind::Region, Task::Multiclass),
        },
        Case {
            name: "encoder_only_gru_multilabel",
            tol: END_TO_END_TOL,
            make: |s| model_case(s, ModelKind::EncoderOnly, EncoderKind::Gru, Task::Multilabel),
        },
    ]
}

/// Worst error of `case` over the seeded instances.
pub fn worst_over_seeds(case: &Case) -> f64 {
    (0..GRAD_SEEDS)
        .map(|seed| {
            let (ps, build) = (case.make)(seed);
            max_fd_error(&ps, &build)
        })
        .fold(0.0, f64::max)
}

/// Encoded synthetic corpus with a vocabulary built on its training part.
pub struct SynthData {
    pub generator: PlantedKeywords,
    pub vocab: Vocabulary,
    pub train: Vec<Instance>,
    pub validation: Vec<Instance>,
    pub test: Vec<Instance>,
    pub test_examples: Vec<Example>,
}

pub fn synth_multiclass(
    generator: PlantedKeywords,
    sizes: (usize, usize, usize),
    seq_len: usize,
    seed: u64,
) -> SynthData {
    let (n_train, n_val, n_test) = sizes;
    let all = generator.multiclass(n_train + n_val + n_test, seed);
    let (train, rest) = all.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    let tokens: Vec<Vec<String>> = train.iter().map(|e| tokenize(&e.text)).collect();
    let vocab = Vocabulary::build(&tokens, 1).unwrap();
    let policy = SequencePolicy::for_task(Task::Multiclass, seq_len);
    SynthData {
        train: encode_examples(train, &vocab, policy),
        validation: encode_examples(val, &vocab, policy),
        test: encode_examples(test, &vocab, policy),
        test_examples: test.to_vec(),
        generator,
        vocab,
    }
}

/// The toy-profile model used by the training and acceptance tests.
pub fn toy_config(model: ModelKind, classes: usize, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        task: Task::Multiclass,
        model,
        encoder: EncoderKind::Region,
        vocab_size,
        seq_len: 32,
        embed_dim: 16,
        region_radius: 1,
        gru_hidden: 16,
        aggregation_hidden: 64,
        classes,
        gru_variant: GruVariant::Standard,
        mask_padding_interactions: false,
        dropout: 0.0,
    }
}

/// Largest logit difference between the FastText forward pass and EXAM with
/// average aggregation and `T = Wᵀ`, on one random draw with c <= 8, n <= 16,
/// k <= 8.
pub fn fasttext_equivalence_gap(seed: u64) -> f64 {
    use exam::model::{exam_average_aggregation_forward, fasttext_forward};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, n, k, v) = (
        rng.gen_range(1..=8),
        rng.gen_range(1..=16),
        rng.gen_range(1..=8),
        rng.gen_range(2..=20),
    );
    let ids = random_ids(&mut rng, n, v);
    let e = rand_tensor(&mut rng, &[v, k], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[k, c], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[1, c], -1.0, 1.0);
    let mut t = Tensor::zeros(&[c, k]);
    for i in 0..k {
        for j in 0..c {
            t.data_mut()[j * k + i] = w.get(&[i, j]);
        }
    }
    let ps = ParamSet::new();
    let mut g = Graph::new(&ps);
    let (ev, wv, bv, tv) = (g.constant(e), g.constant(w), g.constant(b), g.constant(t));
    let fast = fasttext_forward(&mut g, &ids, ev, wv, bv).unwrap();
    let exam = exam_average_aggregation_forward(&mut g, &ids, ev, tv, bv).unwrap();
    g.data(fast)
        .iter()
        .zip(g.data(exam))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Scalar oracle for rank-discounted precision: walks the ranking keeping a
/// running hit count.
pub fn oracle_weighted_precision(top: &[usize; 5], truth: &[usize], log: fn(f64) -> f64) -> f64 {
    let mut hits = 0.0;
    let mut total = 0.0;
    for (i, class) in top.iter().enumerate() {
        if truth.iter().any(|t| t == class) {
            hits += 1.0;
        }
        let pos = (i + 1) as f64;
        total += (hits / pos) / log(pos + 1.0);
    }
    total
}

pub fn oracle_recall(top: &[usize; 5], truth: &[usize]) -> f64 {
    let found = truth.iter().filter(|t| top.contains(t)).count();
    found as f64 / truth.len() as f64
}

pub fn oracle_f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        (p * r) / (p + r)
    }
}

/// A random ranking over `c >= 5` classes and a non-empty truth set.
pub fn random_ranking(rng: &mut ChaCha8Rng) -> ([usize; 5], Vec<usize>) {
    use rand::seq::SliceRandom;
    let c = rng.gen_range(5..30);
    let mut classes: Vec<usize> = (0..c).collect();
    classes.shuffle(rng);
    let top = [classes[0], classes[1], classes[2], classes[3], classes[4]];
    classes.shuffle(rng);
    let m = rng.gen_range(1..=c.min(8));
    let mut truth = classes[..m].to_vec();
    truth.sort_unstable();
    (top, truth)
}
