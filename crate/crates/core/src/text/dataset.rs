use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, Vocabulary, PAD_ID, PAD_TOKEN};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Multiclass,
    Multilabel,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Multiclass => "multiclass",
            Task::Multilabel => "multilabel",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    /// Exactly one class.
    Class(usize),
    /// Sorted, deduplicated, non-empty set of classes.
    Set(Vec<usize>),
}

impl Label {
    pub fn task(&self) -> Task {
        match self {
            Label::Class(_) => Task::Multiclass,
            Label::Set(_) => Task::Multilabel,
        }
    }

    pub fn set(ids: impl IntoIterator<Item = usize>) -> Self {
        let ids: BTreeSet<usize> = ids.into_iter().collect();
        Label::Set(ids.into_iter().collect())
    }

    pub fn class_ids(&self) -> &[usize] {
        match self {
            Label::Class(c) => std::slice::from_ref(c),
            Label::Set(s) => s,
        }
    }

    /// One-hot or multi-hot vector of length `classes`.
    pub fn multi_hot(&self, classes: usize) -> Vec<f64> {
        let mut v = vec![0.0; classes];
        for &c in self.class_ids() {
            v[c] = 1.0;
        }
        v
    }
}

/// A labelled raw text.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub label: Label,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadSide {
    Suffix,
    Prefix,
}

/// Which end of an over-long token sequence survives truncation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Keep {
    First,
    Last,
}

/// Fixed-length encoding rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequencePolicy {
    pub len: usize,
    pub pad: PadSide,
    pub keep: Keep,
}

impl SequencePolicy {
    /// Multi-class keeps the head and pads at the end; multi-label keeps the
    /// last `len` tokens and pads at the front so the final positions hold
    /// real tokens.
    pub fn for_task(task: Task, len: usize) -> Self {
        match task {
            Task::Multiclass => Self {
                len,
                pad: PadSide::Suffix,
                keep: Keep::First,
            },
            Task::Multilabel => Self {
                len,
                pad: PadSide::Prefix,
                keep: Keep::Last,
            },
        }
    }

    /// Applies truncation and padding to any token-like sequence.
    pub fn fit<T: Clone>(&self, items: &[T], pad: T) -> Vec<T> {
        let n = self.len;
        let kept = if items.len() > n {
            match self.keep {
                Keep::First => &items[..n],
                Keep::Last => &items[items.len() - n..],
            }
        } else {
            items
        };
        let fill = std::iter::repeat_n(pad, n - kept.len());
        match self.pad {
            PadSide::Suffix => kept.iter().cloned().chain(fill).collect(),
            PadSide::Prefix => fill.chain(kept.iter().cloned()).collect(),
        }
    }
}

/// Maps tokens to ids (unknown tokens to `<unk>`) and fits them to the policy.
pub fn encode(tokens: &[String], vocab: &Vocabulary, policy: SequencePolicy) -> Vec<usize> {
    let ids: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
    policy.fit(&ids, PAD_ID)
}

/// A fixed-length encoded text.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub ids: Vec<usize>,
    pub label: Label,
    /// Token strings aligned with `ids`; padding positions hold `<pad>`.
    pub tokens: Vec<String>,
}

impl Instance {
    pub fn new(tokens: &[String], label: Label, vocab: &Vocabulary, policy: SequencePolicy) -> Self {
        Self {
            ids: encode(tokens, vocab, policy),
            label,
            tokens: policy.fit(tokens, PAD_TOKEN.to_string()),
        }
    }

    pub fn from_text(text: &str, label: Label, vocab: &Vocabulary, policy: SequencePolicy) -> Self {
        Self::new(&tokenize(text), label, vocab, policy)
    }

    pub fn padding_mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&id| id == PAD_ID).collect()
    }
}

pub fn encode_examples(examples: &[Example], vocab: &Vocabulary, policy: SequencePolicy) -> Vec<Instance> {
    examples
        .iter()
        .map(|e| Instance::from_text(&e.text, e.label.clone(), vocab, policy))
        .collect()
}

/// Reads `"class","title","description"` rows with 1-based class indices.
/// Extra trailing text fields are appended to the text.
pub fn load_multiclass_csv(path: &Path, classes: usize) -> Result<Vec<Example>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let line = record.position().map_or(line, |p| p.line() as usize);
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if record.len() < 3 {
            return Err(parse_err(format!(
                "expected class, title and description fields, found {}",
                record.len()
            )));
        }
        let class: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("class `{}` is not an integer", &record[0])))?;
        if class == 0 || class > classes {
            return Err(parse_err(format!("class {class} outside [1, {classes}]")));
        }
        let text = record.iter().skip(1).collect::<Vec<_>>().join(" ");
        out.push(Example {
            label: Label::Class(class - 1),
            text,
        });
    }
    Ok(out)
}

/// Reads `text<TAB>id,id,...` lines with 0-based label ids. Blank lines are
/// skipped.
pub fn load_multilabel_tsv(path: &Path, classes: usize) -> Result<Vec<Example>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in body.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if raw.trim().is_empty() {
            continue;
        }
        let (text, labels) = raw
            .split_once('\t')
            .ok_or_else(|| parse_err("missing tab separator".into()))?;
        if labels.contains('\t') {
            return Err(parse_err("more than one tab separator".into()));
        }
        if labels.trim().is_empty() {
            return Err(parse_err("empty label field".into()));
        }
        let mut ids = BTreeSet::new();
        for part in labels.split(',') {
            let id: usize = part
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("label `{part}` is not an integer")))?;
            if id >= classes {
                return Err(parse_err(format!("label {id} outside [0, {classes})")));
            }
            ids.insert(id);
        }
        out.push(Example {
            label: Label::set(ids),
            text: text.to_string(),
        });
    }
    Ok(out)
}

pub fn load_examples(path: &Path, task: Task, classes: usize) -> Result<Vec<Example>> {
    match task {
        Task::Multiclass => load_multiclass_csv(path, classes),
        Task::Multilabel => load_multilabel_tsv(path, classes),
    }
}

/// Writes examples in the format [`load_examples`] reads: a CSV with an empty
/// title field for multi-class, `text<TAB>ids` lines for multi-label. All
/// examples must share one task.
pub fn save_examples(path: &Path, examples: &[Example]) -> Result<()> {
    let task = examples.first().map_or(Task::Multiclass, |e| e.label.task());
    if examples.iter().any(|e| e.label.task() != task) {
        return Err(Error::Contract("examples mix multiclass and multilabel labels".into()));
    }
    let body = match task {
        Task::Multiclass => {
            let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            for ex in examples {
                let class = (ex.label.class_ids()[0] + 1).to_string();
                writer
                    .write_record([class.as_str(), "", ex.text.as_str()])
                    .map_err(|e| Error::io(path, e.into()))?;
            }
            writer.into_inner().map_err(|e| Error::io(path, e.into_error()))?
        }
        Task::Multilabel => {
            let mut body = String::new();
            for ex in examples {
                if ex.text.contains(['\t', '\n', '\r']) {
                    return Err(Error::Contract(
                        "multi-label text may not contain tabs or newlines".into(),
                    ));
                }
                let ids: Vec<String> = ex.label.class_ids().iter().map(usize::to_string).collect();
                body.push_str(&format!("{}\t{}\n", ex.text, ids.join(",")));
            }
            body.into_bytes()
        }
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}
