//! Accuracy for multi-class, and rank-weighted precision, recall@5 and F1 for
//! multi-label evaluation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Task;

pub const TOP_K: usize = 5;

/// Logarithm used to discount precision at each rank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "e")]
    E,
    #[serde(rename = "2")]
    Two,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::E => x.ln(),
            LogBase::Two => x.log2(),
        }
    }
}

/// Five distinct classes in decreasing score order, plus the true label set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedPrediction {
    top: [usize; TOP_K],
    truth: Vec<usize>,
}

impl RankedPrediction {
    pub fn new(top: [usize; TOP_K], truth: Vec<usize>) -> Result<Self> {
        for (i, a) in top.iter().enumerate() {
            if top[..i].contains(a) {
                return Err(Error::Contract(format!("duplicate class {a} in top-{TOP_K}")));
            }
        }
        Ok(Self { top, truth })
    }

    /// Ranks classes by score, breaking ties by ascending class id.
    pub fn from_scores<T: Into<f64> + Copy>(scores: &[T], truth: Vec<usize>) -> Result<Self> {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y): (f64, f64) = (scores[a].into(), scores[b].into());
            y.total_cmp(&x).then(a.cmp(&b))
        });
        let top: [usize; TOP_K] = order
            .get(..TOP_K)
            .and_then(|s| s.try_into().ok())
            .ok_or_else(|| Error::Contract(format!("need at least {TOP_K} classes, got {}", scores.len())))?;
        Self::new(top, truth)
    }

    pub fn top(&self) -> &[usize; TOP_K] {
        &self.top
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    fn hits_in_first(&self, pos: usize) -> usize {
        self.top[..pos].iter().filter(|c| self.truth.contains(c)).count()
    }
}

/// Exact-match fraction.
pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let correct = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// `sum_{pos=1..5} Precision@pos / log(pos + 1)`.
pub fn weighted_precision(pred: &RankedPrediction, base: LogBase) -> f64 {
    (1..=TOP_K)
        .map(|pos| {
            let p_at = pred.hits_in_first(pos) as f64 / pos as f64;
            p_at / base.log(pos as f64 + 1.0)
        })
        .sum()
}

/// Upper bound of [`weighted_precision`], reached when every returned class is
/// relevant.
pub fn max_weighted_precision(base: LogBase) -> f64 {
    (1..=TOP_K).map(|pos| 1.0 / base.log(pos as f64 + 1.0)).sum()
}

/// Fraction of the true labels found among the top five.
pub fn recall_at_5(pred: &RankedPrediction) -> Result<f64> {
    if pred.truth.is_empty() {
        return Err(Error::UndefinedMetric("recall with an empty label set".into()));
    }
    Ok(pred.hits_in_first(TOP_K) as f64 / pred.truth.len() as f64)
}

/// `P * R / (P + R)`, zero when both are zero.
pub fn f1(precision: f64, recall5: f64) -> f64 {
    let denom = precision + recall5;
    if denom == 0.0 {
        0.0
    } else {
        precision * recall5 / denom
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalSummary {
    Multiclass {
        count: usize,
        accuracy: f64,
    },
    Multilabel {
        count: usize,
        precision: f64,
        recall_at_5: f64,
        f1: f64,
    },
}

impl EvalSummary {
    pub fn task(&self) -> Task {
        match self {
            EvalSummary::Multiclass { .. } => Task::Multiclass,
            EvalSummary::Multilabel { .. } => Task::Multilabel,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            EvalSummary::Multiclass { count, .. } | EvalSummary::Multilabel { count, .. } => *count,
        }
    }

    /// The number used for model selection: accuracy or F1.
    pub fn headline(&self) -> f64 {
        match self {
            EvalSummary::Multiclass { accuracy, .. } => *accuracy,
            EvalSummary::Multilabel { f1, .. } => *f1,
        }
    }

    /// Single-line JSON with six decimal places.
    pub fn to_json(&self) -> String {
        let mut s = format!("{{\"task\":\"{}\",\"count\":{}", self.task(), self.count());
        match self {
            EvalSummary::Multiclass { accuracy, .. } => {
                let _ = write!(s, ",\"accuracy\":{accuracy:.6}");
            }
            EvalSummary::Multilabel {
                precision,
                recall_at_5,
                f1,
                ..
            } => {
                let _ = write!(
                    s,
                    ",\"precision\":{precision:.6},\"recall_at_5\":{recall_at_5:.6},\"f1\":{f1:.6}"
                );
            }
        }
        s.push('}');
        s
    }
}

pub fn summarize_multiclass(predictions: &[usize], truths: &[usize]) -> Result<EvalSummary> {
    Ok(EvalSummary::Multiclass {
        count: predictions.len(),
        accuracy: accuracy(predictions, truths)?,
    })
}

/// Means of precision and recall over instances, combined with [`f1`].
pub fn summarize_multilabel(preds: &[RankedPrediction], base: LogBase) -> Result<EvalSummary> {
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("multi-label metrics of an empty set".into()));
    }
    let n = preds.len() as f64;
    let precision = preds.iter().map(|p| weighted_precision(p, base)).sum::<f64>() / n;
    let mut recall = 0.0;
    for p in preds {
        recall += recall_at_5(p)?;
    }
    let recall = recall / n;
    Ok(EvalSummary::Multilabel {
        count: preds.len(),
        precision,
        recall_at_5: recall,
        f1: f1(precision, recall),
    })
}
