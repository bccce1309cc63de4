use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.n_classes)
            .filter(|&t| t != c)
            .map(|t| self.counts[t][c])
            .sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.n_classes)
            .filter(|&p| p != c)
            .map(|p| self.counts[c][p])
            .sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::contract(format!(
            "{} truth labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if n_classes == 0 {
        return Err(Error::contract("n_classes must be positive"));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::contract(format!(
                "label pair ({t}, {p}) outside 0..{n_classes}"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { n_classes, counts })
}

/// A ratio whose denominator may be zero. Undefined ratios hold 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub undefined: bool,
}

impl Rate {
    pub fn ratio(num: f64, den: f64) -> Self {
        if den > 0.0 {
            Self {
                value: num / den,
                undefined: false,
            }
        } else {
            Self {
                value: 0.0,
                undefined: true,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Rate,
    pub recall: Rate,
    pub f1: Rate,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Metrics of the positive class, for binary tasks.
    pub positive: Option<ClassMetrics>,
    /// Unweighted mean of per-class F1.
    pub macro_f1: f64,
    /// Support-weighted mean of per-class F1.
    pub weighted_f1: f64,
}

/// Harmonic mean of precision and recall; undefined when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> Rate {
    Rate::ratio(2.0 * precision * recall, precision + recall)
}

pub fn metrics(cm: &ConfusionMatrix, positive_class: Option<usize>) -> Result<MetricSet> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::contract("metrics need a non-empty confusion matrix"));
    }
    if let Some(p) = positive_class {
        if p >= cm.n_classes {
            return Err(Error::contract(format!("positive class {p} out of range")));
        }
    }
    let per_class: Vec<ClassMetrics> = (0..cm.n_classes)
        .map(|c| {
            let tp = cm.true_positives(c) as f64;
            let precision = Rate::ratio(tp, tp + cm.false_positives(c) as f64);
            let recall = Rate::ratio(tp, tp + cm.false_negatives(c) as f64);
            let mut f1 = f1_score(precision.value, recall.value);
            f1.undefined |= precision.undefined || recall.undefined;
            ClassMetrics {
                precision,
                recall,
                f1,
                support: cm.support(c),
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|m| m.f1.value).sum::<f64>() / cm.n_classes as f64;
    let weighted_f1 = per_class
        .iter()
        .map(|m| m.f1.value * m.support as f64)
        .sum::<f64>()
        / total as f64;
    Ok(MetricSet {
        accuracy: cm.trace() as f64 / total as f64,
        positive: positive_class.map(|p| per_class[p].clone()),
        per_class,
        macro_f1,
        weighted_f1,
    })
}
