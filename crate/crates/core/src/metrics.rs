//! Confusion-matrix accounting and the derived classification metrics.
//!
//! A metric whose denominator is zero is reported as `0.0` and flagged in
//! [`MetricsReport::undefined`] rather than becoming NaN.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, validation_err, Result};

/// `counts[i][j]` = samples of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    class_names: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(config_err!("a confusion matrix needs at least 2 classes"));
        }
        let c = class_names.len();
        Ok(Self {
            class_names,
            counts: vec![0; c * c],
        })
    }

    /// Matrix with classes named `"0"`, `"1"`, ...
    pub fn with_classes(num_classes: usize) -> Result<Self> {
        Self::new((0..num_classes).map(|i| format!("{i}")).collect())
    }

    /// Binary matrix from the four counts, with class 1 as the positive class.
    pub fn from_binary_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        let mut cm = Self::with_classes(2).expect("two classes");
        cm.counts = vec![tn, fp, fn_, tp];
        cm
    }

    pub fn from_counts(class_names: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        let c = class_names.len();
        if counts.len() != c * c {
            return Err(validation_err!("{} counts for {c} classes", counts.len()));
        }
        let mut cm = Self::new(class_names)?;
        cm.counts = counts;
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes() + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn update(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let c = self.num_classes();
        if truth >= c || predicted >= c {
            return Err(validation_err!(
                "label pair ({truth}, {predicted}) out of range for {c} classes"
            ));
        }
        self.counts[truth * c + predicted] += 1;
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = (usize, usize)>>(&mut self, pairs: I) -> Result<()> {
        pairs.into_iter().try_for_each(|(t, p)| self.update(t, p))
    }

    /// Adds another shard's counts.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(validation_err!(
                "cannot merge a {}-class matrix into a {}-class one",
                other.num_classes(),
                self.num_classes()
            ));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.num_classes()).map(|j| self.get(truth, j)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.num_classes())
            .map(|i| self.get(i, predicted))
            .sum()
    }

    /// Same data under a class relabeling: new class `k` is old class `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let c = self.num_classes();
        let mut seen = vec![false; c];
        if perm.len() != c
            || perm
                .iter()
                .any(|&p| p >= c || core::mem::replace(&mut seen[p], true))
        {
            return Err(validation_err!(
                "not a permutation of {c} classes: {perm:?}"
            ));
        }
        let names = perm.iter().map(|&p| self.class_names[p].clone()).collect();
        let counts = (0..c * c)
            .map(|k| self.get(perm[k / c], perm[k % c]))
            .collect();
        Self::from_counts(names, counts)
    }

    /// One-vs-rest counts for `class`.
    pub fn one_vs_rest(&self, class: usize) -> BinaryCounts {
        let tp = self.get(class, class);
        let fp = self.col_sum(class) - tp;
        let fn_ = self.row_sum(class) - tp;
        BinaryCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Averaging {
    /// Precision/recall/F1 of one designated positive class.
    Binary { positive: usize },
    /// Unweighted mean of per-class one-vs-rest metrics.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Names of metrics whose denominator was zero.
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub averaging: Averaging,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub total: u64,
    pub per_class: Vec<ClassMetrics>,
    /// Headline metrics that fell back to 0 because of a zero denominator
    /// (`"all"` for an empty matrix).
    pub undefined: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.into());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(cm: &ConfusionMatrix, class: usize) -> ClassMetrics {
    let c = cm.one_vs_rest(class);
    let mut undefined = Vec::new();
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
    let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut undefined);
    let f1 = if precision + recall == 0.0 {
        undefined.push("f1".into());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        class: cm.class_names()[class].clone(),
        precision,
        recall,
        f1,
        support: c.tp + c.fn_,
        undefined,
    }
}

impl MetricsReport {
    /// Precision, recall and F1 of `positive`; accuracy over all samples.
    pub fn binary(cm: &ConfusionMatrix, positive: usize) -> Result<Self> {
        if cm.num_classes() != 2 || positive > 1 {
            return Err(config_err!(
                "binary metrics need a 2-class matrix and positive class 0 or 1"
            ));
        }
        let per_class: Vec<ClassMetrics> = (0..2).map(|k| class_metrics(cm, k)).collect();
        let head = &per_class[positive];
        let mut undefined = head.undefined.clone();
        let accuracy = ratio(cm.trace(), cm.total(), "accuracy", &mut undefined);
        if cm.total() == 0 {
            undefined = vec!["all".into()];
        }
        Ok(Self {
            averaging: Averaging::Binary { positive },
            accuracy,
            precision: head.precision,
            recall: head.recall,
            f1: head.f1,
            total: cm.total(),
            per_class,
            undefined,
        })
    }

    /// Macro-averaged one-vs-rest metrics; accuracy is `trace / total`.
    pub fn macro_average(cm: &ConfusionMatrix) -> Self {
        let c = cm.num_classes();
        let per_class: Vec<ClassMetrics> = (0..c).map(|k| class_metrics(cm, k)).collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
        let mut undefined = Vec::new();
        let accuracy = ratio(cm.trace(), cm.total(), "accuracy", &mut undefined);
        for name in ["precision", "recall", "f1"] {
            if per_class
                .iter()
                .any(|m| m.undefined.iter().any(|u| u == name))
            {
                undefined.push(name.into());
            }
        }
        if cm.total() == 0 {
            undefined = vec!["all".into()];
        }
        Self {
            averaging: Averaging::Macro,
            accuracy,
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            total: cm.total(),
            per_class,
            undefined,
        }
    }

    pub fn is_undefined(&self) -> bool {
        !self.undefined.is_empty()
    }
}

/// [`MetricsReport::binary`] with class 1 positive.
pub fn binary_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    MetricsReport::binary(cm, 1)
}

pub fn multiclass_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    MetricsReport::macro_average(cm)
}
