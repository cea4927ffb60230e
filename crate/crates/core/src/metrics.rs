//! Confusion-matrix metrics, the B-score, and patience-based early stopping.
//!
//! Ratios with a zero denominator are `None` ("n/a"), never a silent 0. The
//! one exception is the harmonic mean of two zeros, which is 0 by its limit.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Counts with the rule "predict 1 iff probability >= threshold".
pub fn confusion_counts(probabilities: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    if probabilities.len() != labels.len() {
        return Err(invalid!(
            "{} probabilities for {} labels",
            probabilities.len(),
            labels.len()
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in probabilities.iter().zip(labels) {
        let predicted = p >= threshold;
        match (predicted, y) {
            (true, 1) => c.tp += 1,
            (false, 0) => c.tn += 1,
            (true, 0) => c.fp += 1,
            (false, 1) => c.fn_ += 1,
            (_, other) => return Err(invalid!("label must be 0 or 1, got {other}")),
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of two rates in `[0, 1]`; 0 when both are 0.
pub fn b_score(sensitivity: f64, specificity: f64) -> Result<f64> {
    for v in [sensitivity, specificity] {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid!("b_score inputs must lie in [0, 1], got {v}"));
        }
    }
    Ok(harmonic(sensitivity, specificity))
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

fn harmonic_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(harmonic(a?, b?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub b_score: Option<f64>,
    pub counts: ConfusionCounts,
    pub threshold: f64,
}

impl MetricsReport {
    /// The five headline metrics in display order.
    pub fn rows(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("Sensitivity", self.sensitivity),
            ("Specificity", self.specificity),
            ("Precision", self.precision),
            ("F1-Score", self.f1),
            ("B-Score", self.b_score),
        ]
    }

    /// Score used for model selection. When the evaluated set holds one class
    /// only, the missing rate is vacuous and the defined one is used instead;
    /// the second value flags that case.
    pub fn monitored_b_score(&self) -> Option<(f64, bool)> {
        match (self.sensitivity, self.specificity) {
            (Some(_), Some(_)) => self.b_score.map(|b| (b, false)),
            (Some(v), None) | (None, Some(v)) => Some((v, true)),
            (None, None) => None,
        }
    }
}

/// Threshold is recorded verbatim; the counts are assumed to be produced with it.
pub fn compute_metrics(counts: ConfusionCounts, threshold: f64) -> MetricsReport {
    let sensitivity = ratio(counts.tp, counts.tp + counts.fn_);
    let specificity = ratio(counts.tn, counts.tn + counts.fp);
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    MetricsReport {
        sensitivity,
        specificity,
        precision,
        f1: harmonic_opt(precision, sensitivity),
        b_score: harmonic_opt(sensitivity, specificity),
        counts,
        threshold,
    }
}

/// Convenience: counts and report in one call.
pub fn evaluate(probabilities: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    Ok(compute_metrics(confusion_counts(probabilities, labels, threshold)?, threshold))
}

/// Direction in which the monitored quantity improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Goal {
    Maximize,
    Minimize,
}

/// Patience-based early stopping with a snapshot of the best state.
///
/// Only a strict improvement resets the counter. Training continues while
/// fewer than `patience` epochs have passed since the best one, so a run whose
/// best epoch is `b` stops at epoch `b + patience`.
#[derive(Debug, Clone)]
pub struct EarlyStopState<S> {
    pub goal: Goal,
    pub patience: usize,
    pub best_score: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_since_improvement: usize,
    pub history: Vec<f64>,
    snapshot: Option<S>,
}

impl<S> EarlyStopState<S> {
    pub fn new(patience: usize, goal: Goal) -> Result<Self> {
        if patience == 0 {
            return Err(invalid!("patience must be at least 1"));
        }
        Ok(Self {
            goal,
            patience,
            best_score: None,
            best_epoch: None,
            epochs_since_improvement: 0,
            history: Vec::new(),
            snapshot: None,
        })
    }

    fn improves(&self, score: f64) -> bool {
        match self.best_score {
            None => !score.is_nan(),
            Some(best) => match self.goal {
                Goal::Maximize => score > best,
                Goal::Minimize => score < best,
            },
        }
    }

    /// Records one epoch. `snapshot` is only called on improvement. Returns
    /// whether training should continue.
    pub fn update(&mut self, score: f64, epoch: usize, snapshot: impl FnOnce() -> S) -> bool {
        self.history.push(score);
        if self.improves(score) {
            self.best_score = Some(score);
            self.best_epoch = Some(epoch);
            self.epochs_since_improvement = 0;
            self.snapshot = Some(snapshot());
        } else {
            self.epochs_since_improvement += 1;
        }
        self.epochs_since_improvement < self.patience
    }

    pub fn snapshot(&self) -> Option<&S> {
        self.snapshot.as_ref()
    }

    pub fn take_snapshot(&mut self) -> Option<S> {
        self.snapshot.take()
    }
}

/// Free-function form of [`EarlyStopState::update`].
pub fn early_stop_update<S>(
    state: &mut EarlyStopState<S>,
    epoch_score: f64,
    epoch: usize,
    weights_snapshot: impl FnOnce() -> S,
) -> bool {
    state.update(epoch_score, epoch, weights_snapshot)
}
