//! Task metrics: accuracy, binary F1, Matthews correlation, Pearson and
//! Spearman correlations, plus the two composite task scores (mean of F1 and
//! accuracy, mean of Pearson and Spearman).

use super::HarnessError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Accuracy,
    F1,
    Mcc,
    Pearson,
    Spearman,
    F1AccMean,
    PearsonSpearmanMean,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::F1 => "f1",
            MetricKind::Mcc => "mcc",
            MetricKind::Pearson => "pearson",
            MetricKind::Spearman => "spearman",
            MetricKind::F1AccMean => "f1_acc_mean",
            MetricKind::PearsonSpearmanMean => "pearson_spearman_mean",
        }
    }
}

/// Metric value plus a flag set when a correlation was forced to 0 by
/// zero-variance inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOutcome {
    pub value: f64,
    pub zero_variance: bool,
}

impl MetricOutcome {
    fn plain(value: f64) -> Self {
        MetricOutcome {
            value,
            zero_variance: false,
        }
    }
}

/// Evaluate a metric. Classification metrics read predictions and labels as
/// class indices; correlations read them as real scores.
pub fn metric(
    kind: MetricKind,
    predictions: &[f64],
    labels: &[f64],
) -> Result<MetricOutcome, HarnessError> {
    if predictions.len() != labels.len() {
        return Err(HarnessError::validation(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.len() < 2 {
        return Err(HarnessError::validation(
            "metrics need at least 2 points".to_string(),
        ));
    }
    Ok(match kind {
        MetricKind::Accuracy => MetricOutcome::plain(accuracy(predictions, labels)),
        MetricKind::F1 => MetricOutcome::plain(f1_binary(predictions, labels)),
        MetricKind::Mcc => MetricOutcome::plain(mcc_binary(predictions, labels)),
        MetricKind::Pearson => pearson(predictions, labels)?,
        MetricKind::Spearman => spearman(predictions, labels)?,
        MetricKind::F1AccMean => MetricOutcome::plain(
            0.5 * (f1_binary(predictions, labels) + accuracy(predictions, labels)),
        ),
        MetricKind::PearsonSpearmanMean => {
            let p = pearson(predictions, labels)?;
            let s = spearman(predictions, labels)?;
            MetricOutcome {
                value: 0.5 * (p.value + s.value),
                zero_variance: p.zero_variance || s.zero_variance,
            }
        }
    })
}

pub fn accuracy(predictions: &[f64], labels: &[f64]) -> f64 {
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| (p.round() - l.round()).abs() < 0.5)
        .count();
    correct as f64 / predictions.len() as f64
}

/// Binary F1 with class 1 as the positive class; 0 when no positives exist
/// on either side.
pub fn f1_binary(predictions: &[f64], labels: &[f64]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &l) in predictions.iter().zip(labels) {
        let p = p.round() as i64;
        let l = l.round() as i64;
        match (p, l) {
            (1, 1) => tp += 1.0,
            (1, _) => fp += 1.0,
            (_, 1) => fn_ += 1.0,
            _ => {}
        }
    }
    if 2.0 * tp + fp + fn_ == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

/// Matthews correlation from the binary confusion matrix; 0 when any
/// marginal is empty (the usual convention for a degenerate denominator).
pub fn mcc_binary(predictions: &[f64], labels: &[f64]) -> f64 {
    let (mut tp, mut tn, mut fp, mut fn_) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&p, &l) in predictions.iter().zip(labels) {
        let p = p.round() as i64;
        let l = l.round() as i64;
        match (p, l) {
            (1, 1) => tp += 1.0,
            (0, 0) => tn += 1.0,
            (1, 0) => fp += 1.0,
            _ => fn_ += 1.0,
        }
    }
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / denom.sqrt()
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<MetricOutcome, HarnessError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(HarnessError::validation(
            "pearson needs two equal-length series of at least 2 points".to_string(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        // Constant series carry no ordering information; define the
        // correlation as 0 and flag it.
        return Ok(MetricOutcome {
            value: 0.0,
            zero_variance: true,
        });
    }
    Ok(MetricOutcome::plain(cov / (vx.sqrt() * vy.sqrt())))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<MetricOutcome, HarnessError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(HarnessError::validation(
            "spearman needs two equal-length series of at least 2 points".to_string(),
        ));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite metric inputs"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // 1-based ranks; tied entries share the average rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}
