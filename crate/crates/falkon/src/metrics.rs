//! Evaluation metrics and the phase-timing report.

use crate::error::{FalkonError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Rmse,
    RelRmse,
    CError,
    OneMinusAuc,
}

impl std::str::FromStr for MetricKind {
    type Err = FalkonError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmse" => Ok(MetricKind::Rmse),
            "rel-rmse" => Ok(MetricKind::RelRmse),
            "c-error" => Ok(MetricKind::CError),
            "one-minus-auc" => Ok(MetricKind::OneMinusAuc),
            other => Err(FalkonError::InvalidArgument(format!(
                "unknown metric '{other}' (expected rmse | rel-rmse | c-error | one-minus-auc)"
            ))),
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MetricKind::Rmse => "rmse",
            MetricKind::RelRmse => "rel-rmse",
            MetricKind::CError => "c-error",
            MetricKind::OneMinusAuc => "one-minus-auc",
        };
        f.write_str(s)
    }
}

/// Wall-clock split between the preconditioner build and the iterative
/// phase.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct PhaseTimings {
    pub preconditioner_seconds: f64,
    pub iterations_seconds: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MetricReport {
    pub metric: MetricKind,
    pub value: f64,
    pub n_eval: usize,
    pub timings: PhaseTimings,
}

impl MetricReport {
    /// Line-oriented `key=value` rendering.
    pub fn to_kv(&self) -> String {
        format!(
            "metric={}\nvalue={:.12e}\nn_eval={}\nprecond_seconds={:.6}\niters_seconds={:.6}",
            self.metric,
            self.value,
            self.n_eval,
            self.timings.preconditioner_seconds,
            self.timings.iterations_seconds
        )
    }
}

/// Computes the requested metric; timings are zero (callers that timed a fit
/// fill them in).
pub fn compute_metric(kind: MetricKind, predictions: &[f64], targets: &[f64]) -> Result<MetricReport> {
    if predictions.len() != targets.len() {
        return Err(FalkonError::DimensionMismatch(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(FalkonError::Metric("empty evaluation set".into()));
    }
    if predictions.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(FalkonError::Metric(
            "metrics require finite predictions and targets".into(),
        ));
    }
    let n = predictions.len();
    let value = match kind {
        MetricKind::Rmse => {
            let mse: f64 = predictions
                .iter()
                .zip(targets)
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>()
                / n as f64;
            mse.sqrt()
        }
        MetricKind::RelRmse => {
            let num: f64 = predictions
                .iter()
                .zip(targets)
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>()
                .sqrt();
            let den: f64 = targets.iter().map(|y| y * y).sum::<f64>().sqrt();
            if den == 0.0 {
                return Err(FalkonError::Metric(
                    "relative RMSE undefined for all-zero targets".into(),
                ));
            }
            num / den
        }
        MetricKind::CError => {
            let wrong = predictions
                .iter()
                .zip(targets)
                .filter(|(p, y)| {
                    let sign = if **p >= 0.0 { 1.0 } else { -1.0 };
                    sign != **y
                })
                .count();
            wrong as f64 / n as f64
        }
        MetricKind::OneMinusAuc => 1.0 - auc(predictions, targets)?,
    };
    Ok(MetricReport {
        metric: kind,
        value,
        n_eval: n,
        timings: PhaseTimings::default(),
    })
}

/// Mann–Whitney AUC of the predictions as a ranking score, with average
/// ranks on ties.
fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(FalkonError::Metric(
            "AUC undefined when one class is absent".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank over the tie group [i, j].
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] > 0.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}
