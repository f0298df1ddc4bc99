//! Regression metrics shared by every model and report.

use crate::deviation::percentile_linear;
use crate::error::{Error, Result};

/// Evaluation summary in millimetres. `r2` is NaN when the targets are
/// constant (the ratio is undefined there); everything else is finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsBundle {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    /// Empirical 95th percentile of |error|: 95% of predictions fall
    /// within this band of the truth.
    pub ci95: f64,
}

impl MetricsBundle {
    pub fn csv_row(&self) -> String {
        format!("{:?},{:?},{:?},{:?}", self.mae, self.rmse, self.r2, self.ci95)
    }

    pub const CSV_HEADER: &'static str = "mae,rmse,r2,ci95";
}

pub fn compute_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<MetricsBundle> {
    if y_true.is_empty() {
        return Err(Error::Empty("metrics need at least one pair".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::DimMismatch(format!(
            "{} truths vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let n = y_true.len() as f64;
    let mut abs: Vec<f64> = Vec::with_capacity(y_true.len());
    let mut ss_res = 0.0;
    for (t, p) in y_true.iter().zip(y_pred) {
        if !t.is_finite() || !p.is_finite() {
            return Err(Error::InvalidArgument("non-finite value in metrics input".into()));
        }
        let e = p - t;
        abs.push(e.abs());
        ss_res += e * e;
    }
    let mae = abs.iter().sum::<f64>() / n;
    let rmse = (ss_res / n).sqrt();
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { f64::NAN };
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ci95 = percentile_linear(&abs, 95.0);
    // Quadratic mean dominates arithmetic mean; anything else is a bug.
    assert!(rmse >= mae - 1e-12, "rmse {rmse} < mae {mae}");
    Ok(MetricsBundle { mae, rmse, r2, ci95 })
}
