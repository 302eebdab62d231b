use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Tensor;

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return shape_err(format!("prediction has {} values, truth has {}", pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return invalid("metrics need at least one value");
    }
    Ok(())
}

pub fn rmse_slice(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

pub fn mae_slice(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Pearson correlation of the two flattened series.
pub fn pcc_slice(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let n = pred.len() as f64;
    let (mp, mt) = (pred.iter().sum::<f64>() / n, truth.iter().sum::<f64>() / n);
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (a, b) = (p - mp, t - mt);
        cov += a * b;
        vp += a * a;
        vt += b * b;
    }
    if vp == 0.0 || vt == 0.0 {
        return Err(Error::Numerical("correlation of a constant series is undefined".into()));
    }
    Ok((cov / (vp.sqrt() * vt.sqrt())).clamp(-1.0, 1.0))
}

fn same_shape(pred: &Tensor<f64>, truth: &Tensor<f64>) -> Result<()> {
    if pred.shape() != truth.shape() {
        return shape_err(format!("prediction shape {:?} differs from truth {:?}", pred.shape(), truth.shape()));
    }
    Ok(())
}

pub fn rmse(pred: &Tensor<f64>, truth: &Tensor<f64>) -> Result<f64> {
    same_shape(pred, truth)?;
    rmse_slice(pred.data(), truth.data())
}

pub fn mae(pred: &Tensor<f64>, truth: &Tensor<f64>) -> Result<f64> {
    same_shape(pred, truth)?;
    mae_slice(pred.data(), truth.data())
}

pub fn pcc(pred: &Tensor<f64>, truth: &Tensor<f64>) -> Result<f64> {
    same_shape(pred, truth)?;
    pcc_slice(pred.data(), truth.data())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// `None` when either series is constant.
    pub pcc: Option<f64>,
}

impl Metrics {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let pcc = match pcc_slice(pred, truth) {
            Ok(r) => Some(r),
            Err(Error::Numerical(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { rmse: rmse_slice(pred, truth)?, mae: mae_slice(pred, truth)?, pcc })
    }
}

pub(crate) fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricScale {
    Standardized,
    Original,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    /// One-based forecast step.
    pub step: usize,
    pub label: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scale: MetricScale,
    pub windows: usize,
    pub overall: Metrics,
    pub per_horizon: Vec<HorizonMetrics>,
}

/// Lead time of step `q` as hours, e.g. `0.5h` for the first half-hour bin.
pub fn horizon_label(step: usize, bin_minutes: i64) -> String {
    format!("{:.1}h", step as f64 * bin_minutes as f64 / 60.0)
}

impl MetricsReport {
    /// Pooled and per-step metrics of `[W, Q, N, d]` forecasts.
    pub fn from_forecasts(pred: &Tensor<f64>, truth: &Tensor<f64>, scale: MetricScale, bin_minutes: i64) -> Result<Self> {
        same_shape(pred, truth)?;
        if pred.rank() != 4 {
            return shape_err(format!("forecasts must be [W, Q, N, d], got {:?}", pred.shape()));
        }
        let (w, q) = (pred.shape()[0], pred.shape()[1]);
        let cell = pred.shape()[2] * pred.shape()[3];
        let overall = Metrics::compute(pred.data(), truth.data())?;
        let mut per_horizon = Vec::with_capacity(q);
        for step in 0..q {
            let gather = |x: &Tensor<f64>| -> Vec<f64> {
                (0..w).flat_map(|i| x.data()[(i * q + step) * cell..(i * q + step + 1) * cell].iter().copied()).collect()
            };
            per_horizon.push(HorizonMetrics {
                step: step + 1,
                label: horizon_label(step + 1, bin_minutes),
                metrics: Metrics::compute(&gather(pred), &gather(truth))?,
            });
        }
        Ok(Self { scale, windows: w, overall, per_horizon })
    }

    /// `horizon,label,rmse,mae,pcc` rows, the pooled row first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("horizon,label,rmse,mae,pcc\n");
        let o = &self.overall;
        out += &format!("all,overall,{},{},{}\n", o.rmse, o.mae, fmt_opt(o.pcc));
        for h in &self.per_horizon {
            let m = &h.metrics;
            out += &format!("{},{},{},{},{}\n", h.step, h.label, m.rmse, m.mae, fmt_opt(m.pcc));
        }
        out
    }
}
