use std::ops::Range;

use super::baseline::ha_baseline;
use super::data::PreparedData;
use super::metrics::{MetricScale, MetricsReport};
use crate::ccgru::Ccrnn;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

pub const EVAL_BATCH: usize = 64;

/// Anything mapping standardized `[B, P, N, d]` history to `[B, Q, N, d]`.
pub trait Forecaster {
    fn forecast(&self, history: &Tensor<f64>, horizon: usize) -> Result<Tensor<f64>>;
}

impl Forecaster for Ccrnn<f64> {
    fn forecast(&self, history: &Tensor<f64>, horizon: usize) -> Result<Tensor<f64>> {
        if horizon != self.config.horizon {
            return shape_err(format!("model forecasts {} steps, {horizon} requested", self.config.horizon));
        }
        self.predict(history)
    }
}

/// The historical-average baseline applied window by window.
#[derive(Clone, Copy, Debug, Default)]
pub struct HistoricalAverage;

impl Forecaster for HistoricalAverage {
    fn forecast(&self, history: &Tensor<f64>, horizon: usize) -> Result<Tensor<f64>> {
        let parts: Vec<Tensor<f64>> = (0..history.shape()[0])
            .map(|b| ha_baseline(&history.select(0, b)?, horizon))
            .collect::<Result<_>>()?;
        Tensor::stack(&parts.iter().collect::<Vec<_>>())
    }
}

/// Free-running forecasts for every window of `range`, on the original scale,
/// paired with the raw targets. Both are `[W, Q, N, d]`.
pub fn forecast_range<F: Forecaster + ?Sized>(model: &F, data: &PreparedData, range: &Range<usize>) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let starts = data.window_starts(range);
    if starts.is_empty() {
        return invalid(format!("range {range:?} holds no complete window"));
    }
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for chunk in starts.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk)?;
        let (_, y_raw) = data.batch_from(&data.raw, chunk)?;
        let out = model.forecast(&x, data.split.horizon)?;
        if out.shape() != y_raw.shape() {
            return shape_err(format!("forecast shape {:?} differs from targets {:?}", out.shape(), y_raw.shape()));
        }
        preds.push(data.scaler.inverse(&out)?);
        truths.push(y_raw);
    }
    let pred = Tensor::concat(&preds.iter().collect::<Vec<_>>(), 0)?;
    let truth = Tensor::concat(&truths.iter().collect::<Vec<_>>(), 0)?;
    Ok((pred, truth))
}

/// Original-scale metrics of free-running forecasts over `range`.
pub fn evaluate<F: Forecaster + ?Sized>(model: &F, data: &PreparedData, range: &Range<usize>) -> Result<MetricsReport> {
    let (pred, truth) = forecast_range(model, data, range)?;
    MetricsReport::from_forecasts(&pred, &truth, MetricScale::Original, data.bin_minutes)
}
