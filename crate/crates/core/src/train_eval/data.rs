use std::ops::Range;

use crate::error::{invalid, Result};
use crate::ingest::{fit_scaler, DatasetSplit, Scaler};
use crate::tensor::Tensor;

/// Raw and standardized demand with the split and the scaler fitted on its
/// training range.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub raw: Tensor<f64>,
    pub standardized: Tensor<f64>,
    pub scaler: Scaler,
    pub split: DatasetSplit,
    pub bin_minutes: i64,
}

impl PreparedData {
    pub fn new(raw: Tensor<f64>, split: DatasetSplit, bin_minutes: i64) -> Result<Self> {
        if raw.rank() != 3 || raw.shape()[0] != split.total_bins() {
            return invalid(format!("demand {:?} does not match a split over {} bins", raw.shape(), split.total_bins()));
        }
        let scaler = fit_scaler(&raw, split.train.clone())?;
        let standardized = scaler.transform(&raw)?;
        Ok(Self { raw, standardized, scaler, split, bin_minutes })
    }

    pub fn num_stations(&self) -> usize {
        self.raw.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.raw.shape()[2]
    }

    /// Raw demand of the training range, the only slice graph construction may see.
    pub fn training_demand(&self) -> Result<Tensor<f64>> {
        self.raw.slice_axis(0, self.split.train.clone())
    }

    pub fn window_starts(&self, range: &Range<usize>) -> Vec<usize> {
        self.split.windows(range).collect()
    }

    /// Stacks windows of `source` into `[B, P, N, d]` inputs and `[B, Q, N, d]` targets.
    pub fn batch_from(&self, source: &Tensor<f64>, starts: &[usize]) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let (p, q) = (self.split.history, self.split.horizon);
        let inputs: Vec<Tensor<f64>> = starts.iter().map(|&s| source.slice_axis(0, s..s + p)).collect::<Result<_>>()?;
        let targets: Vec<Tensor<f64>> = starts.iter().map(|&s| source.slice_axis(0, s + p..s + p + q)).collect::<Result<_>>()?;
        Ok((Tensor::stack(&inputs.iter().collect::<Vec<_>>())?, Tensor::stack(&targets.iter().collect::<Vec<_>>())?))
    }

    pub fn batch(&self, starts: &[usize]) -> Result<(Tensor<f64>, Tensor<f64>)> {
        self.batch_from(&self.standardized, starts)
    }
}
