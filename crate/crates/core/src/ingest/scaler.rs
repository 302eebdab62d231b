use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel z-score fitted on a training range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fits means and population standard deviations over `[train, N, d]`
/// restricted to the bins in `train`, pooling all stations.
pub fn fit_scaler(values: &Tensor<f64>, train: Range<usize>) -> Result<Scaler> {
    if values.rank() != 3 {
        return invalid(format!("expected [T, N, d] demand, got {:?}", values.shape()));
    }
    let (t, n, d) = (values.shape()[0], values.shape()[1], values.shape()[2]);
    if train.is_empty() || train.end > t {
        return invalid(format!("training range {train:?} is empty or exceeds {t} bins"));
    }
    let rows = &values.data()[train.start * n * d..train.end * n * d];
    let count = (train.len() * n) as f64;
    let mut mean = vec![0.0; d];
    for cell in rows.chunks_exact(d) {
        for (m, &x) in mean.iter_mut().zip(cell) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; d];
    for cell in rows.chunks_exact(d) {
        for c in 0..d {
            var[c] += (cell[c] - mean[c]).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / count).sqrt()).collect();
    if let Some(c) = std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Numerical(format!("channel {c} has zero variance over the training range")));
    }
    Ok(Scaler { mean, std })
}

impl Scaler {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn map<T: Scalar>(&self, x: &Tensor<T>, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor<T>> {
        let d = self.channels();
        if x.shape().last() != Some(&d) {
            return invalid(format!("scaler has {d} channels, tensor shape is {:?}", x.shape()));
        }
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % d;
            *v = T::lit(f(v.as_f64(), self.mean[c], self.std[c]));
        }
        Ok(out)
    }

    /// Standardizes a tensor whose last axis is the channel axis.
    pub fn transform<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.map(x, |v, m, s| (v - m) / s)
    }

    pub fn inverse<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.map(x, |v, m, s| v * s + m)
    }
}
