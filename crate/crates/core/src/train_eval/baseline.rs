use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Historical average: every forecast step is the mean of the `P` history
/// steps, per station and channel. `[P, N, d]` in, `[Q, N, d]` out.
pub fn ha_baseline(history: &Tensor<f64>, horizon: usize) -> Result<Tensor<f64>> {
    if history.rank() != 3 || history.shape()[0] == 0 {
        return invalid(format!("history must be [P >= 1, N, d], got {:?}", history.shape()));
    }
    let mean = history.sum_axis(0)?.scale(1.0 / history.shape()[0] as f64);
    let copies: Vec<&Tensor<f64>> = std::iter::repeat_n(&mean, horizon).collect();
    Tensor::stack(&copies)
}
