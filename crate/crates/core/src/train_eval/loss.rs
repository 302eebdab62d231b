use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Var;

/// Added under the square root so the gradient at zero residual is defined.
pub const LOSS_EPSILON: f64 = 1e-8;

/// `sqrt(mean((pred - truth)^2) + 1e-8)` over every element.
pub fn rmse_loss<'t, T: Scalar>(pred: Var<'t, T>, truth: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(pred.sub(truth)?.square().mean().add_scalar(T::lit(LOSS_EPSILON)).sqrt())
}
