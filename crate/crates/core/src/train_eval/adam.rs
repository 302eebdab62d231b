use std::collections::BTreeMap;

use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{GradientMap, ParamStore, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moments keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f64> {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub first: BTreeMap<String, Tensor<T>>,
    pub second: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, grads: &GradientMap<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return invalid(format!("learning rate must be positive, got {lr}"));
    }
    let ids: Vec<_> = store.trainable_ids().collect();
    for &id in &ids {
        let Some(g) = grads.get(id) else {
            return Err(Error::MissingGradient(store.name(id).to_string()));
        };
        if g.shape() != store.get(id).shape() {
            return shape_err(format!("gradient of `{}` has shape {:?}, parameter {:?}", store.name(id), g.shape(), store.get(id).shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    for id in ids {
        let name = store.name(id).to_string();
        let g = grads.get(id).expect("checked above");
        let shape = g.shape().to_vec();
        let m = state.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(shape.clone()));
        let v = state.second.entry(name).or_insert_with(|| Tensor::zeros(shape));
        let p = store.get_mut(id);
        for (((p, m), v), g) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
            let g = g.as_f64();
            let mi = b1 * m.as_f64() + (1.0 - b1) * g;
            let vi = b2 * v.as_f64() + (1.0 - b2) * g * g;
            *m = T::lit(mi);
            *v = T::lit(vi);
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            *p = T::lit(p.as_f64() - update);
        }
    }
    Ok(())
}
