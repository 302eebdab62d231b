//! Central finite-difference validation of analytic gradients.

use super::params::{GradientMap, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::Scalar;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_relative_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Pins a closure to the higher-ranked signature the checkers expect, so the
/// returned `Var` may borrow the tape passed in.
pub fn objective<T, F>(f: F) -> F
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &ParamStore<T>) -> Result<Var<'t, T>>,
{
    f
}

/// Differentiates `forward` on a fresh tape and compares every trainable
/// coordinate against `(f(p+h) - f(p-h)) / 2h`.
pub fn finite_difference_check<T, F>(store: &mut ParamStore<T>, forward: F, step: T, tolerance: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &ParamStore<T>) -> Result<Var<'t, T>>,
{
    let analytic = {
        let tape = Tape::new();
        let loss = forward(&tape, store)?;
        tape.backward(loss)?
    };
    compare_with_finite_differences(store, &analytic, forward, step, tolerance)
}

/// Compares a supplied gradient map against central differences of `forward`.
///
/// Failures are reported, not returned as errors.
pub fn compare_with_finite_differences<T, F>(
    store: &mut ParamStore<T>,
    analytic: &GradientMap<T>,
    forward: F,
    step: T,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &ParamStore<T>) -> Result<Var<'t, T>>,
{
    let eval = |s: &ParamStore<T>| -> Result<T> {
        let tape = Tape::new();
        forward(&tape, s)?.value().item()
    };
    let ids: Vec<_> = store.trainable_ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).len();
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for i in 0..n {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + step;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - step;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = ((plus - minus) / (step + step)).as_f64();
            let a = analytic.get(id).map_or(f64::NAN, |g| g.data()[i].as_f64());
            let err = relative_error(a, numeric);
            if !(err <= check.max_relative_error) {
                check.max_relative_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        check.passed = check.max_relative_error < tolerance;
        params.push(check);
    }
    Ok(GradCheckReport { tolerance, params })
}
