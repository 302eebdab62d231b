//! Dense tensors and reverse-mode differentiation.

mod dense;
pub mod gradcheck;
mod kernels;
mod params;
mod tape;

pub use dense::{broadcast_shapes, Tensor};
pub use gradcheck::{compare_with_finite_differences, finite_difference_check, objective, GradCheckReport, ParamCheck};
pub use params::{GradientMap, ParamEntry, ParamId, ParamStore};
pub use tape::{Tape, Var};
