//! Coupled layer-wise graph convolutional recurrent network (CCRNN) for
//! station-level transportation demand forecasting.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin double precision, which is what training and persistence use.

pub mod ccgru;
pub mod cgc;
pub mod error;
pub mod geo;
pub mod graphgen;
pub mod ingest;
pub mod scalar;
pub mod tensor;
pub mod train_eval;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type ParamStore64 = tensor::ParamStore<f64>;
