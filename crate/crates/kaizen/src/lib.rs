//! A desk-scale laboratory for semi-supervised sequence training with a
//! continuously improving EMA teacher.
//!
//! The library couples a small differentiable acoustic model with CTC and
//! frame-level KL training criteria, pseudo-label generation, and a training
//! engine in which the teacher's parameters are the exponential moving
//! average of the student's. Everything is deterministic given the seeds in
//! the configuration, so experiments (including collapse of training when
//! the teacher tracks the student too closely) are exactly reproducible.
//!
//! Core math is generic over the scalar type via [`Scalar`]; the trainer and
//! CLI use the [`Real`] (`f64`) aliases exported below.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod data;
pub mod ema;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod trainer;

pub use error::{Error, Result};

/// Index reserved for the CTC blank label in every output distribution.
pub const BLANK: usize = 0;

/// Floating-point scalar for core math: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Conversion from `f64`, for constants and configuration values.
    fn from_config(v: f64) -> Self {
        FromPrimitive::from_f64(v).expect("f64 converts to scalar")
    }

    /// Widening (or identity) conversion to `f64`, for metrics and storage.
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Default scalar used by the trainer, checkpoints, and the CLI.
pub type Real = f64;

/// Parameter vector at the default precision.
pub type ParamVec = numeric::ParameterVector<Real>;

/// Frame matrix (`T x D`) at the default precision.
pub type Matrix = ndarray::Array2<Real>;
