//! Dense tensors, the handful of differentiable operators the encoder and
//! losses need, Adam, and a finite-difference gradient checker.
//!
//! There is no autodiff graph: every operator exposes a forward that returns
//! whatever it needs for its backward, and callers chain backwards by hand.
//! Gradients accumulate into [`ParamSlot::grad`] so shared parameters
//! (unrolled recurrences) sum their contributions.

mod adam;
mod gradcheck;
mod ops;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use adam::{adam_step, clip_global_norm, AdamConfig};
pub use gradcheck::{finite_diff_check, GradCheckReport, GRAD_CHECK_FLOOR};
pub use ops::{
    affine, affine_backward, dropout, lstm_cell, lstm_cell_backward, sigmoid, sq_dist, squared_distance,
    squared_distance_backward, DropoutMask, Gate, LstmCache, LstmLayer,
};
pub use tensor::{ParamSlot, Parameters, Tensor};

/// Floating point element type: `f32` for training, `f64` for verification.
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static {
    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
}
