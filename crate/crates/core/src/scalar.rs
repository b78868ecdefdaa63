//! Scalar abstraction shared by tensors, models and optimizers.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

/// A floating-point element type: `f32` for training, `f64` for reference
/// evaluation in gradient checks.
///
/// Reductions (dot products, means, norms) accumulate in `f64` regardless of
/// the element type; `to_acc`/`from_acc` are the conversions used on those
/// paths.
pub trait Scalar: Float + FromPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static {
    /// Byte width when serialized.
    const BYTES: usize;

    fn to_acc(self) -> f64;
    fn from_acc(v: f64) -> Self;

    fn to_le_bytes_vec(self, out: &mut Vec<u8>);
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    #[inline(always)]
    fn to_acc(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v as f32
    }

    fn to_le_bytes_vec(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    #[inline(always)]
    fn to_acc(self) -> f64 {
        self
    }

    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v
    }

    fn to_le_bytes_vec(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}
