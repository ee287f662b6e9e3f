//! Floating-point abstraction over `f32` and `f64`.
//!
//! Training runs at 32-bit; gradient checking instantiates the same code at
//! 64-bit. Keeping the precision in the type system (instead of a runtime
//! switch) makes each mode a separate, fully monomorphized code path.

use core::fmt::{Debug, Display};

use num_traits::{Float, NumAssign};

/// Element type of tensors: `f32` or `f64`.
pub trait Scalar: Float + NumAssign + Copy + Debug + Display + Send + Sync + 'static {
    /// Name recorded in checkpoint manifests.
    const DTYPE: &'static str;

    /// Exact for every value a network parameter can take.
    fn from_f64(v: f64) -> Self;

    /// Widening (f32) or identity (f64) conversion.
    fn to_f64(self) -> f64;

    /// Little-endian byte serialization, for checkpoints.
    fn to_le_bytes(self) -> [u8; 8];

    /// Number of meaningful bytes in [`Scalar::to_le_bytes`].
    const BYTE_WIDTH: usize;

    /// Inverse of [`Scalar::to_le_bytes`] over the first `BYTE_WIDTH` bytes.
    fn from_le_bytes(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTE_WIDTH: usize = 4;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn to_le_bytes(self) -> [u8; 8] {
        let b = self.to_bits().to_le_bytes();
        [b[0], b[1], b[2], b[3], 0, 0, 0, 0]
    }

    #[inline]
    fn from_le_bytes(bytes: &[u8]) -> Self {
        f32::from_bits(u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTE_WIDTH: usize = 8;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn to_le_bytes(self) -> [u8; 8] {
        self.to_bits().to_le_bytes()
    }

    #[inline]
    fn from_le_bytes(bytes: &[u8]) -> Self {
        f64::from_bits(u64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ]))
    }
}
