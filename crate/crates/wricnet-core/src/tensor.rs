//! Dense row-major tensor values.
//!
//! A `Tensor` is a plain value: shape plus contiguous data. Gradients and
//! operation history live in [`crate::graph::Graph`], which owns one tensor
//! per recorded node. Feature maps use the layout
//! `(batch, channels, height, width)`; parameters use their natural ranks
//! (e.g. `(out, in, kh, kw)` for conv kernels, `(c,)` for biases).

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;

/// Dense row-major array of rank 1 to 4.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from a shape and matching data buffer.
    ///
    /// # Panics
    /// If `data.len()` differs from the shape's element count or the shape is
    /// empty.
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        assert!(!shape.is_empty(), "tensor shape must have at least rank 1");
        let numel: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            numel,
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self::new(shape, vec![T::zero(); numel])
    }

    /// Constant-filled tensor of the given shape.
    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Self::new(shape, vec![value; numel])
    }

    /// Rank-4 feature map `(batch, channels, height, width)`.
    pub fn from_bchw(b: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        Self::new(&[b, c, h, w], data)
    }

    /// Shape as a slice.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of elements.
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Raw data slice, row-major.
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable raw data slice.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Consumes the tensor, returning its data buffer.
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The four dimensions of a rank-4 tensor.
    ///
    /// # Panics
    /// If the rank is not 4.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(
            self.shape.len(),
            4,
            "expected rank-4 tensor, got {:?}",
            self.shape
        );
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    /// Reinterprets the data under a new shape with the same element count.
    ///
    /// # Panics
    /// If the element counts differ.
    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.data.len(),
            "cannot reshape {:?} ({} elements) to {:?}",
            self.shape,
            self.data.len(),
            shape
        );
        self.shape = shape.to_vec();
        self
    }

    /// True when every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute element, zero for the empty tensor.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }
}

/// Row-major offset of `(b, c, y, x)` in a `(bs, cs, hs, ws)` tensor.
#[inline(always)]
pub fn idx4(cs: usize, hs: usize, ws: usize, b: usize, c: usize, y: usize, x: usize) -> usize {
    ((b * cs + c) * hs + y) * ws + x
}
