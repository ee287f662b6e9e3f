//! Reverse-mode autodiff on a flat operation tape.
//!
//! A [`Graph`] owns every tensor produced during one forward pass. Recording
//! order is construction order, which is already topological: an operation can
//! only reference previously returned [`Var`]s. [`Graph::backward`] walks the
//! tape once in reverse, accumulating gradients deterministically; a graph is
//! consumed by its backward pass and must be rebuilt for the next step.
//!
//! Shape violations are programming errors and panic with a description; the
//! panic sites are documented on each method.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Zero-padding rule for [`Graph::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size is `ceil(input / stride)`; zero padding split
    /// evenly with the extra pixel on the bottom/right when odd.
    Same,
    /// No padding; output size `(input - kernel) / stride + 1`.
    Valid,
}

/// How a node's value was produced, plus whatever backward needs.
pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: Padding,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
    },
    MaxPool2x2 {
        x: Var,
        /// Flat spatial index of the window argmax, per output element.
        argmax: Vec<u32>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        /// Per-position channel mean, length `B*H*W`.
        mean: Vec<T>,
        /// Per-position `1 / sqrt(var + eps)`, length `B*H*W`.
        inv_std: Vec<T>,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    SoftmaxChannels {
        x: Var,
    },
    SoftmaxRows {
        x: Var,
    },
    ConcatChannels {
        xs: Vec<Var>,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: T,
    },
    Reshape {
        x: Var,
    },
    TransposeLast2 {
        x: Var,
    },
    Bmm {
        a: Var,
        b: Var,
    },
    SumAll {
        x: Var,
    },
    WeightedNllMean {
        pred: Var,
        /// Constant per-element weight (class weight times one-hot target).
        coeff: Tensor<T>,
        eps: T,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Operation tape: values, recorded ops, and (after backward) gradients.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// Empty tape.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when no nodes have been recorded.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts an input tensor. Gradients are accumulated for it only when
    /// `requires_grad` is set.
    ///
    /// # Panics
    /// If the graph has already been consumed by [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Inserts a non-differentiable input tensor.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// The value of a node.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Whether gradients flow into this node.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// The accumulated gradient of a node, available after [`Graph::backward`]
    /// for nodes that require gradients and received any.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        assert!(
            !self.backward_done,
            "stale tape: graph already consumed by backward; record a fresh forward pass"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---------------------------------------------------------------- //
    // Elementwise operations
    // ---------------------------------------------------------------- //

    /// Elementwise maximum with zero.
    pub fn relu(&mut self, x: Var) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(xv.shape(), data);
        self.push(value, Op::Relu { x }, rg)
    }

    /// Elementwise logistic function.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|&v| stable_sigmoid(v)).collect();
        let value = Tensor::new(xv.shape(), data);
        self.push(value, Op::Sigmoid { x }, rg)
    }

    /// Elementwise sum of two same-shape tensors.
    ///
    /// # Panics
    /// If the shapes differ.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let rg = self.any_grad(&[a, b]);
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            av.shape(),
            bv.shape(),
            "add: shape mismatch {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(av.shape(), data);
        self.push(value, Op::Add { a, b }, rg)
    }

    /// Elementwise product of two same-shape tensors.
    ///
    /// # Panics
    /// If the shapes differ.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let rg = self.any_grad(&[a, b]);
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            av.shape(),
            bv.shape(),
            "mul: shape mismatch {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(av.shape(), data);
        self.push(value, Op::Mul { a, b }, rg)
    }

    /// Multiplication by a compile-time-known constant.
    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|&v| v * k).collect();
        let value = Tensor::new(xv.shape(), data);
        self.push(value, Op::Scale { x, k }, rg)
    }

    /// Sum of all elements, as a rank-1 scalar tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        let mut acc = T::zero();
        for &v in self.nodes[x.0].value.data() {
            acc += v;
        }
        let value = Tensor::new(&[1], vec![acc]);
        self.push(value, Op::SumAll { x }, rg)
    }

    // ---------------------------------------------------------------- //
    // Shape operations
    // ---------------------------------------------------------------- //

    /// Relabels the shape of a contiguous tensor; element count must match.
    ///
    /// # Panics
    /// If the element counts differ.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        let value = self.nodes[x.0].value.clone().reshaped(shape);
        self.push(value, Op::Reshape { x }, rg)
    }

    /// Swaps the last two axes of a rank-4 tensor.
    ///
    /// # Panics
    /// If the rank is not 4.
    pub fn transpose_last2(&mut self, x: Var) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        let xv = &self.nodes[x.0].value;
        let (b, c, n, m) = xv.dims4();
        let value = transpose_last2_tensor(xv, b, c, n, m);
        self.push(value, Op::TransposeLast2 { x }, rg)
    }

    /// Concatenates feature maps along the channel axis.
    ///
    /// # Panics
    /// If the list is empty or batch/spatial dims disagree.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat_channels: empty input list");
        let rg = self.any_grad(xs);
        let (b0, _, h0, w0) = self.nodes[xs[0].0].value.dims4();
        let mut c_total = 0;
        for v in xs {
            let (b, c, h, w) = self.nodes[v.0].value.dims4();
            assert_eq!(
                (b, h, w),
                (b0, h0, w0),
                "concat_channels: batch/spatial mismatch {:?} vs {:?}",
                (b, h, w),
                (b0, h0, w0)
            );
            c_total += c;
        }
        let mut data = vec![T::zero(); b0 * c_total * h0 * w0];
        let plane = h0 * w0;
        for bi in 0..b0 {
            let mut c_off = 0;
            for v in xs {
                let xv = &self.nodes[v.0].value;
                let c = xv.shape()[1];
                let src = &xv.data()[bi * c * plane..(bi + 1) * c * plane];
                let dst_start = (bi * c_total + c_off) * plane;
                data[dst_start..dst_start + c * plane].copy_from_slice(src);
                c_off += c;
            }
        }
        let value = Tensor::from_bchw(b0, c_total, h0, w0, data);
        self.push(value, Op::ConcatChannels { xs: xs.to_vec() }, rg)
    }

    /// A contiguous channel range `[start, start+len)` of a feature map.
    ///
    /// # Panics
    /// If the range exceeds the channel count or `len` is zero.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        let xv = &self.nodes[x.0].value;
        let (b, c, h, w) = xv.dims4();
        assert!(len > 0, "slice_channels: empty slice");
        assert!(
            start + len <= c,
            "slice_channels: range {}..{} exceeds {} channels",
            start,
            start + len,
            c
        );
        let plane = h * w;
        let mut data = vec![T::zero(); b * len * plane];
        for bi in 0..b {
            let src_start = (bi * c + start) * plane;
            let dst_start = bi * len * plane;
            data[dst_start..dst_start + len * plane]
                .copy_from_slice(&xv.data()[src_start..src_start + len * plane]);
        }
        let value = Tensor::from_bchw(b, len, h, w, data);
        self.push(value, Op::SliceChannels { x, start }, rg)
    }

    /// Splits a feature map into `groups` equal channel groups.
    ///
    /// # Panics
    /// If the channel count is not divisible by `groups`.
    pub fn split_channels(&mut self, x: Var, groups: usize) -> Vec<Var> {
        let c = self.nodes[x.0].value.dims4().1;
        assert!(groups > 0, "split_channels: zero groups");
        assert_eq!(
            c % groups,
            0,
            "split_channels: {} channels not divisible by {} groups",
            c,
            groups
        );
        let g = c / groups;
        (0..groups)
            .map(|i| self.slice_channels(x, i * g, g))
            .collect()
    }

    // ---------------------------------------------------------------- //
    // Backward
    // ---------------------------------------------------------------- //

    /// Accumulates `dLoss/dNode` for every gradient-requiring node, walking
    /// the tape once in reverse. Consumes the graph: recording further ops or
    /// calling backward again panics.
    ///
    /// # Panics
    /// If `loss` is not a single-element tensor, or the graph was already
    /// consumed.
    pub fn backward(&mut self, loss: Var) {
        assert!(
            !self.backward_done,
            "stale tape: backward already ran on this graph"
        );
        assert_eq!(
            self.nodes[loss.0].value.numel(),
            1,
            "backward: loss must be scalar, got shape {:?}",
            self.nodes[loss.0].value.shape()
        );
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![T::one()]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            self.dispatch_backward(i, &gout);
            self.grads[i] = Some(gout);
        }
    }

    fn dispatch_backward(&mut self, i: usize, gout: &[T]) {
        // Split borrows: ops/values are read-only here, grads are written.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Relu { x } => {
                let x = *x;
                if self.nodes[x.0].requires_grad {
                    let xd = self.nodes[x.0].value.data();
                    let numel = xd.len();
                    // Read x before borrowing the grad buffer mutably.
                    let contrib: Vec<T> = xd
                        .iter()
                        .zip(gout)
                        .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
                        .collect();
                    let gx = grad_buf(&mut self.grads, x.0, numel);
                    for (o, c) in gx.iter_mut().zip(&contrib) {
                        *o += *c;
                    }
                }
            }
            Op::Sigmoid { x } => {
                let x = *x;
                if self.nodes[x.0].requires_grad {
                    let yd = self.nodes[i].value.data();
                    let contrib: Vec<T> = yd
                        .iter()
                        .zip(gout)
                        .map(|(&y, &g)| g * y * (T::one() - y))
                        .collect();
                    let numel = yd.len();
                    let gx = grad_buf(&mut self.grads, x.0, numel);
                    for (o, c) in gx.iter_mut().zip(&contrib) {
                        *o += *c;
                    }
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                for v in [a, b] {
                    if self.nodes[v.0].requires_grad {
                        let numel = self.nodes[v.0].value.numel();
                        let gv = grad_buf(&mut self.grads, v.0, numel);
                        for (o, &g) in gv.iter_mut().zip(gout) {
                            *o += g;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.nodes[a.0].requires_grad {
                    let bd = self.nodes[b.0].value.data();
                    let contrib: Vec<T> = bd.iter().zip(gout).map(|(&bv, &g)| g * bv).collect();
                    let numel = contrib.len();
                    let ga = grad_buf(&mut self.grads, a.0, numel);
                    for (o, c) in ga.iter_mut().zip(&contrib) {
                        *o += *c;
                    }
                }
                if self.nodes[b.0].requires_grad {
                    let ad = self.nodes[a.0].value.data();
                    let contrib: Vec<T> = ad.iter().zip(gout).map(|(&av, &g)| g * av).collect();
                    let numel = contrib.len();
                    let gb = grad_buf(&mut self.grads, b.0, numel);
                    for (o, c) in gb.iter_mut().zip(&contrib) {
                        *o += *c;
                    }
                }
            }
            Op::Scale { x, k } => {
                let (x, k) = (*x, *k);
                if self.nodes[x.0].requires_grad {
                    let numel = self.nodes[x.0].value.numel();
                    let gx = grad_buf(&mut self.grads, x.0, numel);
                    for (o, &g) in gx.iter_mut().zip(gout) {
                        *o += g * k;
                    }
                }
            }
            Op::SumAll { x } => {
                let x = *x;
                if self.nodes[x.0].requires_grad {
                    let numel = self.nodes[x.0].value.numel();
                    let g = gout[0];
                    let gx = grad_buf(&mut self.grads, x.0, numel);
                    for o in gx.iter_mut() {
                        *o += g;
                    }
                }
            }
            Op::Reshape { x } => {
                let x = *x;
                if self.nodes[x.0].requires_grad {
                    let numel = self.nodes[x.0].value.numel();
                    let gx = grad_buf(&mut self.grads, x.0, numel);
                    for (o, &g) in gx.iter_mut().zip(gout) {
                        *o += g;
                    }
                }
            }
            Op::TransposeLast2 { x } => {
                let x = *x;
                if self.nodes[x.0].requires_grad {
                    // Output has shape (b, c, m, n); transpose the gradient back.
                    let (b, c, m, n) = self.nodes[i].value.dims4();
                    let numel = self.nodes[x.0].value.numel();
                    let mut contrib = vec![T::zero(); numel];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * m * n;
                            for r in 0..m {
                                for s in 0..n {
                                    contrib[base + s * m + r] += gout[base + r * n + s];
                                }
                            }
                        }
                    }
                    let gx = grad_buf(&mut self.grads, x.0, numel);
                    for (o, c) in gx.iter_mut().zip(&contrib) {
                        *o += *c;
                    }
                }
            }
            Op::ConcatChannels { xs } => {
                let xs = xs.clone();
                let (b, c_total, h, w) = self.nodes[i].value.dims4();
                let plane = h * w;
                let mut c_off = 0;
                for v in xs {
                    let c = self.nodes[v.0].value.shape()[1];
                    if self.nodes[v.0].requires_grad {
                        let numel = self.nodes[v.0].value.numel();
                        let gv = grad_buf(&mut self.grads, v.0, numel);
                        for bi in 0..b {
                            let src_start = (bi * c_total + c_off) * plane;
                            let dst_start = bi * c * plane;
                            for j in 0..c * plane {
                                gv[dst_start + j] += gout[src_start + j];
                            }
                        }
                    }
                    c_off += c;
                }
            }
            Op::SliceChannels { x, start } => {
                let (x, start) = (*x, *start);
                if self.nodes[x.0].requires_grad {
                    let (b, len, h, w) = self.nodes[i].value.dims4();
                    let c = self.nodes[x.0].value.shape()[1];
                    let plane = h * w;
                    let numel = self.nodes[x.0].value.numel();
                    let gx = grad_buf(&mut self.grads, x.0, numel);
                    for bi in 0..b {
                        let dst_start = (bi * c + start) * plane;
                        let src_start = bi * len * plane;
                        for j in 0..len * plane {
                            gx[dst_start + j] += gout[src_start + j];
                        }
                    }
                }
            }
            Op::Conv2d { .. }
            | Op::ConvTranspose2d { .. }
            | Op::MaxPool2x2 { .. }
            | Op::LayerNorm { .. }
            | Op::SoftmaxChannels { .. }
            | Op::SoftmaxRows { .. }
            | Op::Bmm { .. }
            | Op::WeightedNllMean { .. } => {
                crate::graph::ops::dispatch_backward(self, i, gout);
            }
        }
    }
}

/// Lazily allocated gradient accumulator for node `j`.
pub(crate) fn grad_buf<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    j: usize,
    numel: usize,
) -> &mut [T] {
    grads[j]
        .get_or_insert_with(|| vec![T::zero(); numel])
        .as_mut_slice()
}

/// Numerically stable logistic function.
#[inline]
fn stable_sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn transpose_last2_tensor<T: Scalar>(
    xv: &Tensor<T>,
    b: usize,
    c: usize,
    n: usize,
    m: usize,
) -> Tensor<T> {
    let mut data = vec![T::zero(); xv.numel()];
    let xd = xv.data();
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * n * m;
            for r in 0..n {
                for s in 0..m {
                    data[base + s * n + r] = xd[base + r * m + s];
                }
            }
        }
    }
    Tensor::new(&[b, c, m, n], data)
}

pub(crate) mod ops;
