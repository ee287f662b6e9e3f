//! Convolution, pooling, normalization, softmax, matmul, and loss kernels.
//!
//! Forward methods validate shapes, run the kernel, and record the op; the
//! backward halves live in [`dispatch_backward`], called from the tape walk.
//! Stride-1 convolutions (the only stride the network uses) take a
//! row-slice fast path that the compiler can vectorize.

use alloc::vec;
use alloc::vec::Vec;

use super::{grad_buf, Graph, Op, Padding, Var};
use crate::scalar::Scalar;
use crate::tensor::{idx4, Tensor};

impl<T: Scalar> Graph<T> {
    /// 2-D convolution with per-output-channel bias.
    ///
    /// `x` is `(B, Cin, H, W)`, `w` is `(Cout, Cin, kh, kw)`, `b` is `(Cout,)`.
    /// `Same` padding keeps `ceil(size/stride)` spatial dims, zero-padded with
    /// the extra pixel on the bottom/right when the total is odd.
    ///
    /// # Panics
    /// On channel mismatch, zero-size spatial dims, zero stride, or a `Valid`
    /// kernel larger than the input.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: Padding) -> Var {
        let rg = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        let (bs, ci, h, wd) = self.value(x).dims4();
        let (co, wci, kh, kw) = self.value(w).dims4();
        assert!(stride >= 1, "conv2d: stride must be >= 1");
        assert!(h > 0 && wd > 0, "conv2d: zero-size spatial dims");
        assert_eq!(
            ci, wci,
            "conv2d: input has {} channels but kernel expects {}",
            ci, wci
        );
        assert_eq!(
            self.value(b).shape(),
            &[co],
            "conv2d: bias shape {:?} does not match {} output channels",
            self.value(b).shape(),
            co
        );
        let geo = ConvGeometry::new(h, wd, kh, kw, stride, padding);
        let out = conv2d_forward(
            self.value(x).data(),
            (bs, ci, h, wd),
            self.value(w).data(),
            self.value(b).data(),
            co,
            (kh, kw),
            &geo,
        );
        let value = Tensor::from_bchw(bs, co, geo.oh, geo.ow, out);
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            },
            rg,
        )
    }

    /// Transposed convolution with kernel 2 and stride 2: exactly doubles the
    /// spatial dims. `x` is `(B, Cin, H, W)`, `w` is `(Cin, Cout, 2, 2)`,
    /// `b` is `(Cout,)`.
    ///
    /// # Panics
    /// On channel mismatch or a kernel that is not `(Cin, Cout, 2, 2)`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let rg = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        let (bs, ci, h, wd) = self.value(x).dims4();
        let (wci, co, kh, kw) = self.value(w).dims4();
        assert_eq!(
            ci, wci,
            "conv_transpose2d: input has {} channels but kernel expects {}",
            ci, wci
        );
        assert_eq!(
            (kh, kw),
            (2, 2),
            "conv_transpose2d: kernel fixed at 2x2, got {}x{}",
            kh,
            kw
        );
        assert_eq!(
            self.value(b).shape(),
            &[co],
            "conv_transpose2d: bias shape {:?} does not match {} output channels",
            self.value(b).shape(),
            co
        );
        let out = convt2d_forward(
            self.value(x).data(),
            (bs, ci, h, wd),
            self.value(w).data(),
            self.value(b).data(),
            co,
        );
        let value = Tensor::from_bchw(bs, co, 2 * h, 2 * wd, out);
        self.push(value, Op::ConvTranspose2d { x, w, b }, rg)
    }

    /// 2x2 max pooling with stride 2; halves the spatial dims. Backward
    /// routes the gradient to the window argmax, first occurrence in
    /// row-major window order on ties.
    ///
    /// # Panics
    /// If height or width is odd or zero.
    pub fn maxpool2x2(&mut self, x: Var) -> Var {
        let rg = self.requires_grad(x);
        let (bs, c, h, w) = self.value(x).dims4();
        assert!(
            h > 0 && w > 0 && h % 2 == 0 && w % 2 == 0,
            "maxpool2x2: spatial dims must be even and non-zero, got {}x{}",
            h,
            w
        );
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); bs * c * oh * ow];
        let mut argmax = vec![0u32; bs * c * oh * ow];
        for bi in 0..bs {
            for ci in 0..c {
                let plane = &xd[idx4(c, h, w, bi, ci, 0, 0)..idx4(c, h, w, bi, ci, 0, 0) + h * w];
                let obase = (bi * c + ci) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (y0, x0) = (2 * oy, 2 * ox);
                        let mut best = plane[y0 * w + x0];
                        let mut best_idx = (y0 * w + x0) as u32;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = (y0 + dy) * w + x0 + dx;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx as u32;
                            }
                        }
                        out[obase + oy * ow + ox] = best;
                        argmax[obase + oy * ow + ox] = best_idx;
                    }
                }
            }
        }
        let value = Tensor::from_bchw(bs, c, oh, ow, out);
        self.push(value, Op::MaxPool2x2 { x, argmax }, rg)
    }

    /// Layer normalization over the channel axis at each spatial position,
    /// then scale by `gamma` and shift by `beta` (both `(C,)`).
    ///
    /// # Panics
    /// If `eps <= 0` or the affine parameter shapes do not match `C`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let rg = self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        let (bs, c, h, w) = self.value(x).dims4();
        assert!(eps > T::zero(), "layer_norm: eps must be positive");
        assert_eq!(
            self.value(gamma).shape(),
            &[c],
            "layer_norm: gamma shape {:?} does not match {} channels",
            self.value(gamma).shape(),
            c
        );
        assert_eq!(
            self.value(beta).shape(),
            &[c],
            "layer_norm: beta shape {:?} does not match {} channels",
            self.value(beta).shape(),
            c
        );
        let plane = h * w;
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let cn = T::from_f64(c as f64);
        let mut out = vec![T::zero(); xd.len()];
        let mut mean = vec![T::zero(); bs * plane];
        let mut inv_std = vec![T::zero(); bs * plane];
        for bi in 0..bs {
            for pos in 0..plane {
                let base = bi * c * plane + pos;
                let mut mu = T::zero();
                for ci in 0..c {
                    mu += xd[base + ci * plane];
                }
                mu /= cn;
                let mut var = T::zero();
                for ci in 0..c {
                    let d = xd[base + ci * plane] - mu;
                    var += d * d;
                }
                var /= cn;
                let r = T::one() / (var + eps).sqrt();
                mean[bi * plane + pos] = mu;
                inv_std[bi * plane + pos] = r;
                for ci in 0..c {
                    let xhat = (xd[base + ci * plane] - mu) * r;
                    out[base + ci * plane] = gd[ci] * xhat + bd[ci];
                }
            }
        }
        let value = Tensor::from_bchw(bs, c, h, w, out);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            },
            rg,
        )
    }

    /// Softmax across the channel axis at each spatial position; channel
    /// sums are 1.
    pub fn softmax_channels(&mut self, x: Var) -> Var {
        let rg = self.requires_grad(x);
        let (bs, c, h, w) = self.value(x).dims4();
        let plane = h * w;
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); xd.len()];
        for bi in 0..bs {
            for pos in 0..plane {
                let base = bi * c * plane + pos;
                let mut mx = xd[base];
                for ci in 1..c {
                    mx = mx.max(xd[base + ci * plane]);
                }
                let mut sum = T::zero();
                for ci in 0..c {
                    let e = (xd[base + ci * plane] - mx).exp();
                    out[base + ci * plane] = e;
                    sum += e;
                }
                for ci in 0..c {
                    out[base + ci * plane] /= sum;
                }
            }
        }
        let value = Tensor::from_bchw(bs, c, h, w, out);
        self.push(value, Op::SoftmaxChannels { x }, rg)
    }

    /// Softmax along the last axis of a rank-4 tensor (row-stochastic rows).
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let rg = self.requires_grad(x);
        let (bs, c, n, m) = self.value(x).dims4();
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); xd.len()];
        for row in 0..bs * c * n {
            let base = row * m;
            let src = &xd[base..base + m];
            let dst = &mut out[base..base + m];
            let mut mx = src[0];
            for &v in &src[1..] {
                mx = mx.max(v);
            }
            let mut sum = T::zero();
            for (o, &v) in dst.iter_mut().zip(src) {
                let e = (v - mx).exp();
                *o = e;
                sum += e;
            }
            for o in dst.iter_mut() {
                *o /= sum;
            }
        }
        let value = Tensor::new(&[bs, c, n, m], out);
        self.push(value, Op::SoftmaxRows { x }, rg)
    }

    /// Batched matrix multiply over the leading two axes:
    /// `(B, C, N, K) x (B, C, K, M) -> (B, C, N, M)`.
    ///
    /// # Panics
    /// If batch axes differ or inner dims do not match.
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let (ba, ca, n, ka) = self.value(a).dims4();
        let (bb, cb, kb, m) = self.value(b).dims4();
        assert_eq!(
            (ba, ca),
            (bb, cb),
            "bmm: batch axes mismatch {:?} vs {:?}",
            (ba, ca),
            (bb, cb)
        );
        assert_eq!(ka, kb, "bmm: inner dims mismatch {} vs {}", ka, kb);
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![T::zero(); ba * ca * n * m];
        for batch in 0..ba * ca {
            let abase = batch * n * ka;
            let bbase = batch * ka * m;
            let obase = batch * n * m;
            for r in 0..n {
                let orow = &mut out[obase + r * m..obase + (r + 1) * m];
                for k in 0..ka {
                    let av = ad[abase + r * ka + k];
                    if av == T::zero() {
                        continue;
                    }
                    let brow = &bd[bbase + k * m..bbase + (k + 1) * m];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        let value = Tensor::new(&[ba, ca, n, m], out);
        self.push(value, Op::Bmm { a, b }, rg)
    }

    /// Mean over pixels of `-sum_c coeff_c * ln(pred_c + eps)`, where `coeff`
    /// is a constant weight map (class weight times one-hot target). Returns
    /// a scalar node.
    ///
    /// # Panics
    /// If shapes differ or `eps <= 0`.
    pub fn weighted_nll_mean(&mut self, pred: Var, coeff: Tensor<T>, eps: T) -> Var {
        let rg = self.requires_grad(pred);
        let pv = self.value(pred);
        assert!(eps > T::zero(), "weighted_nll_mean: eps must be positive");
        assert_eq!(
            pv.shape(),
            coeff.shape(),
            "weighted_nll_mean: prediction shape {:?} vs weight shape {:?}",
            pv.shape(),
            coeff.shape()
        );
        let (bs, _c, h, w) = pv.dims4();
        let npix = T::from_f64((bs * h * w) as f64);
        let mut acc = T::zero();
        for (&p, &k) in pv.data().iter().zip(coeff.data()) {
            if k != T::zero() {
                acc -= k * (p + eps).ln();
            }
        }
        let value = Tensor::new(&[1], vec![acc / npix]);
        self.push(value, Op::WeightedNllMean { pred, coeff, eps }, rg)
    }
}

/// Padding/output geometry shared by the conv2d forward and backward passes.
struct ConvGeometry {
    oh: usize,
    ow: usize,
    pt: isize,
    pl: isize,
    stride: usize,
    h: usize,
    w: usize,
}

impl ConvGeometry {
    fn new(h: usize, w: usize, kh: usize, kw: usize, stride: usize, padding: Padding) -> Self {
        let (oh, ow, pt, pl) = match padding {
            Padding::Same => {
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
                let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
                (oh, ow, (pad_h / 2) as isize, (pad_w / 2) as isize)
            }
            Padding::Valid => {
                assert!(
                    h >= kh && w >= kw,
                    "conv2d: valid padding needs input >= kernel, got {}x{} vs {}x{}",
                    h,
                    w,
                    kh,
                    kw
                );
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
        };
        Self {
            oh,
            ow,
            pt,
            pl,
            stride,
            h,
            w,
        }
    }
}

fn conv2d_forward<T: Scalar>(
    xd: &[T],
    (bs, ci, h, w): (usize, usize, usize, usize),
    wd: &[T],
    bias: &[T],
    co: usize,
    (kh, kw): (usize, usize),
    geo: &ConvGeometry,
) -> Vec<T> {
    let (oh, ow) = (geo.oh, geo.ow);
    let mut out = vec![T::zero(); bs * co * oh * ow];
    if geo.stride == 1 {
        for bi in 0..bs {
            for oc in 0..co {
                let obase = (bi * co + oc) * oh * ow;
                out[obase..obase + oh * ow].fill(bias[oc]);
                for ic in 0..ci {
                    let xbase = (bi * ci + ic) * h * w;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wd[((oc * ci + ic) * kh + ky) * kw + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            accumulate_rows_stride1(
                                &mut out[obase..obase + oh * ow],
                                &xd[xbase..xbase + h * w],
                                wv,
                                geo,
                                ky as isize,
                                kx as isize,
                            );
                        }
                    }
                }
            }
        }
    } else {
        for bi in 0..bs {
            for oc in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[oc];
                        for ic in 0..ci {
                            for ky in 0..kh {
                                let iy = (oy * geo.stride + ky) as isize - geo.pt;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * geo.stride + kx) as isize - geo.pl;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += xd[idx4(ci, h, w, bi, ic, iy as usize, ix as usize)]
                                        * wd[((oc * ci + ic) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[idx4(co, oh, ow, bi, oc, oy, ox)] = acc;
                    }
                }
            }
        }
    }
    out
}

/// `out[oy][ox] += wv * x[oy+ky-pt][ox+kx-pl]` over the in-bounds range, for
/// stride 1. The inner loop is a slice zip the compiler vectorizes.
#[inline]
fn accumulate_rows_stride1<T: Scalar>(
    out: &mut [T],
    x: &[T],
    wv: T,
    geo: &ConvGeometry,
    ky: isize,
    kx: isize,
) {
    let (oh, ow, h, w) = (geo.oh, geo.ow, geo.h, geo.w);
    let dy = ky - geo.pt;
    let dx = kx - geo.pl;
    let oy0 = (-dy).max(0) as usize;
    let oy1 = ((h as isize - dy).min(oh as isize)).max(0) as usize;
    let ox0 = (-dx).max(0) as usize;
    let ox1 = ((w as isize - dx).min(ow as isize)).max(0) as usize;
    if ox0 >= ox1 {
        return;
    }
    for oy in oy0..oy1 {
        let iy = (oy as isize + dy) as usize;
        let ix0 = (ox0 as isize + dx) as usize;
        let orow = &mut out[oy * ow + ox0..oy * ow + ox1];
        let xrow = &x[iy * w + ix0..iy * w + ix0 + (ox1 - ox0)];
        for (o, &xv) in orow.iter_mut().zip(xrow) {
            *o += wv * xv;
        }
    }
}

/// `gx[oy+ky-pt][ox+kx-pl] += wv * gy[oy][ox]`: the adjoint of the stride-1
/// row accumulation.
#[inline]
fn scatter_rows_stride1<T: Scalar>(
    gx: &mut [T],
    gy: &[T],
    wv: T,
    geo: &ConvGeometry,
    ky: isize,
    kx: isize,
) {
    let (oh, ow, h, w) = (geo.oh, geo.ow, geo.h, geo.w);
    let dy = ky - geo.pt;
    let dx = kx - geo.pl;
    let oy0 = (-dy).max(0) as usize;
    let oy1 = ((h as isize - dy).min(oh as isize)).max(0) as usize;
    let ox0 = (-dx).max(0) as usize;
    let ox1 = ((w as isize - dx).min(ow as isize)).max(0) as usize;
    if ox0 >= ox1 {
        return;
    }
    for oy in oy0..oy1 {
        let iy = (oy as isize + dy) as usize;
        let ix0 = (ox0 as isize + dx) as usize;
        let grow = &gy[oy * ow + ox0..oy * ow + ox1];
        let xrow = &mut gx[iy * w + ix0..iy * w + ix0 + (ox1 - ox0)];
        for (o, &gv) in xrow.iter_mut().zip(grow) {
            *o += wv * gv;
        }
    }
}

/// Dot product of the overlapping stride-1 ranges of an output-gradient plane
/// and an input plane, for one kernel tap.
#[inline]
fn dot_rows_stride1<T: Scalar>(gy: &[T], x: &[T], geo: &ConvGeometry, ky: isize, kx: isize) -> T {
    let (oh, ow, h, w) = (geo.oh, geo.ow, geo.h, geo.w);
    let dy = ky - geo.pt;
    let dx = kx - geo.pl;
    let oy0 = (-dy).max(0) as usize;
    let oy1 = ((h as isize - dy).min(oh as isize)).max(0) as usize;
    let ox0 = (-dx).max(0) as usize;
    let ox1 = ((w as isize - dx).min(ow as isize)).max(0) as usize;
    let mut acc = T::zero();
    if ox0 >= ox1 {
        return acc;
    }
    for oy in oy0..oy1 {
        let iy = (oy as isize + dy) as usize;
        let ix0 = (ox0 as isize + dx) as usize;
        let grow = &gy[oy * ow + ox0..oy * ow + ox1];
        let xrow = &x[iy * w + ix0..iy * w + ix0 + (ox1 - ox0)];
        for (&gv, &xv) in grow.iter().zip(xrow) {
            acc += gv * xv;
        }
    }
    acc
}

fn convt2d_forward<T: Scalar>(
    xd: &[T],
    (bs, ci, h, w): (usize, usize, usize, usize),
    wd: &[T],
    bias: &[T],
    co: usize,
) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); bs * co * oh * ow];
    for bi in 0..bs {
        for oc in 0..co {
            let obase = (bi * co + oc) * oh * ow;
            out[obase..obase + oh * ow].fill(bias[oc]);
        }
        for ic in 0..ci {
            let xbase = (bi * ci + ic) * h * w;
            for oc in 0..co {
                let obase = (bi * co + oc) * oh * ow;
                for ky in 0..2 {
                    for kx in 0..2 {
                        let wv = wd[((ic * co + oc) * 2 + ky) * 2 + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        for y in 0..h {
                            let orow = obase + (2 * y + ky) * ow + kx;
                            let xrow = xbase + y * w;
                            for x in 0..w {
                                out[orow + 2 * x] += wv * xd[xrow + x];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass for the ops whose kernels live in this module.
pub(crate) fn dispatch_backward<T: Scalar>(g: &mut Graph<T>, i: usize, gout: &[T]) {
    let Graph { nodes, grads, .. } = g;
    match &nodes[i].op {
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            padding,
        } => {
            let (x, w, b) = (*x, *w, *b);
            let (bs, ci, h, wd_) = nodes[x.0].value.dims4();
            let (co, _, kh, kw) = nodes[w.0].value.dims4();
            let geo = ConvGeometry::new(h, wd_, kh, kw, *stride, *padding);
            let xd = nodes[x.0].value.data();
            let wd = nodes[w.0].value.data();
            let (oh, ow) = (geo.oh, geo.ow);
            if nodes[b.0].requires_grad {
                let gb = grad_buf(grads, b.0, co);
                for bi in 0..bs {
                    for oc in 0..co {
                        let obase = (bi * co + oc) * oh * ow;
                        let mut acc = T::zero();
                        for &gv in &gout[obase..obase + oh * ow] {
                            acc += gv;
                        }
                        gb[oc] += acc;
                    }
                }
            }
            if nodes[w.0].requires_grad {
                let gw = grad_buf(grads, w.0, wd.len());
                for bi in 0..bs {
                    for oc in 0..co {
                        let gy = &gout[(bi * co + oc) * oh * ow..(bi * co + oc + 1) * oh * ow];
                        for ic in 0..ci {
                            let xp = &xd[(bi * ci + ic) * h * wd_..(bi * ci + ic + 1) * h * wd_];
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let v = if *stride == 1 {
                                        dot_rows_stride1(gy, xp, &geo, ky as isize, kx as isize)
                                    } else {
                                        dot_rows_strided(gy, xp, &geo, ky as isize, kx as isize)
                                    };
                                    gw[((oc * ci + ic) * kh + ky) * kw + kx] += v;
                                }
                            }
                        }
                    }
                }
            }
            if nodes[x.0].requires_grad {
                let gx = grad_buf(grads, x.0, xd.len());
                for bi in 0..bs {
                    for oc in 0..co {
                        let gy = &gout[(bi * co + oc) * oh * ow..(bi * co + oc + 1) * oh * ow];
                        for ic in 0..ci {
                            let gxp =
                                &mut gx[(bi * ci + ic) * h * wd_..(bi * ci + ic + 1) * h * wd_];
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let wv = wd[((oc * ci + ic) * kh + ky) * kw + kx];
                                    if wv == T::zero() {
                                        continue;
                                    }
                                    if *stride == 1 {
                                        scatter_rows_stride1(
                                            gxp,
                                            gy,
                                            wv,
                                            &geo,
                                            ky as isize,
                                            kx as isize,
                                        );
                                    } else {
                                        scatter_rows_strided(
                                            gxp,
                                            gy,
                                            wv,
                                            &geo,
                                            ky as isize,
                                            kx as isize,
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::ConvTranspose2d { x, w, b } => {
            let (x, w, b) = (*x, *w, *b);
            let (bs, ci, h, wd_) = nodes[x.0].value.dims4();
            let (_, co, _, _) = nodes[w.0].value.dims4();
            let xd = nodes[x.0].value.data();
            let wd = nodes[w.0].value.data();
            let (oh, ow) = (2 * h, 2 * wd_);
            if nodes[b.0].requires_grad {
                let gb = grad_buf(grads, b.0, co);
                for bi in 0..bs {
                    for oc in 0..co {
                        let obase = (bi * co + oc) * oh * ow;
                        let mut acc = T::zero();
                        for &gv in &gout[obase..obase + oh * ow] {
                            acc += gv;
                        }
                        gb[oc] += acc;
                    }
                }
            }
            if nodes[w.0].requires_grad {
                let gw = grad_buf(grads, w.0, wd.len());
                for bi in 0..bs {
                    for ic in 0..ci {
                        let xp = &xd[(bi * ci + ic) * h * wd_..(bi * ci + ic + 1) * h * wd_];
                        for oc in 0..co {
                            let gy = &gout[(bi * co + oc) * oh * ow..(bi * co + oc + 1) * oh * ow];
                            for ky in 0..2 {
                                for kx in 0..2 {
                                    let mut acc = T::zero();
                                    for y in 0..h {
                                        let orow = (2 * y + ky) * ow + kx;
                                        let xrow = y * wd_;
                                        for xw in 0..wd_ {
                                            acc += xp[xrow + xw] * gy[orow + 2 * xw];
                                        }
                                    }
                                    gw[((ic * co + oc) * 2 + ky) * 2 + kx] += acc;
                                }
                            }
                        }
                    }
                }
            }
            if nodes[x.0].requires_grad {
                let gx = grad_buf(grads, x.0, xd.len());
                for bi in 0..bs {
                    for ic in 0..ci {
                        let gxp = &mut gx[(bi * ci + ic) * h * wd_..(bi * ci + ic + 1) * h * wd_];
                        for oc in 0..co {
                            let gy = &gout[(bi * co + oc) * oh * ow..(bi * co + oc + 1) * oh * ow];
                            for ky in 0..2 {
                                for kx in 0..2 {
                                    let wv = wd[((ic * co + oc) * 2 + ky) * 2 + kx];
                                    if wv == T::zero() {
                                        continue;
                                    }
                                    for y in 0..h {
                                        let orow = (2 * y + ky) * ow + kx;
                                        let xrow = y * wd_;
                                        for xw in 0..wd_ {
                                            gxp[xrow + xw] += wv * gy[orow + 2 * xw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::MaxPool2x2 { x, argmax } => {
            let x = *x;
            if nodes[x.0].requires_grad {
                let (bs, c, h, w) = nodes[x.0].value.dims4();
                let numel = nodes[x.0].value.numel();
                let (oh, ow) = (h / 2, w / 2);
                let gx = grad_buf(grads, x.0, numel);
                for bc in 0..bs * c {
                    let obase = bc * oh * ow;
                    let xbase = bc * h * w;
                    for o in 0..oh * ow {
                        gx[xbase + argmax[obase + o] as usize] += gout[obase + o];
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
        } => {
            let (x, gamma, beta) = (*x, *gamma, *beta);
            let (bs, c, h, w) = nodes[x.0].value.dims4();
            let plane = h * w;
            let xd = nodes[x.0].value.data();
            let gd = nodes[gamma.0].value.data();
            let cn = T::from_f64(c as f64);
            if nodes[beta.0].requires_grad {
                let gb = grad_buf(grads, beta.0, c);
                for bi in 0..bs {
                    for ci in 0..c {
                        let base = (bi * c + ci) * plane;
                        let mut acc = T::zero();
                        for &gv in &gout[base..base + plane] {
                            acc += gv;
                        }
                        gb[ci] += acc;
                    }
                }
            }
            if nodes[gamma.0].requires_grad {
                let gg = grad_buf(grads, gamma.0, c);
                for bi in 0..bs {
                    for ci in 0..c {
                        let base = (bi * c + ci) * plane;
                        let mut acc = T::zero();
                        for pos in 0..plane {
                            let mu = mean[bi * plane + pos];
                            let r = inv_std[bi * plane + pos];
                            acc += gout[base + pos] * (xd[base + pos] - mu) * r;
                        }
                        gg[ci] += acc;
                    }
                }
            }
            if nodes[x.0].requires_grad {
                let gx = grad_buf(grads, x.0, xd.len());
                for bi in 0..bs {
                    for pos in 0..plane {
                        let mu = mean[bi * plane + pos];
                        let r = inv_std[bi * plane + pos];
                        let base = bi * c * plane + pos;
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for ci in 0..c {
                            let gy = gout[base + ci * plane] * gd[ci];
                            let xhat = (xd[base + ci * plane] - mu) * r;
                            s1 += gy;
                            s2 += gy * xhat;
                        }
                        s1 /= cn;
                        s2 /= cn;
                        for ci in 0..c {
                            let gy = gout[base + ci * plane] * gd[ci];
                            let xhat = (xd[base + ci * plane] - mu) * r;
                            gx[base + ci * plane] += r * (gy - s1 - xhat * s2);
                        }
                    }
                }
            }
        }
        Op::SoftmaxChannels { x } => {
            let x = *x;
            if nodes[x.0].requires_grad {
                let (bs, c, h, w) = nodes[i].value.dims4();
                let plane = h * w;
                let yd = nodes[i].value.data();
                let gx = grad_buf(grads, x.0, yd.len());
                for bi in 0..bs {
                    for pos in 0..plane {
                        let base = bi * c * plane + pos;
                        let mut dot = T::zero();
                        for ci in 0..c {
                            dot += gout[base + ci * plane] * yd[base + ci * plane];
                        }
                        for ci in 0..c {
                            let y = yd[base + ci * plane];
                            gx[base + ci * plane] += y * (gout[base + ci * plane] - dot);
                        }
                    }
                }
            }
        }
        Op::SoftmaxRows { x } => {
            let x = *x;
            if nodes[x.0].requires_grad {
                let (bs, c, n, m) = nodes[i].value.dims4();
                let yd = nodes[i].value.data();
                let gx = grad_buf(grads, x.0, yd.len());
                for row in 0..bs * c * n {
                    let base = row * m;
                    let mut dot = T::zero();
                    for j in 0..m {
                        dot += gout[base + j] * yd[base + j];
                    }
                    for j in 0..m {
                        gx[base + j] += yd[base + j] * (gout[base + j] - dot);
                    }
                }
            }
        }
        Op::Bmm { a, b } => {
            let (a, b) = (*a, *b);
            let (bs, c, n, k) = nodes[a.0].value.dims4();
            let m = nodes[b.0].value.shape()[3];
            let ad = nodes[a.0].value.data();
            let bd = nodes[b.0].value.data();
            if nodes[a.0].requires_grad {
                let ga = grad_buf(grads, a.0, ad.len());
                for batch in 0..bs * c {
                    let abase = batch * n * k;
                    let bbase = batch * k * m;
                    let obase = batch * n * m;
                    for r in 0..n {
                        for kk in 0..k {
                            let grow = &gout[obase + r * m..obase + (r + 1) * m];
                            let brow = &bd[bbase + kk * m..bbase + (kk + 1) * m];
                            let mut acc = T::zero();
                            for (&gv, &bv) in grow.iter().zip(brow) {
                                acc += gv * bv;
                            }
                            ga[abase + r * k + kk] += acc;
                        }
                    }
                }
            }
            if nodes[b.0].requires_grad {
                let gb = grad_buf(grads, b.0, bd.len());
                for batch in 0..bs * c {
                    let abase = batch * n * k;
                    let bbase = batch * k * m;
                    let obase = batch * n * m;
                    for r in 0..n {
                        let grow = &gout[obase + r * m..obase + (r + 1) * m];
                        for kk in 0..k {
                            let av = ad[abase + r * k + kk];
                            if av == T::zero() {
                                continue;
                            }
                            let brow = &mut gb[bbase + kk * m..bbase + (kk + 1) * m];
                            for (o, &gv) in brow.iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                }
            }
        }
        Op::WeightedNllMean { pred, coeff, eps } => {
            let pred = *pred;
            if nodes[pred.0].requires_grad {
                let (bs, _c, h, w) = nodes[pred.0].value.dims4();
                let npix = T::from_f64((bs * h * w) as f64);
                let pd = nodes[pred.0].value.data();
                let g = gout[0];
                let eps = *eps;
                let kd = coeff.data();
                let gp = grad_buf(grads, pred.0, pd.len());
                for ((o, &p), &kv) in gp.iter_mut().zip(pd).zip(kd) {
                    if kv != T::zero() {
                        *o -= g * kv / ((p + eps) * npix);
                    }
                }
            }
        }
        _ => unreachable!("dispatch_backward: op handled in graph.rs"),
    }
}

/// Strided (stride > 1) variant of [`dot_rows_stride1`].
fn dot_rows_strided<T: Scalar>(gy: &[T], x: &[T], geo: &ConvGeometry, ky: isize, kx: isize) -> T {
    let mut acc = T::zero();
    for oy in 0..geo.oh {
        let iy = (oy * geo.stride) as isize + ky - geo.pt;
        if iy < 0 || iy >= geo.h as isize {
            continue;
        }
        for ox in 0..geo.ow {
            let ix = (ox * geo.stride) as isize + kx - geo.pl;
            if ix < 0 || ix >= geo.w as isize {
                continue;
            }
            acc += gy[oy * geo.ow + ox] * x[iy as usize * geo.w + ix as usize];
        }
    }
    acc
}

/// Strided (stride > 1) variant of [`scatter_rows_stride1`].
fn scatter_rows_strided<T: Scalar>(
    gx: &mut [T],
    gy: &[T],
    wv: T,
    geo: &ConvGeometry,
    ky: isize,
    kx: isize,
) {
    for oy in 0..geo.oh {
        let iy = (oy * geo.stride) as isize + ky - geo.pt;
        if iy < 0 || iy >= geo.h as isize {
            continue;
        }
        for ox in 0..geo.ow {
            let ix = (ox * geo.stride) as isize + kx - geo.pl;
            if ix < 0 || ix >= geo.w as isize {
                continue;
            }
            gx[iy as usize * geo.w + ix as usize] += wv * gy[oy * geo.ow + ox];
        }
    }
}
