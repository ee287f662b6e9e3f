//! Data plumbing: image/mask buffers, resolution tiers, bicubic and nearest
//! resampling, min-max normalization, tiling, flip/rotate augmentation, and a
//! synthetic change-pair generator for smoke training.
//!
//! Images are channel-major `f32` in `[0, 1]`; masks are `u8` in `{0, 1}`
//! with 1 = change. Resampling accumulates in `f64`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Channel-major float image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageBuf {
    /// # Panics
    /// If `data.len() != channels * height * width` or any dim is zero.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "empty image");
        assert_eq!(data.len(), channels * height * width, "image buffer length");
        ImageBuf {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageBuf::new(
            channels,
            height,
            width,
            vec![0.0; channels * height * width],
        )
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }
}

/// Binary mask, 1 = change.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskBuf {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl MaskBuf {
    /// # Panics
    /// If the length is wrong or any value is not 0/1.
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Self {
        assert!(height > 0 && width > 0, "empty mask");
        assert_eq!(data.len(), height * width, "mask buffer length");
        assert!(data.iter().all(|&v| v <= 1), "mask values must be 0 or 1");
        MaskBuf {
            height,
            width,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        MaskBuf::new(height, width, vec![0; height * width])
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        debug_assert!(v <= 1);
        self.data[y * self.width + x] = v;
    }

    pub fn ones_count(&self) -> u64 {
        self.data.iter().map(|&v| u64::from(v)).sum()
    }
}

/// Resolution tier: the source image downsampled by 1, 2, or 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Tier {
    High,
    Mid,
    Low,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::High, Tier::Mid, Tier::Low];

    pub fn divisor(self) -> usize {
        match self {
            Tier::High => 1,
            Tier::Mid => 2,
            Tier::Low => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::High => "hr",
            Tier::Mid => "mr",
            Tier::Low => "lr",
        }
    }

    pub fn parse(s: &str) -> Result<Tier, String> {
        Tier::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown tier '{s}'; expected hr, mr, or lr"))
    }
}

/// Catmull-Rom kernel weights for the four taps around a sample at fractional
/// offset `t` in `[0, 1)` from the floor tap.
fn cubic_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let w = |x: f64| {
        let x = x.abs();
        if x <= 1.0 {
            (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
        } else if x < 2.0 {
            A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
        } else {
            0.0
        }
    };
    [w(t + 1.0), w(t), w(1.0 - t), w(2.0 - t)]
}

/// Half-pixel-center source coordinate for destination index `dst`.
#[inline]
fn src_coord(dst: usize, scale: f64) -> f64 {
    (dst as f64 + 0.5) * scale - 0.5
}

/// Per-output-index tap positions (edge-clamped) and weights along one axis.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let s = src_coord(o, scale);
            let base = Float::floor(s);
            let weights = cubic_weights(s - base);
            let mut idx = [0usize; 4];
            for (k, slot) in idx.iter_mut().enumerate() {
                let p = base as i64 - 1 + k as i64;
                *slot = p.clamp(0, in_len as i64 - 1) as usize;
            }
            (idx, weights)
        })
        .collect()
}

/// Separable Catmull-Rom resampling with half-pixel centers, edge clamp, and
/// output clamped to `[0, 1]`.
pub fn resample_bicubic(img: &ImageBuf, out_h: usize, out_w: usize) -> ImageBuf {
    assert!(out_h > 0 && out_w > 0, "empty resample target");
    let (c, h, w) = (img.channels, img.height, img.width);
    let x_taps = axis_taps(w, out_w);
    let y_taps = axis_taps(h, out_h);
    // Horizontal pass at source height.
    let mut mid = vec![0f64; c * h * out_w];
    for ch in 0..c {
        for y in 0..h {
            let src_row = &img.data[(ch * h + y) * w..(ch * h + y) * w + w];
            let dst_row = &mut mid[(ch * h + y) * out_w..(ch * h + y) * out_w + out_w];
            for (ox, (idx, wt)) in x_taps.iter().enumerate() {
                dst_row[ox] = (0..4).map(|k| wt[k] * f64::from(src_row[idx[k]])).sum();
            }
        }
    }
    // Vertical pass.
    let mut out = ImageBuf::zeros(c, out_h, out_w);
    for ch in 0..c {
        for (oy, (idx, wt)) in y_taps.iter().enumerate() {
            for ox in 0..out_w {
                let v: f64 = (0..4)
                    .map(|k| wt[k] * mid[(ch * h + idx[k]) * out_w + ox])
                    .sum();
                out.set(ch, oy, ox, v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}

/// Direct 16-tap Catmull-Rom resampling; the reference the separable
/// implementation is tested against.
pub fn resample_bicubic_reference(img: &ImageBuf, out_h: usize, out_w: usize) -> ImageBuf {
    assert!(out_h > 0 && out_w > 0, "empty resample target");
    let (c, h, w) = (img.channels, img.height, img.width);
    let x_taps = axis_taps(w, out_w);
    let y_taps = axis_taps(h, out_h);
    let mut out = ImageBuf::zeros(c, out_h, out_w);
    for ch in 0..c {
        for oy in 0..out_h {
            let (yi, wy) = &y_taps[oy];
            for ox in 0..out_w {
                let (xi, wx) = &x_taps[ox];
                let mut acc = 0f64;
                for ky in 0..4 {
                    for kx in 0..4 {
                        acc += wy[ky] * wx[kx] * f64::from(img.get(ch, yi[ky], xi[kx]));
                    }
                }
                out.set(ch, oy, ox, acc.clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}

/// Nearest-neighbor mask resampling with half-pixel centers; exact halves
/// round toward the top-left source pixel, values stay binary.
pub fn resample_nearest(mask: &MaskBuf, out_h: usize, out_w: usize) -> MaskBuf {
    assert!(out_h > 0 && out_w > 0, "empty resample target");
    let pick = |o: usize, in_len: usize, out_len: usize| -> usize {
        let s = src_coord(o, in_len as f64 / out_len as f64);
        Float::ceil(s - 0.5).clamp(0.0, in_len as f64 - 1.0) as usize
    };
    let mut out = MaskBuf::zeros(out_h, out_w);
    for oy in 0..out_h {
        let sy = pick(oy, mask.height, out_h);
        for ox in 0..out_w {
            let sx = pick(ox, mask.width, out_w);
            out.set(oy, ox, mask.get(sy, sx));
        }
    }
    out
}

/// Downsamples an aligned pair + mask to a tier; the high tier is a copy.
pub fn pair_to_tier(
    t1: &ImageBuf,
    t2: &ImageBuf,
    gt: &MaskBuf,
    tier: Tier,
) -> (ImageBuf, ImageBuf, MaskBuf) {
    let d = tier.divisor();
    if d == 1 {
        return (t1.clone(), t2.clone(), gt.clone());
    }
    let (oh, ow) = (t1.height / d, t1.width / d);
    (
        resample_bicubic(t1, oh, ow),
        resample_bicubic(t2, oh, ow),
        resample_nearest(gt, oh, ow),
    )
}

/// Joint min-max normalization over all channels; a constant image maps to
/// zeros.
pub fn normalize_minmax(img: &ImageBuf) -> ImageBuf {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in &img.data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mut out = img.clone();
    if hi > lo {
        // True division so the extremes land exactly on 0 and 1.
        let span = hi - lo;
        for v in &mut out.data {
            *v = (*v - lo) / span;
        }
    } else {
        out.data.fill(0.0);
    }
    out
}

/// Number of full tiles per axis; partial edge tiles are dropped.
pub fn grid_dims(height: usize, width: usize, window: usize) -> (usize, usize) {
    (height / window, width / window)
}

pub fn image_tile(img: &ImageBuf, window: usize, row: usize, col: usize) -> ImageBuf {
    let mut out = ImageBuf::zeros(img.channels, window, window);
    for c in 0..img.channels {
        for y in 0..window {
            for x in 0..window {
                out.set(c, y, x, img.get(c, row * window + y, col * window + x));
            }
        }
    }
    out
}

pub fn mask_tile(mask: &MaskBuf, window: usize, row: usize, col: usize) -> MaskBuf {
    let mut out = MaskBuf::zeros(window, window);
    for y in 0..window {
        for x in 0..window {
            out.set(y, x, mask.get(row * window + y, col * window + x));
        }
    }
    out
}

/// One training/eval unit: a co-registered tile pair with ground truth and
/// its provenance.
#[derive(Clone, Debug)]
pub struct TilePair {
    pub t1: ImageBuf,
    pub t2: ImageBuf,
    pub gt: MaskBuf,
    pub source: String,
    pub row: usize,
    pub col: usize,
    pub tier: Tier,
}

impl TilePair {
    pub fn tile_name(&self) -> String {
        format!("{}_{}_{}", self.source, self.row, self.col)
    }
}

/// Cuts one source pair (already at its tier resolution) into window-sized
/// tiles.
pub fn tile_source_pair(
    source: &str,
    t1: &ImageBuf,
    t2: &ImageBuf,
    gt: &MaskBuf,
    tier: Tier,
    window: usize,
) -> Result<Vec<TilePair>, String> {
    if t1.channels != t2.channels
        || t1.height != t2.height
        || t1.width != t2.width
        || gt.height != t1.height
        || gt.width != t1.width
    {
        return Err(format!(
            "source '{source}': pair/mask dimensions disagree ({}x{} vs {}x{} vs {}x{})",
            t1.height, t1.width, t2.height, t2.width, gt.height, gt.width
        ));
    }
    if window == 0 {
        return Err("tile window must be positive".into());
    }
    let (rows, cols) = grid_dims(t1.height, t1.width, window);
    if rows == 0 || cols == 0 {
        return Err(format!(
            "source '{source}': {}x{} too small for {window}-pixel tiles at tier {}",
            t1.height,
            t1.width,
            tier.as_str()
        ));
    }
    let mut tiles = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            tiles.push(TilePair {
                t1: image_tile(t1, window, row, col),
                t2: image_tile(t2, window, row, col),
                gt: mask_tile(gt, window, row, col),
                source: source.into(),
                row,
                col,
                tier,
            });
        }
    }
    Ok(tiles)
}

/// Training-time augmentation: one of four orientation ops, applied jointly
/// to both images and the mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugOp {
    Identity,
    FlipUd,
    FlipLr,
    Rot90,
}

impl AugOp {
    pub const ALL: [AugOp; 4] = [AugOp::Identity, AugOp::FlipUd, AugOp::FlipLr, AugOp::Rot90];

    pub fn sample<R: Rng>(rng: &mut R) -> AugOp {
        AugOp::ALL[rng.gen_range(0..4)]
    }

    /// Output dims for an `h x w` input (rotation swaps them).
    pub fn out_dims(self, h: usize, w: usize) -> (usize, usize) {
        match self {
            AugOp::Rot90 => (w, h),
            _ => (h, w),
        }
    }

    /// Source coordinates feeding destination `(y, x)`. Rotation is a quarter
    /// turn counterclockwise: `dst[y][x] = src[x][w_src - 1 - y]`.
    #[inline]
    fn src_of(self, src_h: usize, src_w: usize, y: usize, x: usize) -> (usize, usize) {
        match self {
            AugOp::Identity => (y, x),
            AugOp::FlipUd => (src_h - 1 - y, x),
            AugOp::FlipLr => (y, src_w - 1 - x),
            AugOp::Rot90 => (x, src_w - 1 - y),
        }
    }

    pub fn apply_image(self, img: &ImageBuf) -> ImageBuf {
        let (oh, ow) = self.out_dims(img.height, img.width);
        let mut out = ImageBuf::zeros(img.channels, oh, ow);
        for c in 0..img.channels {
            for y in 0..oh {
                for x in 0..ow {
                    let (sy, sx) = self.src_of(img.height, img.width, y, x);
                    out.set(c, y, x, img.get(c, sy, sx));
                }
            }
        }
        out
    }

    pub fn apply_mask(self, mask: &MaskBuf) -> MaskBuf {
        let (oh, ow) = self.out_dims(mask.height, mask.width);
        let mut out = MaskBuf::zeros(oh, ow);
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = self.src_of(mask.height, mask.width, y, x);
                out.set(y, x, mask.get(sy, sx));
            }
        }
        out
    }
}

pub fn augment_pair(tile: &TilePair, op: AugOp) -> TilePair {
    TilePair {
        t1: op.apply_image(&tile.t1),
        t2: op.apply_image(&tile.t2),
        gt: op.apply_mask(&tile.gt),
        ..tile.clone()
    }
}

/// Seed for the augmentation choice of one tile in one epoch.
pub fn augment_seed(global: u64, epoch: u64, tile_idx: u64) -> u64 {
    derive_seed(&[global, epoch, tile_idx])
}

/// `(1, C, H, W)` tensor from an image.
pub fn image_to_tensor<T: Scalar>(img: &ImageBuf) -> Tensor<T> {
    let data = img
        .data
        .iter()
        .map(|&v| T::from_f64(f64::from(v)))
        .collect();
    Tensor::from_bchw(1, img.channels, img.height, img.width, data)
}

/// `(1, 2, H, W)` one-hot tensor from a mask; channel 1 is change.
pub fn mask_to_onehot<T: Scalar>(mask: &MaskBuf) -> Tensor<T> {
    let n = mask.height * mask.width;
    let mut data = vec![T::zero(); 2 * n];
    for (i, &v) in mask.data.iter().enumerate() {
        data[usize::from(v) * n + i] = T::one();
    }
    Tensor::from_bchw(1, 2, mask.height, mask.width, data)
}

const SHAPE_AREA_CAP_FRAC: f64 = 0.10;
const CHANGE_MIN_FRAC: f64 = 0.03;
const CHANGE_MAX_TARGET_FRAC: f64 = 0.15;
const CHANGE_HARD_CAP_FRAC: f64 = 0.20;

/// Synthetic co-registered pair: a shared textured background, with flat
/// contrasting rectangles and discs stamped onto the second image. The mask
/// is the exact union of the stamped footprints, covering 3-20% of pixels.
pub fn synth_pair(size: usize, rng: &mut ChaCha8Rng) -> (ImageBuf, ImageBuf, MaskBuf) {
    assert!(
        size >= 16,
        "synthetic images need at least 16 pixels per side"
    );
    let channels = 3;
    let n = size * size;
    let mut base = ImageBuf::zeros(channels, size, size);
    let mut bg_mean = [0f64; 3];
    for c in 0..channels {
        let fx: f64 = rng.gen_range(0.5..2.5);
        let fy: f64 = rng.gen_range(0.5..2.5);
        let phase: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
        let amp: f64 = rng.gen_range(0.12..0.22);
        let level: f64 = rng.gen_range(0.42..0.58);
        for y in 0..size {
            for x in 0..size {
                let arg = core::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / size as f64;
                let tex: f64 = rng.gen_range(-0.05..0.05);
                let v = (level + amp * Float::sin(arg + phase) + tex).clamp(0.0, 1.0);
                base.set(c, y, x, v as f32);
                bg_mean[c] += v;
            }
        }
        bg_mean[c] /= n as f64;
    }

    let mut gt = MaskBuf::zeros(size, size);
    let mut changed = 0usize;
    let area_cap = ((n as f64) * SHAPE_AREA_CAP_FRAC) as usize;
    let target = rng.gen_range(CHANGE_MIN_FRAC..CHANGE_MAX_TARGET_FRAC);
    let mut t2 = base.clone();
    let mut attempts = 0;
    while (changed as f64) < target * n as f64 && attempts < 200 {
        attempts += 1;
        let footprint = sample_shape(size, area_cap, rng);
        let grown: usize = footprint.iter().filter(|&&i| gt.data[i] == 0).count();
        if (changed + grown) as f64 > CHANGE_HARD_CAP_FRAC * n as f64 {
            continue;
        }
        // Flat color pushed at least 0.25 away from the background mean in
        // every channel, toward the far side of the range.
        let mut color = [0f32; 3];
        for c in 0..channels {
            let off: f64 = rng.gen_range(0.25..0.45);
            let v = if bg_mean[c] < 0.5 {
                bg_mean[c] + off
            } else {
                bg_mean[c] - off
            };
            color[c] = v.clamp(0.0, 1.0) as f32;
        }
        for &i in &footprint {
            if gt.data[i] == 0 {
                gt.data[i] = 1;
                changed += 1;
            }
            let (y, x) = (i / size, i % size);
            for c in 0..channels {
                t2.set(c, y, x, color[c]);
            }
        }
    }
    (base, t2, gt)
}

/// Pixel indices of one random rectangle or disc, at least 4 pixels across
/// and at most `area_cap` pixels in area.
fn sample_shape(size: usize, area_cap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let max_side = (size / 2).max(4);
    let mut cells = Vec::new();
    if rng.gen_bool(0.5) {
        let h = rng.gen_range(4..=max_side);
        let w_cap = (area_cap / h).clamp(4, max_side);
        let w = rng.gen_range(4..=w_cap);
        let y0 = rng.gen_range(0..=size - h);
        let x0 = rng.gen_range(0..=size - w);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                cells.push(y * size + x);
            }
        }
    } else {
        let r_cap =
            (Float::sqrt(area_cap as f64 / core::f64::consts::PI) as usize).clamp(2, max_side / 2);
        let r = rng.gen_range(2..=r_cap);
        let cy = rng.gen_range(r..size - r);
        let cx = rng.gen_range(r..size - r);
        let r2 = (r * r) as i64;
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                let dy = y as i64 - cy as i64;
                let dx = x as i64 - cx as i64;
                if dy * dy + dx * dx <= r2 {
                    cells.push(y * size + x);
                }
            }
        }
    }
    cells
}

/// Deterministic synthetic dataset; item `i` derives its stream from
/// `(seed, i)`.
pub fn synth_dataset(
    count: usize,
    size: usize,
    seed: u64,
) -> Vec<(String, ImageBuf, ImageBuf, MaskBuf)> {
    (0..count)
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(&[seed, i as u64]));
            let (t1, t2, gt) = synth_pair(size, &mut rng);
            (format!("synth_{i:03}"), t1, t2, gt)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_image(c: usize, h: usize, w: usize) -> ImageBuf {
        let data = (0..c * h * w)
            .map(|i| ((i * 37 % 101) as f32) / 101.0)
            .collect();
        ImageBuf::new(c, h, w, data)
    }

    #[test]
    fn cubic_weights_partition_unity() {
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            let w = cubic_weights(t);
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "t={t}: sum {sum}");
        }
        assert_eq!(cubic_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn bicubic_identity_at_same_size() {
        let img = ramp_image(3, 8, 6);
        let out = resample_bicubic(&img, 8, 6);
        assert_eq!(out, img);
    }

    #[test]
    fn bicubic_separable_matches_reference() {
        let img = ramp_image(2, 13, 9);
        for (oh, ow) in [(7, 5), (26, 18), (4, 11)] {
            let a = resample_bicubic(&img, oh, ow);
            let b = resample_bicubic_reference(&img, oh, ow);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-6, "{x} vs {y} at {oh}x{ow}");
            }
        }
    }

    #[test]
    fn bicubic_constant_stays_constant() {
        let img = ImageBuf::new(1, 10, 10, vec![0.37; 100]);
        let out = resample_bicubic(&img, 5, 7);
        for &v in &out.data {
            assert!((v - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn nearest_halves_round_toward_top_left() {
        // 4 -> 2: sources land exactly between pixels {0,1} and {2,3}.
        let mask = MaskBuf::new(4, 1, vec![0, 1, 0, 1]);
        let out = resample_nearest(&mask, 2, 1);
        assert_eq!(out.data, vec![0, 0]);
    }

    #[test]
    fn nearest_output_stays_binary() {
        let data: Vec<u8> = (0..64).map(|i| (i % 3 == 0) as u8).collect();
        let mask = MaskBuf::new(8, 8, data);
        for (oh, ow) in [(3, 5), (16, 16), (2, 2)] {
            let out = resample_nearest(&mask, oh, ow);
            assert!(out.data.iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn tier_divisors() {
        assert_eq!(Tier::High.divisor(), 1);
        assert_eq!(Tier::Mid.divisor(), 2);
        assert_eq!(Tier::Low.divisor(), 4);
        assert_eq!(Tier::parse("mr").expect("parse"), Tier::Mid);
        assert!(Tier::parse("xl").is_err());
    }

    #[test]
    fn normalize_maps_range_to_unit() {
        let img = ImageBuf::new(1, 1, 4, vec![0.2, 0.4, 0.6, 1.0]);
        let out = normalize_minmax(&img);
        assert!((out.data[0]).abs() < 1e-6);
        assert!((out.data[3] - 1.0).abs() < 1e-6);
        assert!((out.data[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn normalize_constant_to_zeros() {
        let img = ImageBuf::new(2, 2, 2, vec![0.7; 8]);
        assert!(normalize_minmax(&img).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiling_drops_partial_edges() {
        assert_eq!(grid_dims(300, 520, 256), (1, 2));
        assert_eq!(grid_dims(100, 100, 256), (0, 0));
    }

    #[test]
    fn tile_extraction_reads_expected_window() {
        let img = ramp_image(1, 8, 8);
        let t = image_tile(&img, 4, 1, 1);
        assert_eq!(t.get(0, 0, 0), img.get(0, 4, 4));
        assert_eq!(t.get(0, 3, 3), img.get(0, 7, 7));
    }

    #[test]
    fn tile_source_pair_rejects_mismatched_dims() {
        let t1 = ramp_image(3, 8, 8);
        let t2 = ramp_image(3, 8, 6);
        let gt = MaskBuf::zeros(8, 8);
        assert!(tile_source_pair("s", &t1, &t2, &gt, Tier::High, 4).is_err());
    }

    #[test]
    fn flips_are_involutions_and_rotation_has_period_four() {
        let img = ramp_image(2, 5, 7);
        for op in [AugOp::FlipUd, AugOp::FlipLr] {
            assert_eq!(op.apply_image(&op.apply_image(&img)), img);
        }
        let mut r = img.clone();
        for _ in 0..4 {
            r = AugOp::Rot90.apply_image(&r);
        }
        assert_eq!(r, img);
    }

    #[test]
    fn rotation_is_counterclockwise() {
        // [[a, b], [d, e]] -> [[b, e], [a, d]].
        let img = ImageBuf::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let r = AugOp::Rot90.apply_image(&img);
        assert_eq!(r.data, vec![2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn onehot_channels_are_complementary() {
        let mask = MaskBuf::new(2, 2, vec![1, 0, 0, 1]);
        let t = mask_to_onehot::<f64>(&mask);
        assert_eq!(t.shape(), &[1, 2, 2, 2]);
        let d = t.data();
        for i in 0..4 {
            assert_eq!(d[i] + d[4 + i], 1.0);
        }
        assert_eq!(d[4], 1.0, "first pixel is change");
    }

    #[test]
    fn synth_change_fraction_within_bounds() {
        for seed in 0..10 {
            let mut rng = rng_from_seed(seed);
            let (t1, t2, gt) = synth_pair(64, &mut rng);
            let frac = gt.ones_count() as f64 / (64.0 * 64.0);
            assert!(
                (0.02..=0.20).contains(&frac),
                "seed {seed}: change fraction {frac}"
            );
            // The mask is exactly the set of differing pixels.
            for y in 0..64 {
                for x in 0..64 {
                    let differs = (0..3).any(|c| t1.get(c, y, x) != t2.get(c, y, x));
                    assert_eq!(differs, gt.get(y, x) == 1, "at ({y},{x})");
                }
            }
        }
    }

    #[test]
    fn synth_dataset_is_seed_deterministic() {
        let a = synth_dataset(3, 32, 99);
        let b = synth_dataset(3, 32, 99);
        for ((na, a1, a2, ag), (nb, b1, b2, bg)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            assert_eq!(a1, b1);
            assert_eq!(a2, b2);
            assert_eq!(ag, bg);
        }
        let c = synth_dataset(3, 32, 100);
        assert_ne!(a[0].1, c[0].1, "different seed should change pixels");
    }
}
