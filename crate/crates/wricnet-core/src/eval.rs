//! Evaluation: change-positive confusion matrices, the four headline metrics
//! with explicit degenerate-case rules, the local-ordered-identification
//! protocol (best tiles first), global identification, tile stitching, and
//! RGB disagreement overlays.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::data::{image_to_tensor, ImageBuf, MaskBuf, TilePair};
use crate::graph::Graph;
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pixel counts with change as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionMatrix {
    /// Counts over one prediction/ground-truth pair.
    pub fn from_masks(pred: &MaskBuf, gt: &MaskBuf) -> Result<ConfusionMatrix, String> {
        if pred.height != gt.height || pred.width != gt.width {
            return Err(format!(
                "prediction {}x{} does not match ground truth {}x{}",
                pred.height, pred.width, gt.height, gt.width
            ));
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            match (p, g) {
                (1, 1) => cm.true_pos += 1,
                (1, 0) => cm.false_pos += 1,
                (0, 1) => cm.false_neg += 1,
                _ => cm.true_neg += 1,
            }
        }
        Ok(cm)
    }

    pub fn add(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            true_pos: self.true_pos + other.true_pos,
            false_pos: self.false_pos + other.false_pos,
            false_neg: self.false_neg + other.false_neg,
            true_neg: self.true_neg + other.true_neg,
        }
    }

    pub fn sum(cms: &[ConfusionMatrix]) -> ConfusionMatrix {
        cms.iter().fold(ConfusionMatrix::default(), |a, b| a.add(b))
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Fraction of true changes not detected; 0 when no changes exist.
    pub fn missed_alarm(&self) -> f64 {
        let pos = self.true_pos + self.false_neg;
        if pos == 0 {
            0.0
        } else {
            1.0 - self.true_pos as f64 / pos as f64
        }
    }

    /// Fraction of detections that are spurious; 0 when nothing is detected.
    pub fn false_alarm(&self) -> f64 {
        let det = self.true_pos + self.false_pos;
        if det == 0 {
            0.0
        } else {
            self.false_pos as f64 / det as f64
        }
    }

    /// Harmonic detection score; 1 when neither truth nor prediction has any
    /// change pixels.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_pos + self.false_pos + self.false_neg;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.true_pos as f64 / denom as f64
        }
    }

    /// Intersection over union of the change regions; 1 when both are empty.
    pub fn iou(&self) -> f64 {
        let denom = self.true_pos + self.false_pos + self.false_neg;
        if denom == 0 {
            1.0
        } else {
            self.true_pos as f64 / denom as f64
        }
    }

    pub fn metrics(&self) -> MetricSet {
        MetricSet {
            ma: self.missed_alarm(),
            fa: self.false_alarm(),
            f1: self.f1(),
            iou: self.iou(),
        }
    }
}

/// The four headline metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSet {
    pub ma: f64,
    pub fa: f64,
    pub f1: f64,
    pub iou: f64,
}

/// Number of tiles kept by the best-tile protocol: `frac` of `n`, rounded
/// half up, never fewer than one.
pub fn retained_count(n: usize, frac: f64) -> usize {
    assert!((0.0..=1.0).contains(&frac), "fraction out of range: {frac}");
    assert!(n > 0, "no tiles to retain");
    let k = Float::floor(frac * n as f64 + 0.5) as usize;
    k.clamp(1, n)
}

/// Indices of the `k` best tiles: sorted by per-tile F1 descending, ties
/// broken by lower index.
pub fn best_tile_indices(cms: &[ConfusionMatrix], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cms.len()).collect();
    order.sort_by(|&a, &b| {
        cms[b]
            .f1()
            .partial_cmp(&cms[a].f1())
            .expect("f1 is never NaN")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Metrics over the pooled counts of the best `frac` of tiles.
pub fn local_ordered_metrics(cms: &[ConfusionMatrix], frac: f64) -> MetricSet {
    let keep = best_tile_indices(cms, retained_count(cms.len(), frac));
    let pooled = keep
        .iter()
        .fold(ConfusionMatrix::default(), |a, &i| a.add(&cms[i]));
    pooled.metrics()
}

/// Metrics over the pooled counts of every tile.
pub fn global_metrics(cms: &[ConfusionMatrix]) -> MetricSet {
    ConfusionMatrix::sum(cms).metrics()
}

/// Arithmetic mean of one metric set per tier.
pub fn cross_tier_mean(per_tier: &[MetricSet]) -> MetricSet {
    assert!(!per_tier.is_empty(), "no tiers to average");
    let n = per_tier.len() as f64;
    MetricSet {
        ma: per_tier.iter().map(|m| m.ma).sum::<f64>() / n,
        fa: per_tier.iter().map(|m| m.fa).sum::<f64>() / n,
        f1: per_tier.iter().map(|m| m.f1).sum::<f64>() / n,
        iou: per_tier.iter().map(|m| m.iou).sum::<f64>() / n,
    }
}

/// Argmax over the two class channels of a `(1, 2, H, W)` distribution;
/// change requires a strictly higher score, so ties predict non-change.
pub fn predict_mask<T: Scalar>(dist: &Tensor<T>) -> MaskBuf {
    let (b, c, h, w) = dist.dims4();
    assert_eq!(b, 1, "one tile at a time");
    assert_eq!(c, 2, "two-class distribution expected");
    let n = h * w;
    let d = dist.data();
    let mut out = MaskBuf::zeros(h, w);
    for i in 0..n {
        if d[n + i] > d[i] {
            out.data[i] = 1;
        }
    }
    out
}

/// Reassembles a full mask from window-sized tiles laid out on a
/// `rows x cols` grid. Every cell must be supplied exactly once.
pub fn stitch_masks(
    tiles: &[(usize, usize, MaskBuf)],
    rows: usize,
    cols: usize,
    window: usize,
) -> Result<MaskBuf, String> {
    let mut out = MaskBuf::zeros(rows * window, cols * window);
    let mut seen = alloc::vec![false; rows * cols];
    for (row, col, tile) in tiles {
        if *row >= rows || *col >= cols {
            return Err(format!("tile ({row},{col}) outside {rows}x{cols} grid"));
        }
        if tile.height != window || tile.width != window {
            return Err(format!(
                "tile ({row},{col}) is {}x{}, expected {window}x{window}",
                tile.height, tile.width
            ));
        }
        let cell = row * cols + col;
        if seen[cell] {
            return Err(format!("tile ({row},{col}) supplied twice"));
        }
        seen[cell] = true;
        for y in 0..window {
            for x in 0..window {
                out.set(row * window + y, col * window + x, tile.get(y, x));
            }
        }
    }
    if let Some(cell) = seen.iter().position(|&s| !s) {
        return Err(format!(
            "tile ({},{}) missing from stitch",
            cell / cols,
            cell % cols
        ));
    }
    Ok(out)
}

/// Runs the model on one tile (no gradients) and thresholds the fused head.
pub fn predict_tile<T: Scalar>(model: &Model<T>, tile: &TilePair) -> MaskBuf {
    let mut g = Graph::new();
    let pv = model.bind(&mut g, false);
    let t1 = g.constant(image_to_tensor(&tile.t1));
    let t2 = g.constant(image_to_tensor(&tile.t2));
    let out = model.forward(&mut g, &pv, t1, t2);
    predict_mask(g.value(out.i_fu))
}

/// Confusion matrix per tile, in input order.
pub fn evaluate_tiles<T: Scalar>(
    model: &Model<T>,
    tiles: &[TilePair],
) -> Result<Vec<ConfusionMatrix>, String> {
    tiles
        .iter()
        .map(|tile| ConfusionMatrix::from_masks(&predict_tile(model, tile), &tile.gt))
        .collect()
}

/// RGB disagreement overlay: hits white, spurious detections red, misses
/// blue, correct rejections black.
pub fn overlay_rgb(pred: &MaskBuf, gt: &MaskBuf) -> Result<ImageBuf, String> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(format!(
            "prediction {}x{} does not match ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        ));
    }
    let mut out = ImageBuf::zeros(3, pred.height, pred.width);
    for y in 0..pred.height {
        for x in 0..pred.width {
            let rgb: [f32; 3] = match (pred.get(y, x), gt.get(y, x)) {
                (1, 1) => [1.0, 1.0, 1.0],
                (1, 0) => [1.0, 0.0, 0.0],
                (0, 1) => [0.0, 0.0, 1.0],
                _ => [0.0, 0.0, 0.0],
            };
            for (c, &v) in rgb.iter().enumerate() {
                out.set(c, y, x, v);
            }
        }
    }
    Ok(out)
}
