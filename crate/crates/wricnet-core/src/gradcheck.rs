//! Central finite-difference validation of analytic gradients.
//!
//! The harness is deliberately decoupled from [`crate::graph::Graph`]: the
//! caller computes analytic gradients however it likes (one forward+backward)
//! and hands this module a loss-only closure. The check then perturbs tensor
//! entries one at a time — every entry, or a seeded sample from every tensor
//! when exhaustive sweeps would blow the time budget — and compares
//! `(f(x+h) - f(x-h)) / 2h` against the analytic value. All checking runs at
//! 64-bit precision.

use alloc::vec::Vec;

use rand::Rng;

use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

/// Which coordinates to probe.
#[derive(Clone, Copy, Debug)]
pub enum SamplePlan {
    /// Every entry of every tensor.
    Exhaustive,
    /// Up to `per_tensor` distinct entries from each tensor, drawn from the
    /// seed; every tensor is covered.
    PerTensor { per_tensor: usize, seed: u64 },
}

/// Worst coordinate found by a check.
#[derive(Clone, Copy, Debug)]
pub struct WorstCoord {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of a finite-difference sweep.
#[derive(Clone, Copy, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates where finite differences disagreed with themselves across
    /// step sizes (kink in the probe window or extreme curvature); only the
    /// self-consistency variant ever sets this.
    pub skipped: usize,
    pub worst: Option<WorstCoord>,
}

impl GradReport {
    /// True when every probed coordinate matched within `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with a floor that treats tiny near-zero pairs as agreeing.
///
/// The floor encodes the probe's own resolution: a central difference of a
/// deep-composition loss at 64-bit precision carries a few 1e-9 of absolute
/// rounding noise, so differences below 1e-8 must count as agreement or
/// vanishing-path gradients fail on measurement noise alone. At tolerance
/// 1e-4 the floor makes this check equivalent to an absolute-plus-relative
/// criterion with atol 1e-8 and rtol 1e-4.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-4);
    (a - b).abs() / denom
}

/// Compares `grads` (analytic d`eval`/d`tensors`, one buffer per tensor,
/// zeros where no gradient flows) against central finite differences of
/// `eval` with relative step `rel_step`.
///
/// # Panics
/// If `grads` lengths do not match `tensors`.
pub fn check_against_fd<F>(
    tensors: &[Tensor<f64>],
    grads: &[Vec<f64>],
    mut eval: F,
    rel_step: f64,
    plan: SamplePlan,
) -> GradReport
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    assert_eq!(
        tensors.len(),
        grads.len(),
        "one gradient buffer per tensor required"
    );
    for (t, g) in tensors.iter().zip(grads) {
        assert_eq!(
            t.numel(),
            g.len(),
            "gradient length {} does not match tensor {:?}",
            g.len(),
            t.shape()
        );
    }
    sweep(tensors, grads, &mut eval, rel_step, plan, false)
}

/// [`check_against_fd`] with a self-consistency filter: each coordinate is
/// probed at steps `h` and `h/2`, and coordinates where the two estimates
/// disagree beyond the comparison tolerance are skipped instead of compared.
///
/// Central differences of a function smooth inside the window agree to
/// O(h²), so disagreement proves the window straddles a kink (relu,
/// max-pool argmax switch) or curvature large enough that finite
/// differences cannot adjudicate 1e-4 agreement at all. The filter never
/// consults the analytic value, so a wrong analytic gradient — where both
/// estimates agree with the true derivative and disagree with the claim —
/// is still reported. Callers should bound `skipped` relative to `checked`.
pub fn check_against_fd_filtered<F>(
    tensors: &[Tensor<f64>],
    grads: &[Vec<f64>],
    mut eval: F,
    rel_step: f64,
    plan: SamplePlan,
) -> GradReport
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    sweep(tensors, grads, &mut eval, rel_step, plan, true)
}

fn sweep<F>(
    tensors: &[Tensor<f64>],
    grads: &[Vec<f64>],
    eval: &mut F,
    rel_step: f64,
    plan: SamplePlan,
    filter: bool,
) -> GradReport
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    let mut work: Vec<Tensor<f64>> = tensors.to_vec();
    let mut report = GradReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let mut rng = match plan {
        SamplePlan::PerTensor { seed, .. } => Some(rng_from_seed(seed)),
        SamplePlan::Exhaustive => None,
    };
    for ti in 0..tensors.len() {
        let numel = tensors[ti].numel();
        let indices: Vec<usize> = match plan {
            SamplePlan::Exhaustive => (0..numel).collect(),
            SamplePlan::PerTensor { per_tensor, .. } => {
                sample_distinct(rng.as_mut().unwrap(), numel, per_tensor)
            }
        };
        for idx in indices {
            let theta = tensors[ti].data()[idx];
            let h = rel_step * theta.abs().max(1.0);
            let mut fd_at = |step: f64| {
                work[ti].data_mut()[idx] = theta + step;
                let plus = eval(&work);
                work[ti].data_mut()[idx] = theta - step;
                let minus = eval(&work);
                work[ti].data_mut()[idx] = theta;
                (plus - minus) / (2.0 * step)
            };
            let mut numeric = fd_at(h);
            let analytic = grads[ti][idx];
            if filter {
                let refined = fd_at(h / 2.0);
                let scale = numeric
                    .abs()
                    .max(refined.abs())
                    .max(analytic.abs())
                    .max(1e-2);
                if (numeric - refined).abs() > 1e-4 * scale {
                    report.skipped += 1;
                    continue;
                }
                // Richardson extrapolation cancels the O(h^2) truncation
                // term, leaving only f64 rounding noise in the comparison.
                numeric = (4.0 * refined - numeric) / 3.0;
            }
            let e = rel_err(analytic, numeric);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some(WorstCoord {
                    tensor: ti,
                    index: idx,
                    analytic,
                    numeric,
                });
            }
        }
    }
    report
}

/// Up to `k` distinct indices in `[0, n)`, in draw order.
fn sample_distinct(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut picked: Vec<usize> = Vec::with_capacity(k);
    while picked.len() < k {
        let c = rng.gen_range(0..n);
        if !picked.contains(&c) {
            picked.push(c);
        }
    }
    picked
}
