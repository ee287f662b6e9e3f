//! Training: class-frequency weighted cross entropy over the five output
//! heads, Adam, and a deterministic epoch runner with joint augmentation.
//!
//! The loss is `sum_k lambda_k * L_k` where each `L_k` is the per-pixel mean
//! of `-w * ln(p_true + 1e-7)`; the change-class weight is the exact ratio of
//! non-change to change pixels (1 when a class is absent).

use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;

use crate::data::{
    augment_pair, augment_seed, image_to_tensor, mask_to_onehot, AugOp, MaskBuf, TilePair,
};
use crate::graph::{Graph, Var};
use crate::model::{Model, ModelOutputs};
use crate::params::ParamStore;
use crate::rng::{derive_seed, hash_str, rng_from_seed};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Head weights, in output order: ungated shallow, gated shallow, ungated
/// deep, gated deep, fused.
pub const LOSS_LAMBDAS: [f64; 5] = [1.0, 1.3, 0.5, 0.65, 2.3];

/// Offset inside the logarithm of the cross entropy.
pub const LOG_EPS: f64 = 1e-7;

/// Integer pixel counts backing the class weights, so the balance identity
/// `change_px * w_change == nonchange_px * w_nonchange` is checkable exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassWeights {
    pub change_px: u64,
    pub nonchange_px: u64,
}

impl ClassWeights {
    pub fn from_mask(mask: &MaskBuf) -> ClassWeights {
        let change = mask.ones_count();
        ClassWeights {
            change_px: change,
            nonchange_px: mask.data.len() as u64 - change,
        }
    }

    pub fn from_tiles(tiles: &[TilePair]) -> ClassWeights {
        tiles.iter().fold(ClassWeights::default(), |acc, t| {
            let w = ClassWeights::from_mask(&t.gt);
            ClassWeights {
                change_px: acc.change_px + w.change_px,
                nonchange_px: acc.nonchange_px + w.nonchange_px,
            }
        })
    }

    /// Change-class weight as an exact `(numerator, denominator)` ratio:
    /// `nonchange / change`, or 1 when no change pixels exist.
    pub fn change_weight_ratio(&self) -> (u64, u64) {
        if self.change_px == 0 {
            (1, 1)
        } else {
            (self.nonchange_px, self.change_px)
        }
    }

    /// The non-change class is always weighted 1.
    pub fn nonchange_weight_ratio(&self) -> (u64, u64) {
        (1, 1)
    }

    pub fn change_weight(&self) -> f64 {
        let (n, d) = self.change_weight_ratio();
        n as f64 / d as f64
    }

    /// Exact rational check of `change_px * w_change == nonchange_px *
    /// w_nonchange`; holds whenever both classes are present (and trivially
    /// when both are empty).
    pub fn is_balanced(&self) -> bool {
        let (cn, cd) = self.change_weight_ratio();
        let (un, ud) = self.nonchange_weight_ratio();
        u128::from(self.change_px) * u128::from(cn) * u128::from(ud)
            == u128::from(self.nonchange_px) * u128::from(un) * u128::from(cd)
    }
}

/// Per-entry loss coefficients: the one-hot target scaled by the class
/// weight, so the graph-side term reduces to `-mean_px sum_c coeff ln(p+eps)`.
pub fn ce_coeff<T: Scalar>(gt_onehot: &Tensor<T>, w_change: f64) -> Tensor<T> {
    let (b, c, h, w) = gt_onehot.dims4();
    assert_eq!(c, 2, "two-class targets expected");
    let n = h * w;
    let wc = T::from_f64(w_change);
    let mut data = gt_onehot.data().to_vec();
    for bi in 0..b {
        let base = (bi * 2 + 1) * n;
        for v in &mut data[base..base + n] {
            *v *= wc;
        }
    }
    Tensor::new(&[b, 2, h, w], data)
}

/// Weighted cross entropy of one predicted distribution against coefficients
/// from [`ce_coeff`].
pub fn weighted_ce<T: Scalar>(g: &mut Graph<T>, pred: Var, coeff: &Tensor<T>) -> Var {
    g.weighted_nll_mean(pred, coeff.clone(), T::from_f64(LOG_EPS))
}

/// Builds the five weighted cross-entropy terms and their lambda-weighted
/// sum. Returns `(total, [terms; 5])` in head order.
pub fn joint_loss<T: Scalar>(
    g: &mut Graph<T>,
    outputs: &ModelOutputs,
    gt_onehot: &Tensor<T>,
    w_change: f64,
    lambdas: &[f64; 5],
) -> (Var, [Var; 5]) {
    let coeff = ce_coeff(gt_onehot, w_change);
    let heads = outputs.all();
    let mut terms = [heads[0]; 5];
    let mut total: Option<Var> = None;
    for (i, &head) in heads.iter().enumerate() {
        let term = weighted_ce(g, head, &coeff);
        terms[i] = term;
        let scaled = g.scale(term, T::from_f64(lambdas[i]));
        total = Some(match total {
            Some(acc) => g.add(acc, scaled),
            None => scaled,
        });
    }
    (total.expect("five terms"), terms)
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; a missing gradient counts as zero.
pub struct Adam<T> {
    pub cfg: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<T>) -> Adam<T> {
        let m = store
            .tensors()
            .iter()
            .map(|t| alloc::vec![T::zero(); t.numel()])
            .collect::<Vec<_>>();
        let v = m.clone();
        Adam { cfg, m, v, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over every parameter tensor, `grads[i]` aligned with
    /// tensor `i` of the store.
    ///
    /// # Panics
    /// If a gradient length disagrees with its tensor.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<&[T]>]) {
        assert_eq!(grads.len(), store.tensors().len(), "gradient list length");
        self.t += 1;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - Float::powi(self.cfg.beta1, self.t as i32));
        let corr2 = T::from_f64(1.0 - Float::powi(self.cfg.beta2, self.t as i32));
        let lr = T::from_f64(self.cfg.lr);
        let eps = T::from_f64(self.cfg.eps);
        for (i, tensor) in store.tensors_mut().iter_mut().enumerate() {
            if let Some(gr) = grads[i] {
                assert_eq!(gr.len(), tensor.numel(), "gradient length for tensor {i}");
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in tensor.data_mut().iter_mut().enumerate() {
                let grad = grads[i].map_or(T::zero(), |gr| gr[j]);
                m[j] = b1 * m[j] + (one - b1) * grad;
                v[j] = b2 * v[j] + (one - b2) * grad * grad;
                let mhat = m[j] / corr1;
                let vhat = v[j] / corr2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// How the change-class weight is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    /// From each tile's own mask (the default).
    PerTile,
    /// From the pooled counts of the whole training set.
    Dataset,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub adam: AdamConfig,
    pub lambdas: [f64; 5],
    pub seed: u64,
    pub weight_mode: WeightMode,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            adam: AdamConfig::default(),
            lambdas: LOSS_LAMBDAS,
            seed: 0,
            weight_mode: WeightMode::PerTile,
            augment: true,
        }
    }
}

/// One optimizer step's losses, for the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub epoch: u32,
    /// Head order: ungated shallow, gated shallow, ungated deep, gated deep,
    /// fused.
    pub terms: [f64; 5],
    pub total: f64,
}

/// Epoch-at-a-time trainer; optimizer state persists across calls so a run
/// can be checkpointed and observed between epochs.
pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub opt: Adam<T>,
    pub cfg: TrainConfig,
    step: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, cfg: TrainConfig) -> Trainer<T> {
        let opt = Adam::new(cfg.adam, &model.store);
        Trainer {
            model,
            opt,
            cfg,
            step: 0,
        }
    }

    /// One pass over `tiles` in a seed-derived order, one Adam step per tile.
    /// Tile visit order, augmentation draws, and therefore every parameter
    /// update depend only on `(cfg.seed, epoch, tile index)`.
    pub fn run_epoch(&mut self, tiles: &[TilePair], epoch: u32) -> Vec<LossRow> {
        assert!(!tiles.is_empty(), "cannot train on an empty tile set");
        let weighted = self.model.config.variant.weighted_class();
        let dataset_w = match self.cfg.weight_mode {
            WeightMode::Dataset => Some(ClassWeights::from_tiles(tiles)),
            WeightMode::PerTile => None,
        };
        let mut order: Vec<usize> = (0..tiles.len()).collect();
        let shuffle_seed = derive_seed(&[self.cfg.seed, hash_str("epoch-order"), epoch as u64]);
        order.shuffle(&mut rng_from_seed(shuffle_seed));
        let mut rows = Vec::with_capacity(tiles.len());
        for idx in order {
            let tile = if self.cfg.augment {
                let mut rng = rng_from_seed(augment_seed(self.cfg.seed, epoch as u64, idx as u64));
                augment_pair(&tiles[idx], AugOp::sample(&mut rng))
            } else {
                tiles[idx].clone()
            };
            let w_change = if !weighted {
                1.0
            } else {
                match dataset_w {
                    Some(w) => w.change_weight(),
                    None => ClassWeights::from_mask(&tile.gt).change_weight(),
                }
            };
            rows.push(self.train_step(&tile, w_change, epoch));
        }
        rows
    }

    fn train_step(&mut self, tile: &TilePair, w_change: f64, epoch: u32) -> LossRow {
        let mut g = Graph::new();
        let pv = self.model.bind(&mut g, true);
        let t1 = g.constant(image_to_tensor(&tile.t1));
        let t2 = g.constant(image_to_tensor(&tile.t2));
        let gt = mask_to_onehot::<T>(&tile.gt);
        let out = self.model.forward(&mut g, &pv, t1, t2);
        let (total, terms) = joint_loss(&mut g, &out, &gt, w_change, &self.cfg.lambdas);
        let total_val = g.value(total).data()[0].to_f64();
        let term_vals = terms.map(|t| g.value(t).data()[0].to_f64());
        g.backward(total);
        let grads: Vec<Option<&[T]>> = pv.iter().map(|&v| g.grad(v)).collect();
        self.opt.step(&mut self.model.store, &grads);
        self.step += 1;
        LossRow {
            step: self.step,
            epoch,
            terms: term_vals,
            total: total_val,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// Mean of the summed loss over an epoch's rows.
pub fn mean_total(rows: &[LossRow]) -> f64 {
    rows.iter().map(|r| r.total).sum::<f64>() / rows.len() as f64
}
