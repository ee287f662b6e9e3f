//! Release acceptance gate. One test per shipping criterion; each line of the
//! harness output is the pass/fail verdict for that criterion. Oracles here
//! are deliberately self-contained re-implementations (per-pixel counting,
//! explicit sort/round rules, brute-force resampling) so a defect in the
//! product code cannot hide in a shared helper.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use wricnet_cli::checkpoint::{self, CheckpointMeta};

use wricnet_core::blocks::{wri_params, ScaleBlockKind};
use wricnet_core::data::{
    augment_pair, grid_dims, mask_tile, resample_bicubic, resample_bicubic_reference,
    resample_nearest, synth_dataset, tile_source_pair, AugOp, ImageBuf, MaskBuf, Tier, TilePair,
};
use wricnet_core::eval::{
    evaluate_tiles, global_metrics, local_ordered_metrics, stitch_masks, ConfusionMatrix,
};
use wricnet_core::gradsuite::full_suite;
use wricnet_core::graph::Graph;
use wricnet_core::model::{count_params, Model, ModelConfig, Variant};
use wricnet_core::params::{ParamBuilder, ParamStore};
use wricnet_core::rng::rng_from_seed;
use wricnet_core::train::{AdamConfig, ClassWeights, TrainConfig, Trainer};
use wricnet_core::Tensor;

fn rand_mask(h: usize, w: usize, rng: &mut ChaCha8Rng, p_change: f64) -> MaskBuf {
    let data = (0..h * w)
        .map(|_| u8::from(rng.gen_bool(p_change)))
        .collect();
    MaskBuf::new(h, w, data)
}

fn rand_image(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageBuf {
    let data = (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    ImageBuf::new(c, h, w, data)
}

fn rand_confusion(rng: &mut ChaCha8Rng) -> ConfusionMatrix {
    ConfusionMatrix {
        true_pos: rng.gen_range(0..200),
        false_pos: rng.gen_range(0..100),
        false_neg: rng.gen_range(0..100),
        true_neg: rng.gen_range(0..2000),
    }
}

/// Analytic gradients of every block and of the assembled network match
/// central finite differences at 64-bit precision within 1e-4 relative error,
/// and the whole audit stays under two minutes on one core.
#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let checks = full_suite(0xACCE57).expect("valid reduced-width configuration");
    let names: Vec<&str> = checks.iter().map(|c| c.name).collect();
    assert_eq!(
        names,
        [
            "weighted_scale",
            "rich_scale",
            "inception",
            "attention",
            "coder",
            "model"
        ],
        "the audit must cover every block plus the whole network"
    );
    for c in &checks {
        println!(
            "  {:<16} max rel err {:.3e} over {} coords ({} kink-grazed)",
            c.name, c.report.max_rel_err, c.report.checked, c.report.skipped
        );
        assert!(c.report.checked > 0, "{}: nothing was compared", c.name);
        assert!(
            c.passes(1e-4),
            "{}: max rel err {:.3e} exceeds 1e-4 (worst {:?})",
            c.name,
            c.report.max_rel_err,
            c.report.worst
        );
    }
    let elapsed = start.elapsed();
    println!("  gradient audit took {:.1}s", elapsed.as_secs_f64());
    assert!(
        elapsed.as_secs() < 120,
        "audit took {elapsed:?}, budget is 2 minutes"
    );
}

/// At full width the six published variants keep their strict size ordering.
/// Published totals are printed for comparison; the deltas themselves are
/// reported, not gated (stage widths involve judgment calls).
#[test]
fn criterion_2_parameter_ordering_matches_published_table() {
    let start = Instant::now();
    let published: [(Variant, u64); 6] = [
        (Variant::NoInceptionV2, 3_833_813),
        (Variant::NoRichScaleBlock, 3_706_491),
        (Variant::Proposed, 2_902_357),
        (Variant::NoMultiChannel, 2_896_932),
        (Variant::NoWeightedScaleBlock, 2_591_077),
        (Variant::NoRichScaleBlockV2, 2_202_553),
    ];
    let mut counts = Vec::with_capacity(published.len());
    for (variant, reference) in published {
        let cfg = ModelConfig {
            variant,
            ..ModelConfig::default()
        };
        let n = count_params(&cfg).expect("full-width config");
        println!(
            "  {:<24} {:>9} (published {:>9}, delta {:+})",
            variant.as_str(),
            n,
            reference,
            n as i64 - reference as i64
        );
        counts.push((variant, n));
    }
    for pair in counts.windows(2) {
        let ((va, na), (vb, nb)) = (pair[0], pair[1]);
        assert!(
            na > nb,
            "ordering broken: {} ({na}) must be strictly larger than {} ({nb})",
            va.as_str(),
            vb.as_str()
        );
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "counting took {elapsed:?}, budget is 1 second"
    );
}

/// Confusion counts and the four headline metrics agree with a brute-force
/// per-pixel oracle on a thousand random mask pairs (counts exactly, ratios
/// to 1e-12), and the worked fixture reproduces its four-decimal values.
#[test]
fn criterion_3_metrics_agree_with_brute_force_oracle() {
    let mut rng = rng_from_seed(0xACCE58);
    for trial in 0..1000 {
        let p = rng.gen_range(0.05..0.95);
        let pred = rand_mask(32, 32, &mut rng, p);
        let gt = rand_mask(32, 32, &mut rng, p);
        let cm = ConfusionMatrix::from_masks(&pred, &gt).expect("same dims");

        // Oracle: walk every pixel and count the four outcomes directly.
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for y in 0..32 {
            for x in 0..32 {
                match (pred.get(y, x), gt.get(y, x)) {
                    (1, 1) => tp += 1,
                    (1, 0) => fp += 1,
                    (0, 1) => fn_ += 1,
                    (0, 0) => tn += 1,
                    other => panic!("non-binary mask pixel {other:?}"),
                }
            }
        }
        assert_eq!(
            (cm.true_pos, cm.false_pos, cm.false_neg, cm.true_neg),
            (tp, fp, fn_, tn),
            "trial {trial}: integer counts must match exactly"
        );

        // Oracle ratios, including the degenerate conventions: no true
        // changes -> ma 0; no detections -> fa 0; nothing positive anywhere
        // -> f1 and iou are a perfect 1.
        let ma = if tp + fn_ == 0 {
            0.0
        } else {
            fn_ as f64 / (tp + fn_) as f64
        };
        let fa = if tp + fp == 0 {
            0.0
        } else {
            fp as f64 / (tp + fp) as f64
        };
        let f1 = if 2 * tp + fp + fn_ == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        let iou = if tp + fp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp + fn_) as f64
        };
        let m = cm.metrics();
        assert!(
            (m.ma - ma).abs() < 1e-12,
            "trial {trial}: ma {} vs {ma}",
            m.ma
        );
        assert!(
            (m.fa - fa).abs() < 1e-12,
            "trial {trial}: fa {} vs {fa}",
            m.fa
        );
        assert!(
            (m.f1 - f1).abs() < 1e-12,
            "trial {trial}: f1 {} vs {f1}",
            m.f1
        );
        assert!(
            (m.iou - iou).abs() < 1e-12,
            "trial {trial}: iou {} vs {iou}",
            m.iou
        );
    }

    let fixture = ConfusionMatrix {
        true_pos: 50,
        false_pos: 10,
        false_neg: 40,
        true_neg: 900,
    };
    let round4 = |v: f64| (v * 10_000.0).round() / 10_000.0;
    let m = fixture.metrics();
    println!(
        "  fixture tp=50 fp=10 fn=40 tn=900 -> ma {:.4} fa {:.4} f1 {:.4} iou {:.4}",
        m.ma, m.fa, m.f1, m.iou
    );
    assert!((round4(m.ma) - 0.4444).abs() < 1e-12);
    assert!((round4(m.fa) - 0.1667).abs() < 1e-12);
    assert!((round4(m.f1) - 0.6667).abs() < 1e-12);
    assert!((round4(m.iou) - 0.5000).abs() < 1e-12);
}

/// Best-fraction scoring equals an independent top-k oracle (half-up count,
/// F1-descending sort, ties to the lower tile id, counts pooled before the
/// ratios), keeping 5% never scores below keeping 10% which never scores
/// below keeping everything, and the whole-set score equals the confusion of
/// the stitched full image bit for bit.
#[test]
fn criterion_4_local_ordered_and_global_indicators() {
    // Oracle: the selection and pooling rules, restated from scratch.
    let oracle = |cms: &[ConfusionMatrix], frac: f64| -> (u64, u64, u64, u64) {
        let n = cms.len();
        let k = ((frac * n as f64 + 0.5).floor() as usize).clamp(1, n);
        let f1 = |c: &ConfusionMatrix| {
            let d = 2 * c.true_pos + c.false_pos + c.false_neg;
            if d == 0 {
                1.0
            } else {
                2.0 * c.true_pos as f64 / d as f64
            }
        };
        let mut ids: Vec<usize> = (0..n).collect();
        ids.sort_by(|&a, &b| {
            f1(&cms[b])
                .partial_cmp(&f1(&cms[a]))
                .unwrap()
                .then(a.cmp(&b))
        });
        ids.truncate(k);
        ids.iter().fold((0, 0, 0, 0), |acc, &i| {
            (
                acc.0 + cms[i].true_pos,
                acc.1 + cms[i].false_pos,
                acc.2 + cms[i].false_neg,
                acc.3 + cms[i].true_neg,
            )
        })
    };

    let mut rng = rng_from_seed(0xACCE59);
    for fixture in 0..100 {
        let n = rng.gen_range(20..60);
        let cms: Vec<ConfusionMatrix> = (0..n).map(|_| rand_confusion(&mut rng)).collect();

        for frac in [0.05, 0.10, 0.25, 0.50, 1.0] {
            let got = local_ordered_metrics(&cms, frac);
            let (tp, fp, fn_, tn) = oracle(&cms, frac);
            let pooled = ConfusionMatrix {
                true_pos: tp,
                false_pos: fp,
                false_neg: fn_,
                true_neg: tn,
            };
            let want = pooled.metrics();
            assert!(
                (got.ma - want.ma).abs() < 1e-12
                    && (got.fa - want.fa).abs() < 1e-12
                    && (got.f1 - want.f1).abs() < 1e-12
                    && (got.iou - want.iou).abs() < 1e-12,
                "fixture {fixture} frac {frac}: {got:?} vs oracle {want:?}"
            );
        }

        let f5 = local_ordered_metrics(&cms, 0.05).f1;
        let f10 = local_ordered_metrics(&cms, 0.10).f1;
        let gi = global_metrics(&cms).f1;
        assert!(
            f5 >= f10 - 1e-12,
            "fixture {fixture}: F1@5% {f5} < F1@10% {f10}"
        );
        assert!(
            f10 >= gi - 1e-12,
            "fixture {fixture}: F1@10% {f10} < global {gi}"
        );
    }

    // Whole-set pooling must equal counting on the reassembled full image.
    for trial in 0..20 {
        let rows = rng.gen_range(1..5);
        let cols = rng.gen_range(1..5);
        let window = 8;
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        let mut cms = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let pred = rand_mask(window, window, &mut rng, 0.4);
                let gt = rand_mask(window, window, &mut rng, 0.4);
                cms.push(ConfusionMatrix::from_masks(&pred, &gt).expect("same dims"));
                preds.push((r, c, pred));
                gts.push((r, c, gt));
            }
        }
        let pooled = ConfusionMatrix::sum(&cms);
        let full_pred = stitch_masks(&preds, rows, cols, window).expect("complete grid");
        let full_gt = stitch_masks(&gts, rows, cols, window).expect("complete grid");
        let stitched = ConfusionMatrix::from_masks(&full_pred, &full_gt).expect("same dims");
        assert_eq!(pooled, stitched, "trial {trial}: pooled vs stitched counts");
        assert_eq!(global_metrics(&cms), stitched.metrics(), "trial {trial}");
    }
}

/// Structural contracts at 64-bit: the inception block and the coder preserve
/// spatial dims for 16-divisible inputs, the coder bottleneck sits at 1/16
/// resolution with `256 * width_scale` channels, and all five outputs are
/// per-pixel two-class distributions (channel sums within 1e-6 of one).
#[test]
fn criterion_5_shapes_and_output_distributions() {
    let rand_tensor = |shape: &[usize], rng: &mut ChaCha8Rng| {
        let numel: usize = shape.iter().product();
        Tensor::<f64>::new(shape, (0..numel).map(|_| rng.gen_range(0.0..1.0)).collect())
    };
    let mut rng = rng_from_seed(0xACCE61);

    // Standalone inception block on a non-square input.
    let mut pb = ParamBuilder::new();
    let wri = wri_params(&mut pb, "wri", 8, 4, 4, ScaleBlockKind::Rich, true, false);
    let mut store = ParamStore::<f64>::init(pb.finish(), 0);
    store.randomize_uniform(0xACCE60, -0.5, 0.5);
    let mut g = Graph::new();
    let pv = store.bind_all(&mut g, false);
    let x = g.constant(rand_tensor(&[1, 8, 16, 32], &mut rng));
    let fused = wri.forward(&mut g, &pv, x).fused;
    assert_eq!(
        g.value(fused).shape(),
        &[1, 8, 16, 32],
        "inception block must preserve dims"
    );

    let width_scale = 0.125;
    let cfg = ModelConfig {
        width_scale,
        ..ModelConfig::default()
    };
    let model = Model::<f64>::new(cfg, 0xACCE62).expect("valid config");
    let widths = model.config.encoder_widths();
    assert_eq!(
        widths[3],
        (256.0 * width_scale) as usize,
        "deepest encoder stage must carry 256 * width_scale channels"
    );

    for (b, h, w) in [(1usize, 16usize, 16usize), (2, 32, 48), (1, 48, 32)] {
        let mut g = Graph::new();
        let pv = model.bind(&mut g, false);
        let t1 = g.constant(rand_tensor(&[b, 3, h, w], &mut rng));
        let t2 = g.constant(rand_tensor(&[b, 3, h, w], &mut rng));

        let (decoded, trace) = model.refs.coder.forward_traced(&mut g, &pv, t1, t2);
        let decoded_shape = g.value(decoded).shape().to_vec();
        assert_eq!(
            &decoded_shape[2..],
            [h, w],
            "coder must preserve spatial dims at {h}x{w}"
        );
        assert_eq!(
            g.value(trace.bottleneck).shape(),
            &[b, widths[3], h / 16, w / 16],
            "bottleneck must sit at 1/16 resolution"
        );

        let outs = model.forward(&mut g, &pv, t1, t2);
        for (head, out) in outs.all().into_iter().enumerate() {
            let t = g.value(out);
            assert_eq!(t.shape(), &[b, 2, h, w], "head {head} at {h}x{w}");
            let d = t.data();
            let plane = h * w;
            for n in 0..b {
                for i in 0..plane {
                    let p0 = d[n * 2 * plane + i];
                    let p1 = d[n * 2 * plane + plane + i];
                    assert!(p0 >= 0.0 && p1 >= 0.0, "head {head}: negative probability");
                    assert!(
                        (p0 + p1 - 1.0).abs() < 1e-6,
                        "head {head}: pixel {i} sums to {}",
                        p0 + p1
                    );
                }
            }
        }
        println!(
            "  {b}x3x{h}x{w}: five distributions, bottleneck {:?}",
            &[b, widths[3], h / 16, w / 16]
        );
    }
}

/// A quarter-width network memorizes eight synthetic 64x64 tiles: training-set
/// whole-set F1 passes 0.95 within 200 epochs, in under ten minutes, and the
/// run is bit-reproducible from its seed.
#[test]
fn criterion_6_synthetic_overfit_converges_deterministically() {
    let start = Instant::now();
    let seed = 0xACCE63;
    let mut tiles: Vec<TilePair> = Vec::new();
    for (name, t1, t2, gt) in synth_dataset(2, 128, seed) {
        tiles.extend(tile_source_pair(&name, &t1, &t2, &gt, Tier::High, 64).expect("tiling"));
    }
    assert_eq!(tiles.len(), 8, "two 128x128 sources at window 64");
    assert!(tiles.iter().all(|t| t.gt.height == 64 && t.gt.width == 64));

    let cfg = ModelConfig {
        width_scale: 0.25,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs: 200,
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        seed,
        augment: false,
        ..TrainConfig::default()
    };
    let model = Model::<f32>::new(cfg.clone(), seed).expect("valid config");
    let mut trainer = Trainer::new(model, train_cfg);

    let mut first_epochs = Vec::new();
    let mut converged_at = None;
    for epoch in 1..=train_cfg.epochs {
        let rows = trainer.run_epoch(&tiles, epoch);
        if epoch <= 2 {
            first_epochs.push(rows.clone());
        }
        let cms = evaluate_tiles(&trainer.model, &tiles).expect("evaluable tiles");
        let f1 = global_metrics(&cms).f1;
        println!(
            "  epoch {epoch:>3}: mean loss {:.4}, training-set F1 {f1:.4} ({:.0}s)",
            wricnet_core::train::mean_total(&rows),
            start.elapsed().as_secs_f64()
        );
        if f1 > 0.95 {
            converged_at = Some(epoch);
            break;
        }
    }
    let epoch = converged_at.expect("F1 must pass 0.95 within 200 epochs");
    println!(
        "  converged at epoch {epoch} in {:.0}s",
        start.elapsed().as_secs_f64()
    );
    assert!(
        start.elapsed().as_secs() < 600,
        "overfit took {:?}, budget is 10 minutes",
        start.elapsed()
    );

    // Same seed, fresh state: the first epochs replay bit for bit.
    let model = Model::<f32>::new(cfg, seed).expect("valid config");
    let mut replay = Trainer::new(model, train_cfg);
    for (i, expected) in first_epochs.iter().enumerate() {
        let rows = replay.run_epoch(&tiles, (i + 1) as u32);
        assert_eq!(&rows, expected, "epoch {} must replay identically", i + 1);
    }
}

/// Lossless plumbing: tiling stitches back to the original, channel split
/// concatenates back, orientation augmentations invert (flips) or cycle with
/// period four (rotation), checkpoints reload bit-exact, nearest-neighbor
/// masks stay binary, and fast bicubic matches its brute-force oracle to
/// 1e-6.
#[test]
fn criterion_7_round_trips_are_lossless() {
    let mut rng = rng_from_seed(0xACCE64);

    // Tile then stitch.
    let mask = rand_mask(64, 96, &mut rng, 0.35);
    let window = 16;
    let (rows, cols) = grid_dims(mask.height, mask.width, window);
    let mut placed = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            placed.push((r, c, mask_tile(&mask, window, r, c)));
        }
    }
    let back = stitch_masks(&placed, rows, cols, window).expect("complete grid");
    assert_eq!(back, mask, "tile -> stitch must reproduce the mask");

    // Split then concat on the graph.
    let mut g = Graph::<f64>::new();
    let data: Vec<f64> = (0..2 * 12 * 5 * 7)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let t = Tensor::new(&[2, 12, 5, 7], data.clone());
    let x = g.constant(t);
    let parts = g.split_channels(x, 4);
    assert_eq!(parts.len(), 4);
    let joined = g.concat_channels(&parts);
    assert_eq!(g.value(joined).shape(), &[2, 12, 5, 7]);
    assert_eq!(
        g.value(joined).data(),
        &data[..],
        "split -> concat must be exact"
    );

    // Orientation ops: flips are involutions, rotation has period four.
    let tile = TilePair {
        t1: rand_image(3, 24, 40, &mut rng),
        t2: rand_image(3, 24, 40, &mut rng),
        gt: rand_mask(24, 40, &mut rng, 0.3),
        source: "rt".to_string(),
        row: 1,
        col: 2,
        tier: Tier::Mid,
    };
    for op in [AugOp::FlipUd, AugOp::FlipLr] {
        let twice = augment_pair(&augment_pair(&tile, op), op);
        assert_eq!(twice.t1, tile.t1, "{op:?} applied twice");
        assert_eq!(twice.t2, tile.t2, "{op:?} applied twice");
        assert_eq!(twice.gt, tile.gt, "{op:?} applied twice");
    }
    let mut turned = tile.clone();
    for _ in 0..4 {
        turned = augment_pair(&turned, AugOp::Rot90);
    }
    assert_eq!(turned.t1, tile.t1, "four quarter turns");
    assert_eq!(turned.gt, tile.gt, "four quarter turns");
    let once = augment_pair(&tile, AugOp::Rot90);
    assert_eq!(
        (once.gt.height, once.gt.width),
        (40, 24),
        "rotation swaps dims"
    );

    // Checkpoint save/load is bit-exact into a differently seeded twin.
    let cfg = ModelConfig {
        width_scale: 0.125,
        ..ModelConfig::default()
    };
    let saved = Model::<f32>::new(cfg.clone(), 41).expect("valid config");
    let dir = TempDir::new().expect("tempdir");
    let path = dir.path().join("weights.ckpt");
    let meta = CheckpointMeta {
        seed: 41,
        variant: cfg.variant.as_str().to_string(),
        width_scale: cfg.width_scale,
    };
    checkpoint::save(&path, &saved.store, &meta).expect("save");
    let mut twin = Model::<f32>::new(cfg, 99).expect("valid config");
    let loaded = checkpoint::load(&path, &mut twin.store).expect("load");
    assert_eq!((loaded.seed, loaded.width_scale), (41, 0.125));
    for i in 0..saved.store.specs().len() {
        let a = saved.store.tensor(i);
        let b = twin.store.tensor(i);
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits(), "tensor {i} must reload bit-exact");
        }
    }

    // Nearest-neighbor label resampling keeps masks binary.
    let mask = rand_mask(33, 17, &mut rng, 0.5);
    for (h, w) in [(16, 40), (66, 34), (7, 7)] {
        let res = resample_nearest(&mask, h, w);
        assert_eq!((res.height, res.width), (h, w));
        assert!(
            res.data.iter().all(|&v| v <= 1),
            "resampled mask must stay binary"
        );
    }

    // Separable bicubic against the brute-force oracle.
    let img = rand_image(3, 37, 23, &mut rng);
    for (h, w) in [(19, 41), (9, 6), (74, 46)] {
        let fast = resample_bicubic(&img, h, w);
        let slow = resample_bicubic_reference(&img, h, w);
        let worst = fast
            .data
            .iter()
            .zip(&slow.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-6, "bicubic to {h}x{w}: max deviation {worst}");
    }
}

/// The class weighting balances the two classes exactly: with change pixels
/// present, `change_px * w_change == nonchange_px * w_nonchange` holds in
/// integer arithmetic, per tile and pooled over a tile set.
#[test]
fn criterion_8_class_weights_balance_exactly() {
    let mut rng = rng_from_seed(0xACCE65);
    let mut checked = 0;
    for _ in 0..500 {
        let h = rng.gen_range(4..40);
        let w = rng.gen_range(4..40);
        let p = rng.gen_range(0.02..0.98);
        let mask = rand_mask(h, w, &mut rng, p);
        let cw = ClassWeights::from_mask(&mask);
        if cw.change_px == 0 {
            // No change pixels: the weight degrades to 1 by convention and
            // there is nothing to balance.
            assert_eq!(cw.change_weight_ratio(), (1, 1));
            continue;
        }
        // Exact identity via cross-multiplication of the two ratios.
        let (cn, cd) = cw.change_weight_ratio();
        let (un, ud) = cw.nonchange_weight_ratio();
        assert_eq!(
            u128::from(cw.change_px) * u128::from(cn) * u128::from(ud),
            u128::from(cw.nonchange_px) * u128::from(un) * u128::from(cd),
            "change {} nonchange {}",
            cw.change_px,
            cw.nonchange_px
        );
        assert!(cw.is_balanced());
        checked += 1;
    }
    assert!(checked > 400, "only {checked} masks had change pixels");

    // All-change masks balance trivially (both sides zero); pooled counts
    // over a tile set balance the same way.
    let all_change = ClassWeights::from_mask(&MaskBuf::new(4, 4, vec![1; 16]));
    assert!(all_change.is_balanced());
    let tiles: Vec<TilePair> = (0..6)
        .map(|i| TilePair {
            t1: rand_image(3, 16, 16, &mut rng),
            t2: rand_image(3, 16, 16, &mut rng),
            gt: rand_mask(16, 16, &mut rng, 0.3),
            source: format!("s{i}"),
            row: 0,
            col: i,
            tier: Tier::High,
        })
        .collect();
    let pooled = ClassWeights::from_tiles(&tiles);
    assert!(pooled.change_px > 0, "fixture should contain change pixels");
    assert!(pooled.is_balanced());
    let expected: u64 = tiles.iter().map(|t| t.gt.ones_count()).sum();
    assert_eq!(pooled.change_px, expected);
    assert_eq!(pooled.change_px + pooled.nonchange_px, 6 * 16 * 16);
}
