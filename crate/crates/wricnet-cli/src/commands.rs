//! The six commands behind the binary. Each takes the (already overridden)
//! run configuration, prints its human-readable results on stdout, writes its
//! artifacts, and maps failures onto the two exit classes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use wricnet_core::data::{
    normalize_minmax, pair_to_tier, synth_dataset, tile_source_pair, ImageBuf, MaskBuf, Tier,
    TilePair,
};
use wricnet_core::eval::{
    cross_tier_mean, global_metrics, local_ordered_metrics, overlay_rgb, predict_tile,
    stitch_masks, ConfusionMatrix, MetricSet,
};
use wricnet_core::gradsuite::full_suite;
use wricnet_core::model::{count_params, Model, ModelConfig, Variant};
use wricnet_core::train::{mean_total, Trainer};

use crate::checkpoint::{self, CheckpointMeta};
use crate::config::RunConfig;
use crate::dataset::{self, PrepareManifest, TileEntry};
use crate::logs::{summary_table, write_tile_report, LossLog, TierSummary, TileReportRow};
use crate::pngio;
use crate::{at_path, CliError, Result};

/// Published full-width parameter totals the ablation table is compared
/// against. The strict descending order across these six is a checked
/// invariant; exact totals are not (stage widths are partly a judgment call,
/// so small deltas are expected and reported).
pub const REFERENCE_TOTALS: [(Variant, u64); 6] = [
    (Variant::NoInceptionV2, 3_833_813),
    (Variant::NoRichScaleBlock, 3_706_491),
    (Variant::Proposed, 2_902_357),
    (Variant::NoMultiChannel, 2_896_932),
    (Variant::NoWeightedScaleBlock, 2_591_077),
    (Variant::NoRichScaleBlockV2, 2_202_553),
];

#[must_use]
pub fn reference_total(variant: Variant) -> Option<u64> {
    REFERENCE_TOTALS
        .iter()
        .find(|(v, _)| *v == variant)
        .map(|(_, n)| *n)
}

/// 2,902,357-style formatting for readable parameter totals.
#[must_use]
pub fn group_digits(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn ensure_dir(dir: &Path) -> Result<()> {
    at_path(fs::create_dir_all(dir), "creating directory", dir)
}

/// Builds the tile sets for every configured tier and writes them with their
/// provenance manifest. Rerunning on the same inputs and seed reproduces the
/// manifest byte-for-byte.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let tiers = cfg.tiers()?;
    let window = cfg.data.window;
    let seed = cfg.model.seed;

    let (origin, sources): (String, Vec<(String, ImageBuf, ImageBuf, MaskBuf)>) =
        if cfg.data.synth_pairs > 0 {
            let origin = format!("synth:{}x{}", cfg.data.synth_pairs, cfg.data.synth_size);
            (
                origin,
                synth_dataset(cfg.data.synth_pairs, cfg.data.synth_size, seed),
            )
        } else {
            let root = &cfg.data.source;
            let names = dataset::scan_sources(root)?;
            let mut loaded = Vec::with_capacity(names.len());
            for name in names {
                let (t1, t2, gt) = dataset::load_source(root, &name)?;
                loaded.push((name, t1, t2, gt));
            }
            (root.display().to_string(), loaded)
        };

    let prepared = &cfg.data.prepared;
    let mut entries = Vec::new();
    let mut per_tier: BTreeMap<&'static str, usize> = BTreeMap::new();
    for (name, t1, t2, gt) in &sources {
        let t1n = normalize_minmax(t1);
        let t2n = normalize_minmax(t2);
        for &tier in &tiers {
            let (d1, d2, dg) = pair_to_tier(&t1n, &t2n, gt, tier);
            let tiles = tile_source_pair(name, &d1, &d2, &dg, tier, window)?;
            for tile in &tiles {
                dataset::write_tile(prepared, tile)?;
                entries.push(TileEntry {
                    tier: tier.as_str().to_string(),
                    source: tile.source.clone(),
                    row: tile.row,
                    col: tile.col,
                });
            }
            *per_tier.entry(tier.as_str()).or_default() += tiles.len();
        }
    }
    if entries.is_empty() {
        return Err(CliError::validation(format!(
            "no tiles produced: every source is smaller than one {window}-pixel window at the configured tiers"
        )));
    }

    let manifest = PrepareManifest {
        seed,
        window,
        origin,
        normalization: "minmax".to_string(),
        tiers: tiers.iter().map(|t| t.as_str().to_string()).collect(),
        tiles: entries,
    };
    dataset::write_manifest(prepared, &manifest)?;

    println!(
        "prepared {} tiles from {} sources into {}",
        manifest.tiles.len(),
        sources.len(),
        prepared.display()
    );
    for (tier, n) in &per_tier {
        println!("  {tier}: {n} tiles");
    }
    Ok(())
}

/// Trains from scratch on the prepared training split, logging every step and
/// checkpointing the weights.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let tiles = dataset::load_prepared(&cfg.data.prepared, &cfg.tiers()?, &cfg.data.train_sources)?;

    let model: Model<f32> = Model::new(model_cfg, cfg.model.seed)?;
    let meta = CheckpointMeta {
        seed: cfg.model.seed,
        variant: cfg.model.variant.clone(),
        width_scale: cfg.model.width_scale,
    };
    let mut trainer = Trainer::new(model, train_cfg);
    let mut log = LossLog::create(&cfg.training.loss_log)?;
    for epoch in 1..=cfg.training.epochs {
        let rows = trainer.run_epoch(&tiles, epoch);
        for row in &rows {
            log.append(row)?;
        }
        println!(
            "epoch {epoch}/{} mean loss {:.6}",
            cfg.training.epochs,
            mean_total(&rows)
        );
        let every = cfg.training.checkpoint_every;
        if every > 0 && epoch % every == 0 && epoch != cfg.training.epochs {
            let mut name = cfg
                .training
                .checkpoint
                .file_name()
                .unwrap_or_default()
                .to_os_string();
            name.push(format!(".epoch{epoch}"));
            let path = cfg.training.checkpoint.with_file_name(name);
            checkpoint::save(&path, &trainer.model.store, &meta)?;
        }
    }
    log.flush()?;
    checkpoint::save(&cfg.training.checkpoint, &trainer.model.store, &meta)?;
    println!(
        "trained {} epochs ({} steps) on {} tiles; weights in {}, losses in {}",
        cfg.training.epochs,
        trainer.steps_taken(),
        tiles.len(),
        cfg.training.checkpoint.display(),
        cfg.training.loss_log.display()
    );
    Ok(())
}

struct TierEval {
    tier: Tier,
    cms: Vec<ConfusionMatrix>,
}

/// Scores a checkpoint on the prepared evaluation split: per-tile report,
/// per-tier best-fraction and whole-set scores, prediction images.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let model_cfg = cfg.model_config()?;
    let mut model: Model<f32> = Model::new(model_cfg, cfg.model.seed)?;
    let meta = checkpoint::load(&cfg.training.checkpoint, &mut model.store)?;
    if meta.variant != cfg.model.variant || meta.width_scale != cfg.model.width_scale {
        return Err(CliError::validation(format!(
            "checkpoint {} holds {} at width_scale {}, but the run is configured for {} at {}",
            cfg.training.checkpoint.display(),
            meta.variant,
            meta.width_scale,
            cfg.model.variant,
            cfg.model.width_scale
        )));
    }

    let tiers = cfg.tiers()?;
    let tiles = dataset::load_prepared(&cfg.data.prepared, &tiers, &cfg.data.eval_sources)?;
    let out = &cfg.eval.out;
    ensure_dir(out)?;

    let mut report_rows = Vec::new();
    let mut tier_evals = Vec::new();
    for &tier in &tiers {
        let tier_tiles: Vec<&TilePair> = tiles.iter().filter(|t| t.tier == tier).collect();
        if tier_tiles.is_empty() {
            continue;
        }
        let mut cms = Vec::with_capacity(tier_tiles.len());
        let mut preds: BTreeMap<&str, Vec<(usize, usize, MaskBuf)>> = BTreeMap::new();
        for tile in &tier_tiles {
            let pred = predict_tile(&model, tile);
            let cm = ConfusionMatrix::from_masks(&pred, &tile.gt)?;
            if cfg.eval.write_images {
                let pred_dir = out.join(tier.as_str()).join("pred");
                let over_dir = out.join(tier.as_str()).join("overlay");
                ensure_dir(&pred_dir)?;
                ensure_dir(&over_dir)?;
                let name = format!("{}.png", tile.tile_name());
                pngio::write_mask(&pred_dir.join(&name), &pred)?;
                pngio::write_rgb(&over_dir.join(&name), &overlay_rgb(&pred, &tile.gt)?)?;
            }
            preds
                .entry(&tile.source)
                .or_default()
                .push((tile.row, tile.col, pred));
            report_rows.push(TileReportRow {
                tier,
                source: tile.source.clone(),
                row: tile.row,
                col: tile.col,
                cm,
            });
            cms.push(cm);
        }
        if cfg.eval.write_images {
            // Re-assemble whole-image predictions where the split kept a
            // source's full grid.
            for (source, placed) in &preds {
                let rows = placed.iter().map(|p| p.0).max().unwrap_or(0) + 1;
                let cols = placed.iter().map(|p| p.1).max().unwrap_or(0) + 1;
                if placed.len() != rows * cols {
                    continue;
                }
                let stitched = stitch_masks(placed, rows, cols, cfg.data.window)?;
                let dir = out.join(tier.as_str()).join("stitched");
                ensure_dir(&dir)?;
                pngio::write_mask(&dir.join(format!("{source}.png")), &stitched)?;
            }
        }
        tier_evals.push(TierEval { tier, cms });
    }

    write_tile_report(&out.join("report.csv"), &report_rows)?;

    let fractions = &cfg.eval.fractions;
    let summaries: Vec<TierSummary> = tier_evals
        .iter()
        .map(|te| TierSummary {
            label: te.tier.as_str().to_string(),
            local: fractions
                .iter()
                .map(|&f| local_ordered_metrics(&te.cms, f))
                .collect(),
            global: global_metrics(&te.cms),
        })
        .collect();
    let mean = TierSummary {
        label: "mean".to_string(),
        local: (0..fractions.len())
            .map(|i| {
                let col: Vec<MetricSet> = summaries.iter().map(|s| s.local[i]).collect();
                cross_tier_mean(&col)
            })
            .collect(),
        global: cross_tier_mean(&summaries.iter().map(|s| s.global).collect::<Vec<_>>()),
    };
    let table = summary_table(fractions, &summaries, &mean);
    let header = format!(
        "checkpoint {} (variant {}, width_scale {}, seed {})\n{} tiles evaluated\n\n",
        cfg.training.checkpoint.display(),
        meta.variant,
        meta.width_scale,
        meta.seed,
        report_rows.len()
    );
    at_path(
        fs::write(out.join("summary.txt"), format!("{header}{table}")),
        "writing summary",
        &out.join("summary.txt"),
    )?;
    print!("{header}{table}");
    Ok(())
}

/// Prints the trainable-parameter total for the configured variant, with the
/// published full-width total alongside when one exists.
pub fn cmd_count_params(cfg: &RunConfig) -> Result<()> {
    let model_cfg = cfg.model_config()?;
    let n = count_params(&model_cfg)?;
    println!("{n}");
    println!(
        "{} {}",
        model_cfg.variant.as_str(),
        comparison_line(model_cfg.variant, model_cfg.width_scale, n)
    );
    Ok(())
}

fn comparison_line(variant: Variant, width_scale: f64, n: u64) -> String {
    match (width_scale == 1.0, reference_total(variant)) {
        (true, Some(r)) => {
            let delta = n as i64 - r as i64;
            format!(
                "reference {} delta {}{}",
                group_digits(r),
                if delta >= 0 { "+" } else { "-" },
                group_digits(delta.unsigned_abs())
            )
        }
        (false, _) => format!("no full-width reference applies at width_scale {width_scale}"),
        (true, None) => "no published reference".to_string(),
    }
}

/// Audits analytic gradients against central finite differences for every
/// block at reduced width. Any block beyond tolerance is an invariant
/// failure.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<()> {
    const TOL: f64 = 1e-4;
    let checks = full_suite(cfg.model.seed)?;
    let mut failed = Vec::new();
    for c in &checks {
        println!(
            "{:<16} max rel err {:.3e}  ({} coords checked, {} skipped)",
            c.name, c.report.max_rel_err, c.report.checked, c.report.skipped
        );
        if !c.passes(TOL) {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        println!("gradient audit passed (tolerance {TOL:.0e})");
        Ok(())
    } else {
        Err(CliError::invariant(format!(
            "gradient audit failed for {failed:?} at tolerance {TOL:.0e}"
        )))
    }
}

/// Parameter table over all seven variants (and optionally a toy train+eval
/// per variant), with the published ordering asserted at full width.
pub fn cmd_ablate(cfg: &RunConfig, params_only: bool) -> Result<()> {
    let table_order: [Variant; 7] = [
        Variant::NoInceptionV2,
        Variant::NoRichScaleBlock,
        Variant::Proposed,
        Variant::NoMultiChannel,
        Variant::NoWeightedScaleBlock,
        Variant::NoRichScaleBlockV2,
        Variant::NoWeightedClass,
    ];
    let width_scale = cfg.model.width_scale;
    let base = cfg.model_config()?;

    let mut counts = BTreeMap::new();
    println!(
        "{:<24} {:>12}  {}",
        "variant", "params", "reference comparison"
    );
    for variant in table_order {
        let model_cfg = ModelConfig {
            variant,
            ..base.clone()
        };
        let n = count_params(&model_cfg)?;
        counts.insert(variant.as_str(), n);
        println!(
            "{:<24} {:>12}  {}",
            variant.as_str(),
            group_digits(n),
            comparison_line(variant, width_scale, n)
        );
        if !params_only {
            let f1 = toy_overfit_f1(&model_cfg, cfg)?;
            println!("{:<24} {:>12}  toy training-set F1 {:.4}", "", "", f1);
        }
    }

    if width_scale == 1.0 {
        let chain = [
            Variant::NoInceptionV2,
            Variant::NoRichScaleBlock,
            Variant::Proposed,
            Variant::NoMultiChannel,
            Variant::NoWeightedScaleBlock,
            Variant::NoRichScaleBlockV2,
        ];
        for pair in chain.windows(2) {
            let (a, b) = (pair[0].as_str(), pair[1].as_str());
            if counts[a] <= counts[b] {
                return Err(CliError::invariant(format!(
                    "parameter ordering broken: {a} ({}) must exceed {b} ({})",
                    group_digits(counts[a]),
                    group_digits(counts[b])
                )));
            }
        }
        println!("ordering: strict descending across the published six — ok");
    } else {
        println!("ordering assertion skipped (width_scale {width_scale} is not full width)");
    }
    Ok(())
}

/// Small synthetic overfit run used by the full ablation sweep: fixed tiny
/// dataset, the configured epochs, training-set score.
fn toy_overfit_f1(model_cfg: &ModelConfig, cfg: &RunConfig) -> Result<f64> {
    let seed = cfg.model.seed;
    let mut tiles: Vec<TilePair> = Vec::new();
    for (name, t1, t2, gt) in synth_dataset(2, 128, seed) {
        tiles.extend(tile_source_pair(&name, &t1, &t2, &gt, Tier::High, 64)?);
    }
    let model: Model<f32> = Model::new(model_cfg.clone(), seed)?;
    let mut trainer = Trainer::new(model, cfg.train_config()?);
    for epoch in 1..=cfg.training.epochs {
        trainer.run_epoch(&tiles, epoch);
    }
    let cms = wricnet_core::eval::evaluate_tiles(&trainer.model, &tiles)?;
    Ok(global_metrics(&cms).f1)
}
