//! On-disk dataset handling: scanning source pair directories, writing
//! prepared tile sets with a provenance manifest, and loading tiles back for
//! training and evaluation.
//!
//! Source layout: `<source>/{A,B,label}/<name>.png` — A/B are the RGB image
//! pair, label is single-channel {0,255}. Prepared layout:
//! `<prepared>/<tier>/{A,B,label}/<source>_<row>_<col>.png` plus
//! `manifest.toml` listing every tile.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use wricnet_core::data::{ImageBuf, MaskBuf, Tier, TilePair};

use crate::pngio;
use crate::{at_path, CliError, Result};

pub const MANIFEST_NAME: &str = "manifest.toml";

/// Provenance for one prepared tile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    pub tier: String,
    pub source: String,
    pub row: usize,
    pub col: usize,
}

/// Written beside the tiles; a rerun with the same inputs and seed must
/// reproduce it byte-for-byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareManifest {
    pub seed: u64,
    pub window: usize,
    pub origin: String,
    pub normalization: String,
    pub tiers: Vec<String>,
    pub tiles: Vec<TileEntry>,
}

/// Lists source pair names: each of A, B, label must exist, and every A
/// image needs a B and label counterpart.
pub fn scan_sources(root: &Path) -> Result<Vec<String>> {
    for sub in ["A", "B", "label"] {
        let dir = root.join(sub);
        if !dir.is_dir() {
            return Err(CliError::validation(format!(
                "{sub} directory not found: {}",
                dir.display()
            )));
        }
    }
    let mut names = BTreeSet::new();
    let a_dir = root.join("A");
    for entry in at_path(fs::read_dir(&a_dir), "listing", &a_dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                names.insert(stem.to_string());
            }
        }
    }
    if names.is_empty() {
        return Err(CliError::validation(format!(
            "no .png files under {}",
            a_dir.display()
        )));
    }
    for name in &names {
        for sub in ["B", "label"] {
            let p = root.join(sub).join(format!("{name}.png"));
            if !p.is_file() {
                return Err(CliError::validation(format!(
                    "source {name} is missing its {sub} file: {}",
                    p.display()
                )));
            }
        }
    }
    Ok(names.into_iter().collect())
}

/// Reads one source triple and checks the three agree spatially.
pub fn load_source(root: &Path, name: &str) -> Result<(ImageBuf, ImageBuf, MaskBuf)> {
    let t1 = pngio::read_rgb(&root.join("A").join(format!("{name}.png")))?;
    let t2 = pngio::read_rgb(&root.join("B").join(format!("{name}.png")))?;
    let gt = pngio::read_mask(&root.join("label").join(format!("{name}.png")))?;
    if (t1.height, t1.width) != (t2.height, t2.width)
        || (t1.height, t1.width) != (gt.height, gt.width)
    {
        return Err(CliError::validation(format!(
            "source {name}: A is {}x{}, B is {}x{}, label is {}x{}; all three must match",
            t1.height, t1.width, t2.height, t2.width, gt.height, gt.width
        )));
    }
    Ok((t1, t2, gt))
}

fn tile_dir(prepared: &Path, tier: Tier, sub: &str) -> PathBuf {
    prepared.join(tier.as_str()).join(sub)
}

pub fn write_tile(prepared: &Path, tile: &TilePair) -> Result<()> {
    let name = format!("{}.png", tile.tile_name());
    for sub in ["A", "B", "label"] {
        let dir = tile_dir(prepared, tile.tier, sub);
        at_path(fs::create_dir_all(&dir), "creating directory", &dir)?;
    }
    pngio::write_rgb(&tile_dir(prepared, tile.tier, "A").join(&name), &tile.t1)?;
    pngio::write_rgb(&tile_dir(prepared, tile.tier, "B").join(&name), &tile.t2)?;
    pngio::write_mask(
        &tile_dir(prepared, tile.tier, "label").join(&name),
        &tile.gt,
    )
}

pub fn write_manifest(prepared: &Path, manifest: &PrepareManifest) -> Result<()> {
    at_path(fs::create_dir_all(prepared), "creating directory", prepared)?;
    let text = toml::to_string_pretty(manifest)?;
    let path = prepared.join(MANIFEST_NAME);
    at_path(fs::write(&path, text), "writing manifest", &path)
}

pub fn read_manifest(prepared: &Path) -> Result<PrepareManifest> {
    let path = prepared.join(MANIFEST_NAME);
    let text = at_path(fs::read_to_string(&path), "reading manifest", &path)?;
    let manifest: PrepareManifest = at_path(toml::from_str(&text), "parsing manifest", &path)?;
    Ok(manifest)
}

/// Loads prepared tiles for the given tiers, optionally restricted to the
/// named sources (empty filter = all).
pub fn load_prepared(prepared: &Path, tiers: &[Tier], sources: &[String]) -> Result<Vec<TilePair>> {
    let manifest = read_manifest(prepared)?;
    let mut tiles = Vec::new();
    for entry in &manifest.tiles {
        let tier = Tier::parse(&entry.tier)?;
        if !tiers.contains(&tier) {
            continue;
        }
        if !sources.is_empty() && !sources.contains(&entry.source) {
            continue;
        }
        let name = format!("{}_{}_{}.png", entry.source, entry.row, entry.col);
        let t1 = pngio::read_rgb(&tile_dir(prepared, tier, "A").join(&name))?;
        let t2 = pngio::read_rgb(&tile_dir(prepared, tier, "B").join(&name))?;
        let gt = pngio::read_mask(&tile_dir(prepared, tier, "label").join(&name))?;
        tiles.push(TilePair {
            t1,
            t2,
            gt,
            source: entry.source.clone(),
            row: entry.row,
            col: entry.col,
            tier,
        });
    }
    if tiles.is_empty() {
        return Err(CliError::validation(format!(
            "no tiles matched under {} (tiers {:?}, sources {:?})",
            prepared.display(),
            tiers.iter().map(|t| t.as_str()).collect::<Vec<_>>(),
            sources
        )));
    }
    Ok(tiles)
}
