//! Weight checkpoints: a flat little-endian binary of every parameter array
//! in registration order, beside a text manifest naming each tensor with its
//! shape, byte offset, and dtype. Round trips are bit-exact.
//!
//! Optimizer state is not persisted: a resumed run restarts Adam's moment
//! estimates, which is acceptable for the desk-scale runs this tool targets
//! and keeps the format a pure weight container.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use wricnet_core::params::ParamStore;
use wricnet_core::Scalar;

use crate::{at_path, CliError, Result};

pub const MAGIC: &str = "wricnet-checkpoint v1";

/// Run facts recorded beside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub variant: String,
    pub width_scale: f64,
}

fn manifest_path(bin: &Path) -> PathBuf {
    let mut name = bin.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    bin.with_file_name(name)
}

pub fn save<T: Scalar>(path: &Path, store: &ParamStore<T>, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            at_path(fs::create_dir_all(dir), "creating directory", dir)?;
        }
    }
    let mut manifest = String::new();
    let mut blob: Vec<u8> = Vec::new();
    let _ = writeln!(manifest, "{MAGIC}");
    let _ = writeln!(manifest, "seed {}", meta.seed);
    let _ = writeln!(manifest, "variant {}", meta.variant);
    let _ = writeln!(manifest, "width_scale {}", meta.width_scale);
    let _ = writeln!(manifest, "tensors {}", store.len());
    for (i, spec) in store.specs().iter().enumerate() {
        let shape: Vec<String> = spec.shape.iter().map(usize::to_string).collect();
        let _ = writeln!(
            manifest,
            "{} {} {} {}",
            spec.name,
            shape.join(","),
            blob.len(),
            T::DTYPE
        );
        for &v in store.tensor(i).data() {
            blob.extend_from_slice(&v.to_le_bytes()[..T::BYTE_WIDTH]);
        }
    }
    at_path(fs::write(path, &blob), "writing checkpoint", path)?;
    let mpath = manifest_path(path);
    at_path(
        fs::write(&mpath, manifest),
        "writing checkpoint manifest",
        &mpath,
    )
}

/// Loads weights into `store`, insisting the manifest matches its parameter
/// registry name-for-name and shape-for-shape.
pub fn load<T: Scalar>(path: &Path, store: &mut ParamStore<T>) -> Result<CheckpointMeta> {
    let mpath = manifest_path(path);
    let manifest = at_path(
        fs::read_to_string(&mpath),
        "reading checkpoint manifest",
        &mpath,
    )?;
    let blob = at_path(fs::read(path), "reading checkpoint", path)?;
    let mut lines = manifest.lines();
    let bad = |what: &str| {
        CliError::validation(format!("checkpoint manifest {}: {what}", mpath.display()))
    };

    if lines.next() != Some(MAGIC) {
        return Err(bad(&format!("missing \"{MAGIC}\" header")));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| bad(&format!("missing {key} line")))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(&format!("expected \"{key} ...\", got \"{line}\"")))
    };
    let seed: u64 = field("seed")?
        .parse()
        .map_err(|e| bad(&format!("bad seed: {e}")))?;
    let variant = field("variant")?;
    let width_scale: f64 = field("width_scale")?
        .parse()
        .map_err(|e| bad(&format!("bad width_scale: {e}")))?;
    let count: usize = field("tensors")?
        .parse()
        .map_err(|e| bad(&format!("bad tensor count: {e}")))?;
    if count != store.len() {
        return Err(bad(&format!(
            "holds {count} tensors but the configured model has {}",
            store.len()
        )));
    }

    for i in 0..count {
        let line = lines.next().ok_or_else(|| bad("truncated tensor table"))?;
        let mut parts = line.split(' ');
        let (name, shape_s, offset_s, dtype) = match (
            parts.next(),
            parts.next(),
            parts.next(),
            parts.next(),
            parts.next(),
        ) {
            (Some(a), Some(b), Some(c), Some(d), None) => (a, b, c, d),
            _ => return Err(bad(&format!("malformed tensor line \"{line}\""))),
        };
        let spec = &store.specs()[i];
        if name != spec.name {
            return Err(bad(&format!(
                "tensor {i} is \"{name}\" but the model expects \"{}\"",
                spec.name
            )));
        }
        let shape: Vec<usize> = shape_s
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(&format!("bad shape for {name}: {e}")))?;
        if shape != spec.shape {
            return Err(bad(&format!(
                "tensor {name} has shape {shape:?} but the model expects {:?}",
                spec.shape
            )));
        }
        if dtype != T::DTYPE {
            return Err(bad(&format!(
                "tensor {name} is {dtype} but this run uses {}",
                T::DTYPE
            )));
        }
        let offset: usize = offset_s
            .parse()
            .map_err(|e| bad(&format!("bad offset for {name}: {e}")))?;
        let numel = spec.numel();
        let end = offset + numel * T::BYTE_WIDTH;
        if end > blob.len() {
            return Err(bad(&format!(
                "tensor {name} spans bytes {offset}..{end} but the binary holds {}",
                blob.len()
            )));
        }
        let data: Vec<T> = blob[offset..end]
            .chunks_exact(T::BYTE_WIDTH)
            .map(T::from_le_bytes)
            .collect();
        store.load_data(i, &data);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing content after tensor table"));
    }
    Ok(CheckpointMeta {
        seed,
        variant,
        width_scale,
    })
}
