//! On-disk layout for a simulated measurement set.
//!
//! One directory per simulation:
//!
//! ```text
//! manifest.txt          key = value parameters (see below)
//! y_000.ptyf ...        per-camera magnitudes, camera order
//! mask_000.ptyf ...     per-camera retention masks (0/1 as f64)
//! ```
//!
//! The manifest records every parameter needed to regenerate the set
//! bit-identically: dims, grid, radius, spacing, ratio, mask seed, noise
//! level, noise seed and the clip flag.

use crate::error::{Error, Result};
use crate::field::io::{read_ptyf, write_ptyf};
use crate::field::{make_camera_array, NoiseSpec, RealImage};
use crate::kv::KvDoc;
use crate::measurement::MeasurementSet;
use std::path::Path;

pub const MANIFEST_NAME: &str = "manifest.txt";

fn camera_file(prefix: &str, l: usize) -> String {
    format!("{prefix}_{l:03}.ptyf")
}

/// Writes the measurement set to `dir` (created if missing).
pub fn save(m: &MeasurementSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut doc = KvDoc::new();
    doc.set("height", m.height());
    doc.set("width", m.width());
    doc.set("grid", m.array().grid_size());
    doc.set("radius", m.array().radius());
    doc.set("spacing", m.array().spacing());
    doc.set("ratio", m.masks().ratio());
    doc.set("mask_seed", m.masks().seed());
    doc.set("noise_level", m.noise().level);
    doc.set("noise_seed", m.noise().seed);
    doc.set("noise_clip", m.noise().clip);
    doc.set("cameras", m.num_cameras());
    doc.save(&dir.join(MANIFEST_NAME))?;
    for l in 0..m.num_cameras() {
        write_ptyf(&dir.join(camera_file("y", l)), m.camera_y(l))?;
        let mask = m.masks().camera(l);
        let as_f64: Vec<f64> = mask.iter().map(|&b| b as f64).collect();
        let img = RealImage::new(m.height(), m.width(), as_f64)?;
        write_ptyf(&dir.join(camera_file("mask", l)), &img)?;
    }
    Ok(())
}

/// Loads a measurement set; the masks are regenerated from the manifest
/// seed and cross-checked against the stored dumps.
pub fn load(dir: &Path) -> Result<MeasurementSet> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let doc = KvDoc::load(&manifest_path)?;
    let origin = manifest_path.display().to_string();
    let height: usize = doc.require_parsed("height")?;
    let width: usize = doc.require_parsed("width")?;
    let grid: usize = doc.require_parsed("grid")?;
    let radius: f64 = doc.require_parsed("radius")?;
    let spacing: f64 = doc.require_parsed("spacing")?;
    let ratio: f64 = doc.require_parsed("ratio")?;
    let mask_seed: u64 = doc.require_parsed("mask_seed")?;
    let noise = NoiseSpec {
        level: doc.require_parsed("noise_level")?,
        seed: doc.require_parsed("noise_seed")?,
        clip: doc.parsed_or("noise_clip", false)?,
    };
    let cameras: usize = doc.require_parsed("cameras")?;

    let array = make_camera_array(height, width, grid, radius, spacing)?;
    if array.num_cameras() != cameras {
        return Err(Error::format(&origin, "camera count does not match grid"));
    }
    let masks = crate::field::make_subsample_mask(height, width, cameras, ratio, mask_seed)?;
    let mut per_camera_y = Vec::with_capacity(cameras);
    for l in 0..cameras {
        let y = read_ptyf(&dir.join(camera_file("y", l)))?;
        let stored_mask = read_ptyf(&dir.join(camera_file("mask", l)))?;
        let regenerated: Vec<f64> = masks.camera(l).iter().map(|&b| b as f64).collect();
        if stored_mask.values() != regenerated.as_slice() {
            return Err(Error::format(
                &origin,
                format!("stored mask for camera {l} does not match its seed"),
            ));
        }
        per_camera_y.push(y);
    }
    MeasurementSet::new(per_camera_y, masks, array, noise)
}

/// Regenerates the measurement set purely from a manifest and a ground
/// truth image (used to audit that the manifest is self-contained).
pub fn resimulate_from_manifest(manifest: &Path, truth: &RealImage) -> Result<MeasurementSet> {
    let doc = KvDoc::load(manifest)?;
    let height: usize = doc.require_parsed("height")?;
    let width: usize = doc.require_parsed("width")?;
    let array = make_camera_array(
        height,
        width,
        doc.require_parsed("grid")?,
        doc.require_parsed("radius")?,
        doc.require_parsed("spacing")?,
    )?;
    let masks = crate::field::make_subsample_mask(
        height,
        width,
        array.num_cameras(),
        doc.require_parsed("ratio")?,
        doc.require_parsed("mask_seed")?,
    )?;
    let noise = NoiseSpec {
        level: doc.require_parsed("noise_level")?,
        seed: doc.require_parsed("noise_seed")?,
        clip: doc.parsed_or("noise_clip", false)?,
    };
    crate::measurement::forward_measure(truth, &array, &masks, &noise)
}
