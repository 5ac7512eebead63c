//! Image I/O: 8-bit grayscale PNG and the exact-precision PTYF dump.
//!
//! PTYF layout, little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PTYF"
//! 4       4     u32 height
//! 8       4     u32 width
//! 12      4     u32 reserved (zero)
//! 16      8*h*w f64 row-major values
//! ```
//!
//! PNG quantizes to 8 bits and is for inspection; PTYF is the byte-exact
//! interchange path used by measurement stores and checkpoints.

use crate::error::{Error, Result};
use crate::field::RealImage;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PTYF";

/// Writes `bytes` to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp~");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Serializes a flat f64 buffer with dimensions into PTYF bytes.
pub fn ptyf_bytes(height: usize, width: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), height * width, "value count must match dims");
    let mut out = Vec::with_capacity(16 + values.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_ptyf(path: &Path, image: &RealImage) -> Result<()> {
    write_atomic(path, &ptyf_bytes(image.height(), image.width(), image.values()))
}

/// Writes a raw f64 buffer (tensor checkpoints flatten to one row).
pub fn write_ptyf_raw(path: &Path, height: usize, width: usize, values: &[f64]) -> Result<()> {
    write_atomic(path, &ptyf_bytes(height, width, values))
}

pub fn read_ptyf_raw(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let name = path.display().to_string();
    let mut f = std::fs::File::open(path)?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header)
        .map_err(|_| Error::format(&name, "truncated header"))?;
    if &header[0..4] != MAGIC {
        return Err(Error::format(&name, "bad magic, expected PTYF"));
    }
    let height = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let reserved = u32::from_le_bytes(header[12..16].try_into().unwrap());
    if reserved != 0 {
        return Err(Error::format(&name, "nonzero reserved header field"));
    }
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    if raw.len() != height * width * 8 {
        return Err(Error::format(
            &name,
            format!("expected {} value bytes, got {}", height * width * 8, raw.len()),
        ));
    }
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((height, width, values))
}

pub fn read_ptyf(path: &Path) -> Result<RealImage> {
    let (h, w, values) = read_ptyf_raw(path)?;
    RealImage::new(h, w, values)
}

/// Writes an 8-bit grayscale PNG; values are clamped to `[0,1]` and scaled.
pub fn write_png(path: &Path, image: &RealImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let buf = image::GrayImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let v = image.at(y as usize, x as usize).clamp(0.0, 1.0);
        image::Luma([(v * 255.0).round() as u8])
    });
    buf.save(path)?;
    Ok(())
}

/// Reads a grayscale PNG and normalizes to `[0, 1]` by dividing by 255.
pub fn read_png(path: &Path) -> Result<RealImage> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    RealImage::new(h, w, values)
}
