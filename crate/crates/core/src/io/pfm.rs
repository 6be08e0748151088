//! Portable float map (PFM) reading and writing.
//!
//! Files are always written little-endian (negative scale) with rows stored
//! bottom-to-top as the format requires. Readers accept either endianness.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Stored value for pixels without a valid depth.
pub const INVALID_DEPTH: f32 = -1.0;

pub fn write_pfm_gray(path: &Path, raster: &Raster<f32>) -> Result<()> {
    write_pfm(path, raster.width(), raster.height(), 1, raster.data())
}

pub fn write_pfm_rgb(path: &Path, raster: &Raster<[f32; 3]>) -> Result<()> {
    let flat: Vec<f32> = raster.data().iter().flatten().copied().collect();
    write_pfm(path, raster.width(), raster.height(), 3, &flat)
}

fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f32]) -> Result<()> {
    let tag = if channels == 3 { "PF" } else { "Pf" };
    let mut buf = Vec::with_capacity(32 + data.len() * 4);
    write!(buf, "{tag}\n{width} {height}\n-1.0\n").expect("write to vec");
    let row = width * channels;
    for y in (0..height).rev() {
        for v in &data[y * row..(y + 1) * row] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct PfmData {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f32>,
}

fn read_pfm(path: &Path) -> Result<PfmData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Option<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let bad = |m: &str| Error::format(path, m.to_string());
    let channels = match token(&bytes).as_deref() {
        Some("Pf") => 1,
        Some("PF") => 3,
        _ => return Err(bad("missing PF/Pf magic")),
    };
    let width: usize = token(&bytes)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad width"))?;
    let height: usize = token(&bytes)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad height"))?;
    let scale: f64 = token(&bytes)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad scale"))?;
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let count = width * height * channels;
    if bytes.len() < pos + count * 4 {
        return Err(bad("truncated payload"));
    }
    let little = scale < 0.0;
    let payload = &bytes[pos..pos + count * 4];
    let row = width * channels;
    let mut values = vec![0.0f32; count];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let file_row = i / row;
        let col = i % row;
        values[(height - 1 - file_row) * row + col] = v;
    }
    Ok(PfmData {
        width,
        height,
        channels,
        values,
    })
}

pub fn read_pfm_gray(path: &Path) -> Result<Raster<f32>> {
    let d = read_pfm(path)?;
    if d.channels != 1 {
        return Err(Error::format(path, "expected a single-channel PFM"));
    }
    Ok(Raster::from_vec(d.width, d.height, d.values))
}

pub fn read_pfm_rgb(path: &Path) -> Result<Raster<[f32; 3]>> {
    let d = read_pfm(path)?;
    if d.channels != 3 {
        return Err(Error::format(path, "expected a three-channel PFM"));
    }
    let data = d.values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(Raster::from_vec(d.width, d.height, data))
}

/// Writes a depth map; every value must be finite (use [`INVALID_DEPTH`]).
pub fn write_depth_map(path: &Path, depth: &Raster<f32>) -> Result<()> {
    if let Some(i) = depth.data().iter().position(|v| !v.is_finite()) {
        let p = depth.pixel_of(i);
        return Err(Error::Validation(format!(
            "non-finite depth at ({}, {}); invalid pixels must hold {INVALID_DEPTH}",
            p.x, p.y
        )));
    }
    write_pfm_gray(path, depth)
}

pub fn read_depth_map(path: &Path) -> Result<Raster<f32>> {
    read_pfm_gray(path)
}
