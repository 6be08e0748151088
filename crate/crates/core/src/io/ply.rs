use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: [f32; 3],
    pub normal: [f32; 3],
    pub color: [u8; 3],
}

/// Writes a binary little-endian PLY with float position/normal and uchar colour.
pub fn write_ply(path: &Path, points: &[CloudPoint]) -> Result<()> {
    let mut buf = Vec::with_capacity(256 + points.len() * 27);
    write!(
        buf,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property float nx\nproperty float ny\nproperty float nz\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    )
    .expect("write to vec");
    for p in points {
        for v in p.position.iter().chain(p.normal.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&p.color);
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads back a file produced by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<Vec<CloudPoint>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::format(path, "missing end_header"))?;
    let header = String::from_utf8_lossy(&bytes[..end]);
    if !header.contains("format binary_little_endian 1.0") {
        return Err(Error::format(path, "only binary little-endian PLY is supported"));
    }
    let count: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| Error::format(path, "missing vertex count"))?;
    let body = &bytes[end + marker.len()..];
    if body.len() < count * 27 {
        return Err(Error::format(path, "truncated vertex data"));
    }
    let f = |c: &[u8], i: usize| f32::from_le_bytes(c[i * 4..i * 4 + 4].try_into().unwrap());
    Ok(body
        .chunks_exact(27)
        .take(count)
        .map(|c| CloudPoint {
            position: [f(c, 0), f(c, 1), f(c, 2)],
            normal: [f(c, 3), f(c, 4), f(c, 5)],
            color: [c[24], c[25], c[26]],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let pts = vec![CloudPoint {
            position: [1.0, -2.0, 3.5],
            normal: [0.0, 0.0, -1.0],
            color: [10, 20, 30],
        }];
        write_ply(&path, &pts).unwrap();
        assert_eq!(read_ply(&path).unwrap(), pts);
    }
}
