//! Scene directory layout.
//!
//! ```text
//! cameras.txt          name width height K(9, row-major) R(9, row-major) T(3)
//! images/<name>.png    intensity image (any PNG, converted to gray)
//! seg/<name>.png       instance labels, 16-bit single channel, 0 = unlabeled
//! mono/<name>.pfm      monocular relative depth
//! sparse/points.txt    x y z nObs [viewId u v]...
//! depth_range.txt      optional: dmin dmax
//! ```
//!
//! View ids in `points.txt` are zero-based line indices into `cameras.txt`.
//! Without `depth_range.txt` the range is derived from the sparse depths.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point2, Point3, Vector3};

use super::{pfm, png};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::scene::{DepthRange, Observation, SceneBundle, SparsePoint, SparsePointSet, ViewBundle};

pub const CAMERAS_FILE: &str = "cameras.txt";
pub const POINTS_FILE: &str = "sparse/points.txt";
pub const RANGE_FILE: &str = "depth_range.txt";

/// Margins applied to sparse depths when no range file is present.
const DERIVED_RANGE_NEAR: f64 = 0.8;
const DERIVED_RANGE_FAR: f64 = 1.25;

pub fn image_path(root: &Path, name: &str) -> PathBuf {
    root.join("images").join(format!("{name}.png"))
}

pub fn seg_path(root: &Path, name: &str) -> PathBuf {
    root.join("seg").join(format!("{name}.png"))
}

pub fn mono_path(root: &Path, name: &str) -> PathBuf {
    root.join("mono").join(format!("{name}.pfm"))
}

pub fn depth_path(root: &Path, name: &str) -> PathBuf {
    root.join("depth").join(format!("{name}.pfm"))
}

pub fn normal_path(root: &Path, name: &str) -> PathBuf {
    root.join("normal").join(format!("{name}.pfm"))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses `cameras.txt` into `(name, camera)` pairs.
pub fn parse_cameras(path: &Path, text: &str) -> Result<Vec<(String, CameraModel)>> {
    let mut out = Vec::new();
    for (line_no, line) in content_lines(text) {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 24 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 24 fields, found {}", tokens.len()),
            ));
        }
        let name = tokens[0].to_string();
        let dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, line_no, format!("bad image dimension {s:?}")))
        };
        let width = dim(tokens[1])?;
        let height = dim(tokens[2])?;
        let mut nums = [0.0f64; 21];
        for (slot, tok) in nums.iter_mut().zip(&tokens[3..]) {
            *slot = tok
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad number {tok:?}")))?;
        }
        let k = Matrix3::from_row_slice(&nums[0..9]);
        let r = Matrix3::from_row_slice(&nums[9..18]);
        let t = Vector3::new(nums[18], nums[19], nums[20]);
        let cam = CameraModel::new(k, r, t, width, height).map_err(|e| {
            parse_err(path, line_no, format!("camera {name}: {e}"))
        })?;
        out.push((name, cam));
    }
    Ok(out)
}

pub fn format_cameras(views: &[(String, CameraModel)]) -> String {
    let mut s = String::from("# name width height K(row-major) R(row-major) T\n");
    for (name, c) in views {
        write!(s, "{name} {} {}", c.width, c.height).unwrap();
        for m in [&c.k, &c.r] {
            for row in 0..3 {
                for col in 0..3 {
                    write!(s, " {:e}", m[(row, col)]).unwrap();
                }
            }
        }
        for v in c.t.iter() {
            write!(s, " {v:e}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn parse_points(path: &Path, text: &str) -> Result<SparsePointSet> {
    let mut points = Vec::new();
    for (line_no, line) in content_lines(text) {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| -> Result<f64> {
            tokens
                .get(i)
                .ok_or_else(|| parse_err(path, line_no, "line ends early"))?
                .parse::<f64>()
                .map_err(|_| parse_err(path, line_no, format!("bad number {:?}", tokens[i])))
        };
        let position = Point3::new(num(0)?, num(1)?, num(2)?);
        let n_obs: usize = tokens
            .get(3)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(path, line_no, "bad observation count"))?;
        if tokens.len() != 4 + 3 * n_obs {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {} fields for {n_obs} observations", 4 + 3 * n_obs),
            ));
        }
        let mut observations = Vec::with_capacity(n_obs);
        for k in 0..n_obs {
            let base = 4 + 3 * k;
            let view: usize = tokens[base]
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad view id {:?}", tokens[base])))?;
            observations.push(Observation {
                view,
                pixel: Point2::new(num(base + 1)?, num(base + 2)?),
            });
        }
        points.push(SparsePoint {
            position,
            observations,
        });
    }
    Ok(SparsePointSet { points })
}

pub fn format_points(points: &SparsePointSet) -> String {
    let mut s = String::from("# x y z nObs [viewId u v]...\n");
    for p in &points.points {
        write!(
            s,
            "{:e} {:e} {:e} {}",
            p.position.x,
            p.position.y,
            p.position.z,
            p.observations.len()
        )
        .unwrap();
        for o in &p.observations {
            write!(s, " {} {:e} {:e}", o.view, o.pixel.x, o.pixel.y).unwrap();
        }
        s.push('\n');
    }
    s
}

fn derive_range(points: &SparsePointSet, cams: &[(String, CameraModel)]) -> Option<DepthRange> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in &points.points {
        for o in &p.observations {
            if let Some((_, cam)) = cams.get(o.view) {
                let d = cam.project(&p.position).1;
                if d > 0.0 {
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
            }
        }
    }
    (lo.is_finite() && hi.is_finite())
        .then(|| DepthRange::new(lo * DERIVED_RANGE_NEAR, hi * DERIVED_RANGE_FAR).ok())
        .flatten()
}

/// Loads and validates a scene directory.
pub fn load_scene(root: &Path) -> Result<SceneBundle> {
    let cam_path = root.join(CAMERAS_FILE);
    let cams = parse_cameras(&cam_path, &read_text(&cam_path)?)?;
    let mut views = Vec::with_capacity(cams.len());
    for (name, camera) in &cams {
        let image = png::read_gray(&image_path(root, name))?;
        let segmentation = png::read_labels(&seg_path(root, name))?;
        let mono = pfm::read_pfm_gray(&mono_path(root, name))?;
        views.push(ViewBundle {
            name: name.clone(),
            image,
            segmentation,
            mono_depth: mono.map(|&v| v as f64),
            camera: camera.clone(),
        });
    }
    let pts_path = root.join(POINTS_FILE);
    let sparse = parse_points(&pts_path, &read_text(&pts_path)?)?;
    let range_path = root.join(RANGE_FILE);
    let depth_range = if range_path.exists() {
        let text = read_text(&range_path)?;
        let vals: Vec<f64> = text
            .split_whitespace()
            .filter_map(|t| t.parse().ok())
            .collect();
        if vals.len() != 2 {
            return Err(parse_err(&range_path, 1, "expected `dmin dmax`"));
        }
        DepthRange::new(vals[0], vals[1])?
    } else {
        derive_range(&sparse, &cams).ok_or_else(|| {
            Error::Validation(format!(
                "no {RANGE_FILE} and no sparse observations to derive a depth range"
            ))
        })?
    };
    let scene = SceneBundle {
        views,
        sparse,
        depth_range,
    };
    scene.validate()?;
    Ok(scene)
}

/// Writes a scene in the layout read by [`load_scene`].
pub fn write_scene(root: &Path, scene: &SceneBundle) -> Result<()> {
    fs::create_dir_all(root.join("sparse")).map_err(|e| Error::io(root, e))?;
    let cams: Vec<(String, CameraModel)> = scene
        .views
        .iter()
        .map(|v| (v.name.clone(), v.camera.clone()))
        .collect();
    let cam_path = root.join(CAMERAS_FILE);
    fs::write(&cam_path, format_cameras(&cams)).map_err(|e| Error::io(&cam_path, e))?;
    for v in &scene.views {
        png::write_gray(&image_path(root, &v.name), &v.image)?;
        png::write_labels(&seg_path(root, &v.name), &v.segmentation)?;
        pfm::write_pfm_gray(&mono_path(root, &v.name), &v.mono_depth.map(|&d| d as f32))?;
    }
    let pts_path = root.join(POINTS_FILE);
    fs::write(&pts_path, format_points(&scene.sparse)).map_err(|e| Error::io(&pts_path, e))?;
    let range_path = root.join(RANGE_FILE);
    fs::write(
        &range_path,
        format!("{:e} {:e}\n", scene.depth_range.min, scene.depth_range.max),
    )
    .map_err(|e| Error::io(&range_path, e))
}
