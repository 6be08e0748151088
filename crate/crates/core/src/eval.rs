//! Depth-raster metrics against ground truth.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{layout, read_depth_map};
use crate::raster::Raster;

/// Relative-error thresholds reported for completeness and accuracy.
pub const THRESHOLDS: [f64; 2] = [0.01, 0.02];

#[inline]
fn valid(d: f32) -> bool {
    d.is_finite() && d > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DepthMetrics {
    /// Pixels with valid ground truth.
    pub gt_pixels: usize,
    /// Pixels with a valid estimate.
    pub estimated_pixels: usize,
    /// RMSE in world units over pixels valid in both rasters.
    pub rmse: f64,
    /// Fraction of GT-valid pixels within each threshold of [`THRESHOLDS`].
    pub completeness: [f64; 2],
    /// Fraction of estimated pixels within each threshold.
    pub accuracy: [f64; 2],
}

impl DepthMetrics {
    /// Metrics over the pixels selected by `include`.
    pub fn compute(estimate: &Raster<f32>, gt: &Raster<f32>, include: impl Fn(usize) -> bool) -> Self {
        let (mut n_gt, mut n_est, mut n_both) = (0usize, 0usize, 0usize);
        let mut sq = 0.0f64;
        let mut within = [0usize; 2];
        for (i, (&e, &g)) in estimate.data().iter().zip(gt.data()).enumerate() {
            if !include(i) {
                continue;
            }
            n_gt += usize::from(valid(g));
            n_est += usize::from(valid(e));
            if valid(e) && valid(g) {
                n_both += 1;
                let (e, g) = (e as f64, g as f64);
                sq += (e - g).powi(2);
                let rel = (e - g).abs() / g;
                for (w, t) in within.iter_mut().zip(THRESHOLDS) {
                    *w += usize::from(rel <= t);
                }
            }
        }
        let frac = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        Self {
            gt_pixels: n_gt,
            estimated_pixels: n_est,
            rmse: if n_both == 0 { 0.0 } else { (sq / n_both as f64).sqrt() },
            completeness: within.map(|k| frac(k, n_gt)),
            accuracy: within.map(|k| frac(k, n_est)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewEval {
    pub name: String,
    pub overall: DepthMetrics,
    /// Per instance label, ascending; empty without segmentation.
    pub instances: Vec<(u16, DepthMetrics)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub views: Vec<ViewEval>,
    pub runtime_seconds: Option<f64>,
    pub peak_memory_bytes: Option<u64>,
}

impl EvalReport {
    /// Pools every view's pixels; RMSE is weighted by jointly valid pixels.
    pub fn overall(&self, estimates: &[Raster<f32>], gts: &[Raster<f32>]) -> DepthMetrics {
        let est = concat(estimates);
        let gt = concat(gts);
        DepthMetrics::compute(&est, &gt, |_| true)
    }

    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let mut put = |prefix: &str, m: &DepthMetrics| {
            let _ = writeln!(s, "{prefix}.rmse = {:.9}", m.rmse);
            for (k, t) in THRESHOLDS.iter().enumerate() {
                let pct = (t * 100.0).round() as u32;
                let _ = writeln!(s, "{prefix}.completeness@{pct}% = {:.6}", m.completeness[k]);
                let _ = writeln!(s, "{prefix}.accuracy@{pct}% = {:.6}", m.accuracy[k]);
            }
            let _ = writeln!(s, "{prefix}.gt_pixels = {}", m.gt_pixels);
            let _ = writeln!(s, "{prefix}.estimated_pixels = {}", m.estimated_pixels);
        };
        for v in &self.views {
            put(&format!("view.{}", v.name), &v.overall);
            for (l, m) in &v.instances {
                put(&format!("view.{}.instance.{l}", v.name), m);
            }
        }
        if let Some(t) = self.runtime_seconds {
            let _ = writeln!(s, "runtime_seconds = {t:.3}");
        }
        if let Some(b) = self.peak_memory_bytes {
            let _ = writeln!(s, "peak_memory_bytes = {b}");
        }
        s
    }

    /// Tab-separated table, one row per view and per instance.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("view\tinstance\trmse\tcompleteness@1%\tcompleteness@2%\taccuracy@1%\taccuracy@2%\tgt_pixels\testimated_pixels\n");
        let mut row = |view: &str, inst: &str, m: &DepthMetrics| {
            let _ = writeln!(
                s,
                "{view}\t{inst}\t{:.9}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
                m.rmse, m.completeness[0], m.completeness[1], m.accuracy[0], m.accuracy[1], m.gt_pixels, m.estimated_pixels
            );
        };
        for v in &self.views {
            row(&v.name, "*", &v.overall);
            for (l, m) in &v.instances {
                row(&v.name, &l.to_string(), m);
            }
        }
        s
    }
}

fn concat(rs: &[Raster<f32>]) -> Raster<f32> {
    let data: Vec<f32> = rs.iter().flat_map(|r| r.data().iter().copied()).collect();
    let n = data.len();
    Raster::from_vec(n, 1, data)
}

/// Evaluates named estimates against named ground truth; names and sizes must match.
pub fn evaluate(
    estimates: &[(String, Raster<f32>)],
    gts: &[(String, Raster<f32>)],
    labels: Option<&[Raster<u16>]>,
) -> Result<EvalReport> {
    let names = |v: &[(String, Raster<f32>)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    if names(estimates) != names(gts) {
        return Err(Error::Validation(format!(
            "result views {:?} do not match ground-truth views {:?}",
            names(estimates),
            names(gts)
        )));
    }
    let mut views = Vec::with_capacity(gts.len());
    for (i, ((name, est), (_, gt))) in estimates.iter().zip(gts).enumerate() {
        if !est.same_dims(gt) {
            return Err(Error::Validation(format!(
                "view {name}: result is {}x{} but ground truth is {}x{}",
                est.width(),
                est.height(),
                gt.width(),
                gt.height()
            )));
        }
        let overall = DepthMetrics::compute(est, gt, |_| true);
        let mut instances = Vec::new();
        if let Some(l) = labels.and_then(|l| l.get(i)).filter(|l| l.same_dims(gt)) {
            let mut ids: Vec<u16> = l.data().iter().copied().filter(|&v| v != 0).collect();
            ids.sort_unstable();
            ids.dedup();
            for id in ids {
                instances.push((id, DepthMetrics::compute(est, gt, |k| l.data()[k] == id)));
            }
        }
        views.push(ViewEval {
            name: name.clone(),
            overall,
            instances,
        });
    }
    Ok(EvalReport {
        views,
        ..EvalReport::default()
    })
}

/// Names of the `depth/*.pfm` maps under `root`, sorted.
pub fn depth_names(root: &Path) -> Result<Vec<String>> {
    let dir = root.join("depth");
    let mut names: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension().is_some_and(|x| x == "pfm")).then(|| p.file_stem()?.to_str().map(String::from)).flatten()
        })
        .collect();
    names.sort();
    Ok(names)
}

/// Evaluates `result/depth/*.pfm` against `gt/depth/*.pfm`.
pub fn evaluate_dirs(result: &Path, gt: &Path, labels: Option<&[(String, Raster<u16>)]>) -> Result<EvalReport> {
    let load = |root: &Path| -> Result<Vec<(String, Raster<f32>)>> {
        depth_names(root)?
            .into_iter()
            .map(|n| {
                let d = read_depth_map(&layout::depth_path(root, &n))?;
                Ok((n, d))
            })
            .collect()
    };
    let est = load(result)?;
    let gts = load(gt)?;
    let labels: Option<Vec<Raster<u16>>> = labels.map(|ls| {
        gts.iter()
            .map(|(n, g)| {
                ls.iter()
                    .find(|(ln, _)| ln == n)
                    .map(|(_, l)| l.clone())
                    .unwrap_or_else(|| Raster::filled(g.width(), g.height(), 0))
            })
            .collect()
    });
    evaluate(&est, &gts, labels.as_deref())
}

/// Peak resident set size of this process, where the platform reports it.
pub fn peak_memory_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
