//! Matching cost terms.

use crate::camera::CameraModel;
use crate::deformation::DeformedPatch;
use crate::raster::{Pixel, Raster};

use super::hypothesis::{plane_homography, to_f32, Hypothesis};

/// Penalty for a patch that cannot be matched.
pub const MAX_PHOTOMETRIC: f32 = 2.0;
/// Fewer surviving samples than this cannot be correlated.
pub const MIN_SAMPLES: usize = 4;
/// Weighted intensity variance below which a patch counts as flat.
pub const FLAT_VARIANCE: f32 = 1.0;

/// Reference-side samples of a patch with their bilateral weights.
#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    /// `[x, y, weight, intensity]` per sample.
    pub points: Vec<[f32; 4]>,
    /// Reference patch is too flat or too small to correlate.
    pub degenerate: bool,
    /// `[Σw, Σw·I, Σw·I²]` over all samples.
    pub totals: [f32; 3],
}

impl SampleSet {
    /// Builds weights `exp(-|q-p|/2σs² - |I_q-I_p|/2σi²)` (the ACMM form, with
    /// unsquared distances) for the deduplicated samples plus the centre.
    pub fn build(
        &mut self,
        image: &Raster<f32>,
        center: Pixel,
        samples: impl IntoIterator<Item = Pixel>,
        sigma_spatial: f32,
        sigma_intensity: f32,
        scratch: &mut Vec<usize>,
    ) {
        scratch.clear();
        scratch.push(image.index_of(center));
        scratch.extend(samples.into_iter().map(|p| image.index_of(p)));
        scratch.sort_unstable();
        scratch.dedup();
        self.points.clear();
        let ic = image[center];
        let ks = 1.0 / (2.0 * sigma_spatial * sigma_spatial).max(1e-6);
        let ki = 1.0 / (2.0 * sigma_intensity * sigma_intensity).max(1e-6);
        let w = image.width();
        let (mut sw, mut s1, mut s2) = (0.0f32, 0.0f32, 0.0f32);
        for &i in scratch.iter() {
            let (x, y) = ((i % w) as f32, (i / w) as f32);
            let v = image.data()[i];
            let d2 = (x - center.x as f32).powi(2) + (y - center.y as f32).powi(2);
            let wt = (-(d2.sqrt() * ks) - (v - ic).abs() * ki).exp();
            self.points.push([x, y, wt, v]);
            sw += wt;
            s1 += wt * v;
            s2 += wt * v * v;
        }
        self.totals = [sw, s1, s2];
        let mean = s1 / sw;
        let var = s2 / sw - mean * mean;
        self.degenerate = self.points.len() < MIN_SAMPLES || !(var >= FLAT_VARIANCE);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `1 - NCC` of the weighted samples against the source image warped by `h`.
///
/// Samples warping outside the source are dropped; fewer than
/// [`MIN_SAMPLES`] survivors or a flat side yield [`MAX_PHOTOMETRIC`].
pub fn warped_ncc_cost(set: &SampleSet, source: &Raster<f32>, h: &[f32; 9]) -> f32 {
    if set.degenerate {
        return MAX_PHOTOMETRIC;
    }
    let [sw0, si0, sii0] = set.totals;
    let (mut sw, mut si, mut sii) = (sw0, si0, sii0);
    let (mut dropped, mut sj, mut sjj, mut sij) = (0usize, 0.0f32, 0.0f32, 0.0f32);
    let (w, ht) = source.dims();
    let (xmax, ymax) = ((w - 1) as f32, (ht - 1) as f32);
    let data = source.data();
    for &[x, y, wt, i] in &set.points {
        let inv = 1.0 / (h[6] * x + h[7] * y + h[8]);
        let u = (h[0] * x + h[1] * y + h[2]) * inv;
        let v = (h[3] * x + h[4] * y + h[5]) * inv;
        let j = if u >= 0.0 && v >= 0.0 && u < xmax && v < ymax {
            // SAFETY: 0 <= u < w-1 and 0 <= v < h-1, so both truncations fit
            // in i32 and k + w + 1 < w*h.
            let (x0, y0) = unsafe { (u.to_int_unchecked::<i32>(), v.to_int_unchecked::<i32>()) };
            let (fx, fy) = (u - x0 as f32, v - y0 as f32);
            let k = y0 as usize * w + x0 as usize;
            let (a, b, c, d) = unsafe { (*data.get_unchecked(k), *data.get_unchecked(k + 1), *data.get_unchecked(k + w), *data.get_unchecked(k + w + 1)) };
            let top = a + (b - a) * fx;
            let bottom = c + (d - c) * fx;
            top + (bottom - top) * fy
        } else if let Some(j) = source.bilinear(u, v) {
            j
        } else {
            dropped += 1;
            sw -= wt;
            si -= wt * i;
            sii -= wt * i * i;
            continue;
        };
        sj += wt * j;
        sjj += wt * j * j;
        sij += wt * i * j;
    }
    if set.points.len() - dropped < MIN_SAMPLES || !(sw > 0.0) {
        return MAX_PHOTOMETRIC;
    }
    let (mi, mj) = (si / sw, sj / sw);
    let vi = sii / sw - mi * mi;
    let vj = sjj / sw - mj * mj;
    if !(vi >= FLAT_VARIANCE && vj >= FLAT_VARIANCE) {
        return MAX_PHOTOMETRIC;
    }
    let cov = sij / sw - mi * mj;
    (1.0 - cov / (vi * vj).sqrt()).clamp(0.0, MAX_PHOTOMETRIC)
}

/// Photometric cost of one hypothesis between a reference and a source view.
pub fn photometric_cost(
    ref_image: &Raster<f32>,
    ref_cam: &CameraModel,
    src_image: &Raster<f32>,
    src_cam: &CameraModel,
    hyp: &Hypothesis,
    patch: &DeformedPatch,
    sigma_intensity: f32,
) -> f32 {
    let mean_len = patch.trajectories.iter().map(|t| t.len() as f32).sum::<f32>() / patch.trajectories.len().max(1) as f32;
    let mut set = SampleSet::default();
    set.build(
        ref_image,
        patch.center,
        patch.samples.iter().map(|s| s.pixel),
        mean_len / 2.0,
        sigma_intensity,
        &mut Vec::new(),
    );
    let rel = ref_cam.relative_to(src_cam);
    match plane_homography(ref_cam, src_cam, &rel, patch.center.x as f64, patch.center.y as f64, hyp) {
        Some(h) => warped_ncc_cost(&set, src_image, &to_f32(&h)),
        None => MAX_PHOTOMETRIC,
    }
}

/// Mean over the current layer's cost and the coarser layers' costs.
pub fn multi_scale_cost(costs: &[f64]) -> f64 {
    costs.iter().sum::<f64>() / costs.len().max(1) as f64
}

/// 4-neighbour discrete Laplacian with clamped borders.
pub fn laplacian(image: &Raster<f32>) -> Raster<f32> {
    let (w, h) = image.dims();
    Raster::from_fn(w, h, |x, y| {
        let p = |dx: i64, dy: i64| *image.clamped(x as i64 + dx, y as i64 + dy);
        p(-1, 0) + p(1, 0) + p(0, -1) + p(0, 1) - 4.0 * p(0, 0)
    })
}

/// `min(|∇²I_ref(p) - ∇²I_src(p_j)|, τ)`; τ when `p_j` is off the source raster.
pub fn color_gradient_error(ref_laplacian: f32, src_laplacian: &Raster<f32>, pj: (f32, f32), tau: f32) -> f32 {
    match src_laplacian.bilinear(pj.0, pj.1) {
        Some(l) => (ref_laplacian - l).abs().min(tau),
        None => tau,
    }
}

/// Forward-backward reprojection distance through the source depth map,
/// truncated at τ. The source depth is looked up at the pixel nearest the
/// projection; off-raster or invalid source depth gives τ.
pub fn reprojection_error(
    ref_cam: &CameraModel,
    pixel: (f64, f64),
    depth: f64,
    src_cam: &CameraModel,
    src_depth: &Raster<f32>,
    tau: f64,
) -> f64 {
    let world = ref_cam.backproject(pixel.0, pixel.1, depth);
    let (pj, z) = src_cam.project(&world);
    if !(z > 0.0) || !src_cam.contains(&pj) {
        return tau;
    }
    let (x, y) = (pj.x.round() as usize, pj.y.round() as usize);
    let (x, y) = (x.min(src_depth.width() - 1), y.min(src_depth.height() - 1));
    let ds = *src_depth.at(x, y) as f64;
    if !(ds.is_finite() && ds > 0.0) {
        return tau;
    }
    let back = src_cam.backproject(pj.x, pj.y, ds);
    let (pi, zi) = ref_cam.project(&back);
    if !(zi > 0.0) {
        return tau;
    }
    ((pi.x - pixel.0).powi(2) + (pi.y - pixel.1).powi(2)).sqrt().min(tau)
}

/// 0 when `|d - d'| / d' <= μ`, else 1, where `d'` is the restored depth.
#[inline]
pub fn depth_difference_error(estimate: f64, restored: f64, mu: f64) -> u8 {
    u8::from((estimate - restored).abs() / restored > mu)
}

/// Truncation threshold of the depth term at layer `n`.
#[inline]
pub fn depth_tolerance(mu_base: f64, layer: usize) -> f64 {
    mu_base * (1u64 << layer) as f64
}

/// Cost terms on a common `[0, 1]` scale.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Terms {
    /// Multi-scale photometric cost / 2.
    pub matching: f64,
    /// Reprojection error / τ.
    pub reprojection: f64,
    /// Laplacian colour error / τ.
    pub color: f64,
    /// Depth-difference indicator.
    pub depth: f64,
}

impl Terms {
    pub fn normalized(c_m: f64, e_re: f64, e_cl: f64, e_dp: f64, tau: f64) -> Self {
        Self {
            matching: c_m / MAX_PHOTOMETRIC as f64,
            reprojection: e_re / tau,
            color: e_cl / tau,
            depth: e_dp,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.matching, self.reprojection, self.color, self.depth]
    }
}

/// `w_m C_m + w_r E_re + w_c E_cl + w_d E_dp` over normalised terms.
#[inline]
pub fn aggregated_cost(t: &Terms, w: &[f64; 4]) -> f64 {
    w[0] * t.matching + w[1] * t.reprojection + w[2] * t.color + w[3] * t.depth
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::intrinsics;
    use crate::deformation::{build_patch, MappingField, RayTable};
    use crate::guidance::Guidance;
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;

    fn noise(w: usize, h: usize, seed: u64) -> Raster<f32> {
        let mut s = seed | 1;
        Raster::from_fn(w, h, |_, _| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s % 256) as f32
        })
    }

    fn cam(tx: f64) -> CameraModel {
        CameraModel::new(intrinsics(100.0, 100.0, 39.5, 29.5), Matrix3::identity(), Vector3::new(tx, 0.0, 0.0), 80, 60)
            .unwrap()
    }

    fn patch(center: Pixel) -> DeformedPatch {
        let g = Guidance::unconstrained(80, 60, 0);
        let t = RayTable::new(16, 8).unwrap();
        build_patch(center, &t, &g, &Raster::filled(80, 60, 0.0), &MappingField::identity(80, 60)).unwrap()
    }

    #[test]
    fn identical_views_correct_hypothesis_is_zero() {
        let img = noise(80, 60, 3);
        let c = cam(0.0);
        let cost = photometric_cost(&img, &c, &img, &c, &Hypothesis::fronto_parallel(2.0), &patch(Pixel::new(40, 30)), 10.0);
        assert!(cost < 1e-6, "{cost}");
    }

    #[test]
    fn warping_out_of_source_is_max() {
        let img = noise(80, 60, 3);
        // a shift of 100 px at depth 1: everything lands off the source
        let cost = photometric_cost(&img, &cam(0.0), &img, &cam(1.0), &Hypothesis::fronto_parallel(1.0), &patch(Pixel::new(40, 30)), 10.0);
        assert_eq!(cost, MAX_PHOTOMETRIC);
    }

    #[test]
    fn flat_patch_is_max() {
        let img = Raster::filled(80, 60, 120.0);
        let c = cam(0.0);
        let cost = photometric_cost(&img, &c, &img, &c, &Hypothesis::fronto_parallel(2.0), &patch(Pixel::new(40, 30)), 10.0);
        assert_eq!(cost, MAX_PHOTOMETRIC);
    }

    #[test]
    fn ncc_matches_dense_double_precision_oracle() {
        let a = noise(80, 60, 5);
        let b = noise(80, 60, 9);
        let (ca, cb) = (cam(0.0), cam(0.05));
        let hyp = Hypothesis::new(2.5, Hypothesis::facing(Vector3::new(0.1, 0.05, -1.0), &ca.ray(40.0, 30.0)).unwrap());
        let p = patch(Pixel::new(40, 30));
        let got = photometric_cost(&a, &ca, &b, &cb, &hyp, &p, 10.0) as f64;
        // oracle: same sample set, weights and warp in f64
        let mut px: Vec<Pixel> = p.samples.iter().map(|s| s.pixel).chain([p.center]).collect();
        px.sort_by_key(|q| q.scan_key());
        px.dedup();
        let mean_len = p.trajectories.iter().map(|t| t.len() as f64).sum::<f64>() / 16.0;
        let ss = mean_len / 2.0;
        let h = plane_homography(&ca, &cb, &ca.relative_to(&cb), 40.0, 30.0, &hyp).unwrap();
        let bil = |x: f64, y: f64| -> Option<f64> {
            if x < 0.0 || y < 0.0 || x >= 79.0 || y >= 59.0 {
                return None;
            }
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let v = |xx, yy| *b.at(xx, yy) as f64;
            Some((v(x0, y0) * (1.0 - fx) + v(x0 + 1, y0) * fx) * (1.0 - fy) + (v(x0, y0 + 1) * (1.0 - fx) + v(x0 + 1, y0 + 1) * fx) * fy)
        };
        let ic = *a.at(40, 30) as f64;
        let mut acc = [0.0f64; 6];
        for q in &px {
            let i = *a.at(q.x as usize, q.y as usize) as f64;
            let d2 = ((q.x - 40).pow(2) + (q.y - 30).pow(2)) as f64;
            let w = (-d2.sqrt() / (2.0 * ss * ss) - (i - ic).abs() / 200.0).exp();
            let m = h * Vector3::new(q.x as f64, q.y as f64, 1.0);
            if let Some(j) = bil(m.x / m.z, m.y / m.z) {
                for (k, v) in [w, w * i, w * j, w * i * i, w * j * j, w * i * j].into_iter().enumerate() {
                    acc[k] += v;
                }
            }
        }
        let (mi, mj) = (acc[1] / acc[0], acc[2] / acc[0]);
        let ncc = (acc[5] / acc[0] - mi * mj) / ((acc[3] / acc[0] - mi * mi) * (acc[4] / acc[0] - mj * mj)).sqrt();
        let expect = (1.0 - ncc).clamp(0.0, 2.0);
        // f32 accumulation in the engine; f64 here
        assert!((got - expect).abs() < 2e-3, "{got} vs {expect}");
    }

    #[test]
    fn multi_scale_is_mean() {
        assert_eq!(multi_scale_cost(&[0.7]), 0.7);
        assert!((multi_scale_cost(&[0.2, 0.4]) - 0.3).abs() < 1e-15);
        let v = [0.1, 0.9, 0.35, 1.7];
        assert!((multi_scale_cost(&v) - v.iter().sum::<f64>() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn reprojection_cases() {
        let (a, b) = (cam(0.0), cam(0.2));
        let consistent = Raster::filled(80, 60, 2.0f32);
        assert!(reprojection_error(&a, (40.0, 30.0), 2.0, &b, &consistent, 3.0) < 1e-9);
        assert_eq!(reprojection_error(&a, (40.0, 30.0), 2.0, &b, &Raster::filled(80, 60, 0.3f32), 3.0), 3.0);
        // source 1 unit deeper: p_j = 40 - 10 = 30; back-projecting at depth 3
        // lands at 30 + 100*0.2/3 = 36.667 in the reference
        let corrupt = Raster::filled(80, 60, 3.0f32);
        let e = reprojection_error(&a, (40.0, 30.0), 2.0, &b, &corrupt, 10.0);
        assert!((e - (40.0 - (30.0 + 20.0 / 3.0))).abs() < 1e-9, "{e}");
        assert_eq!(reprojection_error(&a, (40.0, 30.0), 0.1, &b, &consistent, 3.0), 3.0);
    }

    #[test]
    fn color_gradient_cases() {
        let img = noise(20, 20, 11);
        let lap = laplacian(&img);
        assert_eq!(color_gradient_error(*lap.at(5, 7), &lap, (5.0, 7.0), 3.0), 0.0);
        let flat = Raster::filled(20, 20, 0.0f32);
        assert_eq!(color_gradient_error(10.0, &flat, (5.0, 5.0), 3.0), 3.0);
        assert_eq!(color_gradient_error(0.0, &flat, (-4.0, 5.0), 3.0), 3.0);
        // direct kernel evaluation
        let v = |x: usize, y: usize| *img.at(x, y);
        assert_eq!(*lap.at(5, 7), v(4, 7) + v(6, 7) + v(5, 6) + v(5, 8) - 4.0 * v(5, 7));
    }

    #[test]
    fn depth_difference_examples() {
        assert_eq!(depth_difference_error(2.0, 2.0, 0.05), 0);
        assert_eq!(depth_difference_error(2.08, 2.0, depth_tolerance(0.05, 0)), 0);
        assert_eq!(depth_difference_error(2.16, 2.0, depth_tolerance(0.05, 0)), 1);
        assert_eq!(depth_difference_error(2.16, 2.0, depth_tolerance(0.05, 1)), 0);
    }

    #[test]
    fn aggregated_examples() {
        assert_eq!(aggregated_cost(&Terms::default(), &[0.25; 4]), 0.0);
        let t = Terms { matching: 0.4, reprojection: 0.2, color: 0.0, depth: 1.0 };
        assert!((aggregated_cost(&t, &[0.25; 4]) - 0.4).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn truncations_hold(d in 0.05f64..20.0, u in -10.0f64..90.0, v in -10.0f64..70.0, tau in 0.1f64..5.0, sd in 0.01f32..30.0) {
            let (a, b) = (cam(0.0), cam(0.3));
            prop_assert!(reprojection_error(&a, (u, v), d, &b, &Raster::filled(80, 60, sd), tau) <= tau);
            let img = noise(80, 60, 17);
            let lap = laplacian(&img);
            prop_assert!(color_gradient_error(*lap.clamped(u as i64, v as i64), &lap, (u as f32 * 0.9, v as f32), tau as f32) <= tau as f32);
        }

        #[test]
        fn aggregated_is_dot_product(t in proptest::array::uniform4(0.0f64..1.0), w in proptest::array::uniform4(0.0f64..1.0)) {
            let terms = Terms { matching: t[0], reprojection: t[1], color: t[2], depth: t[3] };
            let direct: f64 = t.iter().zip(&w).map(|(a, b)| a * b).sum();
            prop_assert!((aggregated_cost(&terms, &w) - direct).abs() < 1e-12);
        }
    }
}
