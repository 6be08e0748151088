//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! The end-to-end, ablation and determinism checks run the full pipeline
//! at the stated scene size and take several minutes on one core.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use segmvs::deformation::{build_patch, compute_textureness, fragment_counts, propagation_candidates, MappingField, RayTable};
use segmvs::guidance::{compute_occlusion_map, extract_boundary, EdgeClass, EdgePolicy, Guidance, OcclusionMap};
use segmvs::io::write_depth_map;
use segmvs::pm::em::{em_update_weights, objective, CostWeights};
use segmvs::pm::{depth_difference_error, reconstruct, Reconstruction};
use segmvs::restoration::restore;
use segmvs::synth::{generate_synthetic_scene, SynthScene, SynthSpec};
use segmvs::{Ablation, Config, Pixel, Raster};

#[derive(Default)]
struct Report {
    failed: Vec<&'static str>,
}

impl Report {
    fn check(&mut self, name: &'static str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(name);
        }
    }
}

// ---------------------------------------------------------------- restoration

fn restoration_exactness(r: &mut Report) {
    let s = generate_synthetic_scene(&SynthSpec::two_plane(640, 480, 5)).unwrap();
    let params = Config::default().restore_params();
    let (mut worst, mut checked, mut bad) = (0.0f64, 0usize, 0usize);
    for (i, v) in s.scene.views.iter().enumerate() {
        let rest = restore(i, v, &s.scene.sparse, &params);
        for (k, &l) in v.segmentation.data().iter().enumerate() {
            if l == 0 {
                continue;
            }
            checked += 1;
            let gt = s.gt_depth[i].data()[k] as f64;
            let (x, y) = (k % v.width(), k / v.width());
            if !rest.is_valid(x, y) {
                bad += 1;
                continue;
            }
            let rel = (rest.depth.data()[k] - gt).abs() / gt;
            worst = worst.max(rel);
            bad += usize::from(rel > 1e-6);
        }
    }
    r.check(
        "restoration exactness",
        bad == 0 && checked > 0,
        format!("{checked} labeled pixels, {bad} outside 1e-6 relative, worst {worst:.3e}"),
    );
}

// ---------------------------------------------------------------- depth term

fn depth_term_oracle(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let restored: f64 = rng.gen_range(0.1..10.0);
        let layer: usize = rng.gen_range(0..4);
        // half the estimates land near the tolerance edge
        let estimate = if rng.gen_bool(0.5) {
            restored * (1.0 + rng.gen_range(-0.5..0.5))
        } else {
            restored * (1.0 + 0.05 * 2f64.powi(layer as i32) * rng.gen_range(0.9..1.1) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        };
        let mu = 0.05 * 2f64.powi(layer as i32);
        let direct = if (estimate - restored).abs() / restored <= mu { 0 } else { 1 };
        let got = depth_difference_error(estimate, restored, segmvs::pm::depth_tolerance(0.05, layer));
        mismatches += usize::from(got != direct);
    }
    r.check("depth term oracle", mismatches == 0, format!("10000 triples, {mismatches} mismatches"));
}

// ---------------------------------------------------------------- allocation

fn allocation_formula(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut sets, mut formula_bad, mut empty_traj) = (0, 0, 0);
    for _ in 0..300 {
        let g = random_guidance(&mut rng, 60, 45);
        let table = RayTable::new(2 * rng.gen_range(2..=16), rng.gen_range(3..30)).unwrap();
        let tex = compute_textureness(&random_image(&mut rng, 60, 45), 11).unwrap();
        let mapping = MappingField::compute(&tex, &g, 11).unwrap();
        let cost = random_cost(&mut rng, 60, 45);
        for _ in 0..5 {
            let c = Pixel::new(rng.gen_range(0..60), rng.gen_range(0..45));
            let patch = build_patch(c, &table, &g, &cost, &mapping).unwrap();
            let lengths: Vec<usize> = patch.trajectories.iter().map(|t| t.len()).collect();
            let counts = fragment_counts(&lengths);
            let (x, sum) = (lengths.len() as u128, lengths.iter().sum::<usize>() as u128);
            for (i, (&l, &n)) in lengths.iter().zip(&counts).enumerate() {
                // smallest n with n >= l / (sum / x) + 1/2, i.e. 2 n sum >= 2 l x + sum
                let mut oracle = 0u128;
                while 2 * oracle * sum < 2 * l as u128 * x + sum {
                    oracle += 1;
                }
                formula_bad += usize::from(oracle != n as u128);
                let got = patch.samples.iter().filter(|s| s.trajectory == i).count();
                empty_traj += usize::from(got == 0 || got != n);
            }
            sets += 1;
        }
    }
    r.check(
        "allocation formula",
        formula_bad == 0 && empty_traj == 0,
        format!("{sets} trajectory sets, {formula_bad} count mismatches, {empty_traj} trajectories without their samples"),
    );
}

// ---------------------------------------------------------------- edge safety

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Raster<f32> {
    Raster::from_fn(w, h, |_, _| rng.gen_range(0.0..255.0))
}

fn random_cost(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Raster<f32> {
    Raster::from_fn(w, h, |_, _| rng.gen_range(0.0..1.0))
}

/// Voronoi instances with a random class per boundary pixel.
fn random_guidance(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Guidance {
    let n = rng.gen_range(2..9);
    let sites: Vec<(i64, i64)> = (0..n).map(|_| (rng.gen_range(0..w as i64), rng.gen_range(0..h as i64))).collect();
    let labels = Raster::from_fn(w, h, |x, y| {
        (0..n).min_by_key(|&i| (sites[i].0 - x as i64).pow(2) + (sites[i].1 - y as i64).pow(2)).unwrap() as u16 + 1
    });
    let boundary = extract_boundary(&labels);
    let p_cont = rng.gen_range(0.0..1.0);
    let cls = boundary
        .mask()
        .map(|&b| b.then(|| if rng.gen_bool(p_cont) { EdgeClass::Continuous } else { EdgeClass::Discontinuous }));
    Guidance::new(labels, &OcclusionMap::from_classes(cls), &EdgePolicy::default(), rng.gen_range(0..3)).unwrap()
}

/// Pixels reachable from `c` by 8-connected steps that never enter a wall
/// and never leave a wall centre into another label.
fn reachable(g: &Guidance, c: Pixel) -> Raster<bool> {
    let (w, h) = (g.width(), g.height());
    let mut seen = Raster::filled(w, h, false);
    let mut queue = VecDeque::from([c]);
    seen[c] = true;
    while let Some(q) = queue.pop_front() {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let n = Pixel::new(q.x + dx, q.y + dy);
                if (dx, dy) == (0, 0) || !seen.contains(n) || seen[n] || g.is_wall(n) {
                    continue;
                }
                if g.is_wall(q) && g.labels()[q] != g.labels()[n] {
                    continue;
                }
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    seen
}

fn edge_safety(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (w, h) = (48, 36);
    let (mut centres, mut checked, mut violations) = (0usize, 0usize, 0usize);
    for _ in 0..1000 {
        let g = random_guidance(&mut rng, w, h);
        let table = RayTable::new(16, rng.gen_range(5..25)).unwrap();
        let tex = compute_textureness(&random_image(&mut rng, w, h), 11).unwrap();
        let mapping = MappingField::compute(&tex, &g, 11).unwrap();
        let cost = random_cost(&mut rng, w, h);
        for _ in 0..8 {
            let c = Pixel::new(rng.gen_range(0..w as i32), rng.gen_range(0..h as i32));
            let ok = reachable(&g, c);
            let patch = build_patch(c, &table, &g, &cost, &mapping).unwrap();
            let cands = propagation_candidates(&patch.trajectories, &cost).unwrap();
            let pixels = patch.samples.iter().flat_map(|s| [s.pixel, s.representative]).chain(cands);
            for p in pixels {
                checked += 1;
                violations += usize::from(!ok[p]);
            }
            centres += 1;
        }
    }
    r.check(
        "edge safety",
        violations == 0,
        format!("1000 maps, {centres} centres, {checked} samples/candidates, {violations} across a discontinuous edge"),
    );
}

// ---------------------------------------------------------------- occlusion

fn occlusion_agreement(r: &mut Report) {
    let (w, h) = (240usize, 180usize);
    // rect (x0, y0, x1, y1), depth offset from the background ramp; zero offset
    // is a painted decal with continuous depth
    let objects = [
        ((20, 20, 70, 60), 0.0),
        ((100, 25, 160, 75), -30.0),
        ((180, 20, 225, 70), 20.0),
        ((30, 100, 90, 160), -15.0),
        ((130, 100, 210, 150), 0.0),
    ];
    let inside = |(x0, y0, x1, y1): (usize, usize, usize, usize), x: usize, y: usize| x >= x0 && x < x1 && y >= y0 && y < y1;
    let labels = Raster::from_fn(w, h, |x, y| {
        objects.iter().position(|o| inside(o.0, x, y)).map_or(1, |i| i as u16 + 2)
    });
    let mono = Raster::from_fn(w, h, |x, y| {
        let ramp = 100.0 + 0.02 * x as f64 + 0.01 * y as f64;
        ramp + objects.iter().find(|o| inside(o.0, x, y)).map_or(0.0, |o| o.1)
    });
    let chebyshev = |(x0, y0, x1, y1): (usize, usize, usize, usize), x: usize, y: usize| {
        let dx = (x0 as i64 - x as i64).max(x as i64 - (x1 as i64 - 1)).max(0);
        let dy = (y0 as i64 - y as i64).max(y as i64 - (y1 as i64 - 1)).max(0);
        dx.max(dy)
    };
    let boundary = extract_boundary(&labels);
    let c = Config::default();
    let occ = compute_occlusion_map(&boundary, &mono, c.window, c.delta, c.sigma).unwrap();
    let (mut total, mut agree) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let Some(got) = *occ.class().at(x, y) else { continue };
            let nearest = objects.iter().min_by_key(|o| chebyshev(o.0, x, y)).unwrap();
            let expected = if nearest.1 == 0.0 { EdgeClass::Continuous } else { EdgeClass::Discontinuous };
            total += 1;
            agree += usize::from(got == expected);
        }
    }
    let ratio = agree as f64 / total.max(1) as f64;
    r.check(
        "occlusion map agreement",
        total > 0 && ratio >= 0.99,
        format!("{agree}/{total} boundary pixels agree ({:.2}%)", 100.0 * ratio),
    );
}

// ---------------------------------------------------------------- full runs

struct Run {
    rec: Reconstruction,
    seconds: f64,
}

fn run(s: &SynthScene, config: &Config) -> Run {
    let t = Instant::now();
    let rec = reconstruct(&s.scene, config).unwrap();
    Run { rec, seconds: t.elapsed().as_secs_f64() }
}

#[derive(Debug, Clone, Copy)]
struct PlaneMetrics {
    rmse: f64,
    completeness: f64,
}

/// Pools every view's pixels of instance `label`.
fn plane_metrics(s: &SynthScene, depth: &[Raster<f32>], label: u16) -> PlaneMetrics {
    let (mut n_gt, mut n_both, mut within, mut sq) = (0usize, 0usize, 0usize, 0.0f64);
    for (v, view) in s.scene.views.iter().enumerate() {
        for (k, &l) in view.segmentation.data().iter().enumerate() {
            let g = s.gt_depth[v].data()[k] as f64;
            if l != label || !(g > 0.0) {
                continue;
            }
            n_gt += 1;
            let e = depth[v].data()[k] as f64;
            if e.is_finite() && e > 0.0 {
                n_both += 1;
                sq += (e - g).powi(2);
                within += usize::from((e - g).abs() / g <= 0.02);
            }
        }
    }
    PlaneMetrics {
        rmse: if n_both == 0 { f64::INFINITY } else { (sq / n_both as f64).sqrt() },
        completeness: within as f64 / n_gt.max(1) as f64,
    }
}

fn overall_rmse(s: &SynthScene, depth: &[Raster<f32>]) -> f64 {
    let (mut n, mut sq) = (0usize, 0.0f64);
    for (d, g) in depth.iter().zip(&s.gt_depth) {
        for (&e, &g) in d.data().iter().zip(g.data()) {
            if g > 0.0 {
                n += 1;
                sq += if e.is_finite() && e > 0.0 { (e as f64 - g as f64).powi(2) } else { (g as f64).powi(2) };
            }
        }
    }
    (sq / n.max(1) as f64).sqrt()
}

fn pfm_digests(dir: &Path, rec: &Reconstruction) -> Vec<Vec<u8>> {
    rec.depth
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let p = dir.join(format!("{i}.pfm"));
            write_depth_map(&p, d).unwrap();
            Sha256::digest(fs::read(&p).unwrap()).to_vec()
        })
        .collect()
}

fn em_grid_optimum(means: &[Option<f64>; 4], eta: f64) -> f64 {
    let steps = 100i64;
    let lo = (eta * steps as f64).round() as i64;
    let mut best = f64::INFINITY;
    for a in lo..=steps {
        for b in lo..=steps - a {
            for c in lo..=steps - a - b {
                let d = steps - a - b - c;
                if d < lo {
                    continue;
                }
                let w = [a, b, c, d].map(|v| v as f64 / steps as f64);
                best = best.min(objective(&w, means));
            }
        }
    }
    best
}

fn em_constraints(r: &mut Report, runs: &[&Run], eta: f64) {
    let mut steps = 0usize;
    let mut worst_sum = 0.0f64;
    let mut min_w = f64::INFINITY;
    for run in runs {
        for w in &run.rec.diagnostics.weights {
            steps += 1;
            worst_sum = worst_sum.max((w.0.iter().sum::<f64>() - 1.0).abs());
            min_w = min_w.min(w.0.iter().copied().fold(f64::INFINITY, f64::min));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..200 {
        let means: [Option<f64>; 4] = std::array::from_fn(|_| Some(rng.gen_range(0.0..1.0)));
        let current = CostWeights::from_raw([rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)]).unwrap();
        let w = em_update_weights(&means, &current, eta).unwrap();
        worst_gap = worst_gap.max(objective(&w.0, &means) - em_grid_optimum(&means, eta));
    }
    let ok = steps > 0 && worst_sum <= 1e-9 && min_w >= eta - 1e-12 && worst_gap <= 1e-3;
    r.check(
        "EM constraints",
        ok,
        format!("{steps} M-steps: max |sum-1| {worst_sum:.1e}, min weight {min_w:.6}; 200 random statistics: objective - grid optimum <= {worst_gap:.2e}"),
    );
}

fn sweep_monotonicity(r: &mut Report, runs: &[&Run]) {
    let (mut sweeps, mut rises, mut worst) = (0usize, 0usize, 0.0f64);
    for run in runs {
        for s in &run.rec.diagnostics.sweeps {
            sweeps += 1;
            if s.mean_after > s.mean_before {
                rises += 1;
                worst = worst.max(s.mean_after - s.mean_before);
            }
        }
    }
    r.check(
        "sweep monotonicity",
        sweeps > 0 && rises == 0,
        format!("{sweeps} view sweeps over {} runs, {rises} increases (worst {worst:.3e})", runs.len()),
    );
}

fn main() -> ExitCode {
    let mut r = Report::default();
    restoration_exactness(&mut r);
    depth_term_oracle(&mut r);
    allocation_formula(&mut r);
    edge_safety(&mut r);
    occlusion_agreement(&mut r);

    let scene = generate_synthetic_scene(&SynthSpec::two_plane(640, 480, 5)).unwrap();
    let span = scene.scene.depth_range.span();
    let config = Config::default();
    let base = run(&scene, &config);
    let planes = [1u16, 2].map(|l| plane_metrics(&scene, &base.rec.depth, l));
    let e2e_ok = planes.iter().all(|m| m.rmse <= 0.01 * span && m.completeness >= 0.95) && base.seconds <= 600.0;
    r.check(
        "synthetic end-to-end",
        e2e_ok,
        format!(
            "textured rmse {:.4} / textureless rmse {:.4} (limit {:.4}); completeness@2% {:.4} / {:.4}; runtime {:.1} s (limit 600)",
            planes[0].rmse,
            planes[1].rmse,
            0.01 * span,
            planes[0].completeness,
            planes[1].completeness,
            base.seconds
        ),
    );

    let with = |a: Ablation| {
        let mut c = config.clone();
        c.ablations.insert(a);
        c
    };
    let no_def = run(&scene, &with(Ablation::NoDeformation));
    let no_init = run(&scene, &with(Ablation::NoInit));
    let flat_base = planes[1].rmse;
    let flat_no_def = plane_metrics(&scene, &no_def.rec.depth, 2).rmse;
    let (all_base, all_no_init) = (overall_rmse(&scene, &base.rec.depth), overall_rmse(&scene, &no_init.rec.depth));
    r.check(
        "ablation direction",
        flat_no_def > flat_base && all_no_init > all_base,
        format!(
            "textureless rmse {flat_base:.4} -> {flat_no_def:.4} without deformation; overall rmse {all_base:.4} -> {all_no_init:.4} without restored initialisation"
        ),
    );

    em_constraints(&mut r, &[&base, &no_def, &no_init], config.eta);

    let again = run(&scene, &config);
    sweep_monotonicity(&mut r, &[&base, &no_def, &no_init, &again]);
    let tmp = tempfile::tempdir().unwrap();
    let (da, db) = (tmp.path().join("a"), tmp.path().join("b"));
    let (ha, hb) = (pfm_digests(&da, &base.rec), pfm_digests(&db, &again.rec));
    r.check(
        "determinism",
        ha == hb,
        format!("{} depth maps from two 640x480 runs with seed {}, {} differ", ha.len(), config.seed, ha.iter().zip(&hb).filter(|(a, b)| a != b).count()),
    );

    if r.failed.is_empty() {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", r.failed.join(", "));
        ExitCode::FAILURE
    }
}
