//! Run configuration as `key = value` text.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fusion::FusionParams;
use crate::guidance::{EdgeMode, EdgePolicy};
use crate::restoration::RestoreParams;

/// Feature removals mirroring the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ablation {
    /// Fixed square patches and 8-neighbour propagation.
    NoDeformation,
    /// Random initialisation instead of the restored depth.
    NoInit,
    /// Depth-difference term switched off.
    NoSupervision,
    /// Every boundary treated as a depth discontinuity.
    NoOcclusion,
    /// Every boundary treated as depth-continuous.
    NoStrict,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::NoDeformation,
        Ablation::NoInit,
        Ablation::NoSupervision,
        Ablation::NoOcclusion,
        Ablation::NoStrict,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoDeformation => "no-deformation",
            Ablation::NoInit => "no-init",
            Ablation::NoSupervision => "no-supervision",
            Ablation::NoOcclusion => "no-occlusion",
            Ablation::NoStrict => "no-strict",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Ablation::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown ablation '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Trajectories per pixel, X.
    pub rays: usize,
    /// Window side w for texture mapping and occlusion classification.
    pub window: usize,
    pub gamma: f64,
    pub kappa: f64,
    pub tau: f64,
    pub eta: f64,
    pub delta: f64,
    /// Minimum boundary cluster size σ.
    pub sigma: usize,
    pub mu_base: f64,
    pub epsilon_base: u32,
    pub layers: usize,
    pub sweeps: usize,
    pub passes: usize,
    pub seed: u64,
    pub init_weights: [f64; 4],
    pub ransac_iterations: usize,
    pub top_view_fraction: f64,
    pub sigma_intensity: f64,
    /// Initial angular refinement step in degrees.
    pub refine_step_deg: f64,
    pub fusion_min_views: usize,
    pub fusion_depth_tolerance: f64,
    pub fusion_reprojection_tolerance: f64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub ablations: BTreeSet<Ablation>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            rays: 16,
            window: 11,
            gamma: 5e-3,
            kappa: 0.7,
            tau: 3.0,
            eta: 0.1,
            delta: 1.8,
            sigma: 12,
            mu_base: 0.05,
            epsilon_base: 8,
            layers: 4,
            sweeps: 3,
            passes: 2,
            seed: 0,
            init_weights: [1.0, 0.2, 0.2, 0.2],
            ransac_iterations: 1000,
            top_view_fraction: 0.6,
            sigma_intensity: 10.0,
            refine_step_deg: 5.0,
            fusion_min_views: 2,
            fusion_depth_tolerance: 0.01,
            fusion_reprojection_tolerance: 2.0,
            threads: 0,
            ablations: BTreeSet::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for {key}")))
}

impl Config {
    pub const KEYS: [&'static str; 27] = [
        "rays",
        "window",
        "gamma",
        "kappa",
        "tau",
        "eta",
        "delta",
        "sigma",
        "mu_base",
        "epsilon_base",
        "layers",
        "sweeps",
        "passes",
        "seed",
        "w_m",
        "w_r",
        "w_c",
        "w_d",
        "ransac_iterations",
        "top_view_fraction",
        "sigma_intensity",
        "refine_step_deg",
        "fusion_min_views",
        "fusion_depth_tolerance",
        "fusion_reprojection_tolerance",
        "threads",
        "ablate",
    ];

    pub fn has(&self, a: Ablation) -> bool {
        self.ablations.contains(&a)
    }

    /// Sets one key. `ablate` takes a comma-separated list (empty clears it).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "rays" => self.rays = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "kappa" => self.kappa = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "eta" => self.eta = parse(key, v)?,
            "delta" => self.delta = parse(key, v)?,
            "sigma" => self.sigma = parse(key, v)?,
            "mu_base" => self.mu_base = parse(key, v)?,
            "epsilon_base" => self.epsilon_base = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "sweeps" => self.sweeps = parse(key, v)?,
            "passes" => self.passes = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "w_m" => self.init_weights[0] = parse(key, v)?,
            "w_r" => self.init_weights[1] = parse(key, v)?,
            "w_c" => self.init_weights[2] = parse(key, v)?,
            "w_d" => self.init_weights[3] = parse(key, v)?,
            "ransac_iterations" => self.ransac_iterations = parse(key, v)?,
            "top_view_fraction" => self.top_view_fraction = parse(key, v)?,
            "sigma_intensity" => self.sigma_intensity = parse(key, v)?,
            "refine_step_deg" => self.refine_step_deg = parse(key, v)?,
            "fusion_min_views" => self.fusion_min_views = parse(key, v)?,
            "fusion_depth_tolerance" => self.fusion_depth_tolerance = parse(key, v)?,
            "fusion_reprojection_tolerance" => self.fusion_reprojection_tolerance = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "ablate" => {
                self.ablations = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(Ablation::from_str)
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::Config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", i + 1)))?;
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Text form that [`Config::parse`] reads back to an identical value.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        // `{:?}` on floats prints the shortest round-tripping representation
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("rays", self.rays.to_string());
        kv("window", self.window.to_string());
        kv("gamma", format!("{:?}", self.gamma));
        kv("kappa", format!("{:?}", self.kappa));
        kv("tau", format!("{:?}", self.tau));
        kv("eta", format!("{:?}", self.eta));
        kv("delta", format!("{:?}", self.delta));
        kv("sigma", self.sigma.to_string());
        kv("mu_base", format!("{:?}", self.mu_base));
        kv("epsilon_base", self.epsilon_base.to_string());
        kv("layers", self.layers.to_string());
        kv("sweeps", self.sweeps.to_string());
        kv("passes", self.passes.to_string());
        kv("seed", self.seed.to_string());
        for (k, w) in ["w_m", "w_r", "w_c", "w_d"].iter().zip(self.init_weights) {
            kv(k, format!("{w:?}"));
        }
        kv("ransac_iterations", self.ransac_iterations.to_string());
        kv("top_view_fraction", format!("{:?}", self.top_view_fraction));
        kv("sigma_intensity", format!("{:?}", self.sigma_intensity));
        kv("refine_step_deg", format!("{:?}", self.refine_step_deg));
        kv("fusion_min_views", self.fusion_min_views.to_string());
        kv("fusion_depth_tolerance", format!("{:?}", self.fusion_depth_tolerance));
        kv("fusion_reprojection_tolerance", format!("{:?}", self.fusion_reprojection_tolerance));
        kv("threads", self.threads.to_string());
        let names: Vec<_> = self.ablations.iter().map(|a| a.name()).collect();
        kv("ablate", names.join(","));
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.rays == 0 || self.rays % 2 == 1 || self.rays > 64 {
            return fail(format!("rays must be even and in 2..=64, got {}", self.rays));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return fail(format!("window must be odd and at least 3, got {}", self.window));
        }
        if !(self.eta >= 0.0) || 4.0 * self.eta > 1.0 {
            return fail(format!("eta = {} makes the weight constraints infeasible (need 0 <= 4 eta <= 1)", self.eta));
        }
        if self.layers == 0 || self.layers > 8 {
            return fail(format!("layers must be in 1..=8, got {}", self.layers));
        }
        if self.passes == 0 {
            return fail("passes must be at least 1".into());
        }
        if self.init_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.init_weights.iter().sum::<f64>() <= 0.0 {
            return fail(format!("initial weights {:?} must be non-negative with a positive sum", self.init_weights));
        }
        for (name, v) in [("tau", self.tau), ("sigma_intensity", self.sigma_intensity), ("mu_base", self.mu_base)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.gamma >= 0.0) || !(0.0..=1.0).contains(&self.kappa) || !(self.delta >= 0.0) {
            return fail("gamma and delta must be non-negative and kappa within [0, 1]".into());
        }
        if !(self.top_view_fraction > 0.0 && self.top_view_fraction <= 1.0) {
            return fail(format!("top_view_fraction must be in (0, 1], got {}", self.top_view_fraction));
        }
        if self.ablations.contains(&Ablation::NoOcclusion) && self.ablations.contains(&Ablation::NoStrict) {
            return fail("no-occlusion and no-strict are mutually exclusive".into());
        }
        Ok(())
    }

    pub fn edge_policy(&self) -> EdgePolicy {
        let mode = if self.has(Ablation::NoOcclusion) {
            EdgeMode::AllStrict
        } else if self.has(Ablation::NoStrict) {
            EdgeMode::AllFlexible
        } else {
            EdgeMode::DualCategory
        };
        EdgePolicy {
            epsilon_base: self.epsilon_base,
            mode,
        }
    }

    pub fn restore_params(&self) -> RestoreParams {
        RestoreParams {
            gamma: self.gamma,
            kappa: self.kappa,
            ransac_iterations: self.ransac_iterations,
            seed: self.seed,
        }
    }

    pub fn fusion_params(&self) -> FusionParams {
        FusionParams {
            min_consistent_views: self.fusion_min_views,
            depth_tolerance: self.fusion_depth_tolerance,
            reprojection_tolerance: self.fusion_reprojection_tolerance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = Config::default();
        c.validate().unwrap();
        assert_eq!(Config::parse(&c.dump()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::parse("rays = 15").is_err());
        assert!(Config::parse("rays = 66").is_err());
        assert!(Config::parse("eta = 0.3").is_err());
        assert!(Config::parse("bogus = 1").is_err());
        assert!(Config::parse("gamma 3").is_err());
        assert!(Config::parse("ablate = no-such").is_err());
        assert!(Config::parse("ablate = no-occlusion,no-strict").is_err());
    }

    #[test]
    fn comments_and_ablations() {
        let c = Config::parse("# defaults\nseed = 9 # trailing\nablate = no-init, no-deformation\n").unwrap();
        assert_eq!(c.seed, 9);
        assert!(c.has(Ablation::NoInit) && c.has(Ablation::NoDeformation));
        assert_eq!(c.edge_policy().mode, EdgeMode::DualCategory);
        assert_eq!(Config::parse("ablate = no-occlusion").unwrap().edge_policy().mode, EdgeMode::AllStrict);
    }

    proptest! {
        #[test]
        fn dump_round_trips(
            gamma in 0.0f64..1.0, tau in 0.01f64..100.0, eta in 0.0f64..0.25,
            seed in any::<u64>(), rays in 1usize..=32, w in proptest::array::uniform4(0.0f64..5.0),
            mask in 0u8..32,
        ) {
            let mut c = Config { gamma, tau, eta, seed, rays: rays * 2, init_weights: w, ..Config::default() };
            c.init_weights[0] += 0.1;
            for (i, a) in Ablation::ALL.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    c.ablations.insert(*a);
                }
            }
            c.ablations.remove(&Ablation::NoStrict);
            prop_assert_eq!(Config::parse(&c.dump()).unwrap(), c);
        }
    }
}
