use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use segmvs::deformation::{compute_textureness, patch_overlay, PatchField};
use segmvs::eval::{evaluate_dirs, peak_memory_bytes, EvalReport};
use segmvs::fusion::{export_point_cloud, FusionView};
use segmvs::guidance::{compute_occlusion_map, extract_boundary};
use segmvs::io::{layout, load_scene, png, write_depth_map, write_ply, write_scene};
use segmvs::io::pfm::write_pfm_rgb;
use segmvs::pm::{reconstruct, view_guidance};
use segmvs::restoration::restore;
use segmvs::synth::{generate_synthetic_scene, SynthSpec};
use segmvs::{Config, Pixel, Raster, SceneBundle};

#[derive(Parser, Debug)]
#[command(name = "segmvs", version, about = "Segmentation-guided PatchMatch multi-view stereo")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Disable a pipeline feature; repeatable.
    #[arg(long = "ablate", value_name = "NAME", global = true)]
    ablate: Vec<String>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full pipeline: depth and normal maps plus a fused point cloud.
    Reconstruct {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restored depth maps and their provenance images.
    Restore {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Occlusion maps: discontinuous edges red, continuous edges green.
    Occlusion {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Overlay of one pixel's deformed patch.
    PatchDebug {
        #[arg(long)]
        scene: PathBuf,
        /// View name or zero-based index.
        #[arg(long, default_value = "0")]
        view: String,
        #[arg(long)]
        x: i32,
        #[arg(long)]
        y: i32,
        /// Output PNG.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic two-plane scene with ground truth under `<out>/gt`.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        #[arg(long, default_value_t = 5)]
        views: usize,
    },
    /// Compare `<result>/depth/*.pfm` with `<gt>/depth/*.pfm`.
    Eval {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Scene directory whose segmentation adds per-instance rows.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Writes `<out>.txt` (key = value) and `<out>.tsv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// An error tagged with the pipeline stage that raised it.
struct StageError {
    stage: &'static str,
    message: String,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T, E: std::fmt::Display> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            message: e.to_string(),
        })
    }
}

fn build_config(g: &GlobalArgs) -> Result<Config, StageError> {
    let mut c = Config::default();
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path).map_err(|e| StageError {
            stage: "config",
            message: format!("{}: {e}", path.display()),
        })?;
        c.apply_text(&text).map_err(|e| StageError {
            stage: "config",
            message: format!("{}: {e}", path.display()),
        })?;
    }
    for kv in &g.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| StageError {
            stage: "config",
            message: format!("--set expects KEY=VALUE, got '{kv}'"),
        })?;
        c.set(k, v).stage("config")?;
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(t) = g.threads {
        c.threads = t;
    }
    for a in &g.ablate {
        c.ablations.insert(a.parse().stage("config")?);
    }
    c.validate().stage("config")?;
    Ok(c)
}

fn mkdir(p: &Path) -> Result<(), StageError> {
    fs::create_dir_all(p).map_err(|e| StageError {
        stage: "output",
        message: format!("{}: {e}", p.display()),
    })
}

fn write_text(p: &Path, text: &str) -> Result<(), StageError> {
    fs::write(p, text).map_err(|e| StageError {
        stage: "output",
        message: format!("{}: {e}", p.display()),
    })
}

fn load(scene: &Path) -> Result<SceneBundle, StageError> {
    load_scene(scene).stage("loading scene")
}

fn cmd_reconstruct(scene_dir: &Path, out: &Path, config: &Config) -> Result<(), StageError> {
    let start = Instant::now();
    let scene = load(scene_dir)?;
    log::info!("loaded {} views from {}", scene.views.len(), scene_dir.display());
    let rec = reconstruct(&scene, config).stage("reconstruction")?;
    mkdir(out)?;
    for (i, v) in scene.views.iter().enumerate() {
        write_depth_map(&layout::depth_path(out, &v.name), &rec.depth[i]).stage("writing depth maps")?;
        write_pfm_rgb(&layout::normal_path(out, &v.name), &rec.normal[i]).stage("writing normal maps")?;
    }
    let views: Vec<FusionView> = scene
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| FusionView {
            depth: &rec.depth[i],
            normal: &rec.normal[i],
            camera: &v.camera,
            image: Some(&v.image),
        })
        .collect();
    let cloud = export_point_cloud(&views, &config.fusion_params());
    write_ply(&out.join("cloud.ply"), &cloud).stage("fusion")?;
    let mut diag = String::from("pass\tlayer\tsweep\tview\tmean_before\tmean_after\n");
    for r in &rec.diagnostics.sweeps {
        diag.push_str(&format!("{}\t{}\t{}\t{}\t{:.9}\t{:.9}\n", r.pass, r.layer, r.sweep, r.view, r.mean_before, r.mean_after));
    }
    write_text(&out.join("sweeps.tsv"), &diag)?;
    let mut weights = String::from("w_m\tw_r\tw_c\tw_d\n");
    for w in &rec.diagnostics.weights {
        weights.push_str(&format!("{:?}\t{:?}\t{:?}\t{:?}\n", w.0[0], w.0[1], w.0[2], w.0[3]));
    }
    write_text(&out.join("weights.tsv"), &weights)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut run = format!("runtime_seconds = {elapsed:.3}\npoints = {}\n", cloud.len());
    if let Some(m) = peak_memory_bytes() {
        run.push_str(&format!("peak_memory_bytes = {m}\n"));
    }
    write_text(&out.join("run.txt"), &run)?;
    write_text(&out.join("config.txt"), &config.dump())?;
    println!("reconstructed {} views in {elapsed:.1} s; {} fused points", scene.views.len(), cloud.len());
    Ok(())
}

fn cmd_restore(scene_dir: &Path, out: &Path, config: &Config) -> Result<(), StageError> {
    let scene = load(scene_dir)?;
    let params = config.restore_params();
    for (i, v) in scene.views.iter().enumerate() {
        let r = restore(i, v, &scene.sparse, &params);
        write_depth_map(&out.join("restored").join(format!("{}.pfm", v.name)), &r.to_f32()).stage("restoration")?;
        png::write_rgb(&out.join("provenance").join(format!("{}.png", v.name)), &r.provenance_image()).stage("restoration")?;
        println!("{}: {} of {} pixels restored", v.name, r.valid_count(), r.depth.len());
    }
    Ok(())
}

fn cmd_occlusion(scene_dir: &Path, out: &Path, config: &Config) -> Result<(), StageError> {
    let scene = load(scene_dir)?;
    for v in &scene.views {
        let boundary = extract_boundary(&v.segmentation);
        let occ = compute_occlusion_map(&boundary, &v.mono_depth, config.window, config.delta, config.sigma).stage("occlusion")?;
        png::write_rgb(&out.join("occlusion").join(format!("{}.png", v.name)), &occ.overlay(&v.image)).stage("occlusion")?;
        println!("{}: {} boundary pixels in {} clusters", v.name, boundary.count(), occ.cluster_count());
    }
    Ok(())
}

fn cmd_patch_debug(scene_dir: &Path, view: &str, x: i32, y: i32, out: &Path, config: &Config) -> Result<(), StageError> {
    let scene = load(scene_dir)?;
    let idx = scene
        .views
        .iter()
        .position(|v| v.name == view)
        .or_else(|| view.parse::<usize>().ok().filter(|&i| i < scene.views.len()))
        .ok_or_else(|| StageError {
            stage: "patch-debug",
            message: format!("no view named or numbered '{view}'"),
        })?;
    let v = &scene.views[idx];
    let p = Pixel::new(x, y);
    if !v.image.contains(p) {
        return Err(StageError {
            stage: "patch-debug",
            message: format!("pixel ({x}, {y}) is outside the {}x{} view", v.width(), v.height()),
        });
    }
    let g = view_guidance(v, config).stage("guidance")?;
    let tex = compute_textureness(&v.image, config.window).stage("deformation")?;
    let field = PatchField::compute(&g, &tex, config.rays, config.window).stage("deformation")?;
    let patch = field.patch(p, &g, &Raster::filled(v.width(), v.height(), 0.0)).stage("deformation")?;
    png::write_rgb(out, &patch_overlay(&v.image, &patch)).stage("output")?;
    println!(
        "patch at ({x}, {y}) in {}: {} trajectories, {} samples",
        v.name,
        patch.trajectories.len(),
        patch.samples.len()
    );
    Ok(())
}

fn cmd_synth(out: &Path, width: usize, height: usize, views: usize, config: &Config) -> Result<(), StageError> {
    let mut spec = SynthSpec::two_plane(width, height, views);
    spec.seed = config.seed;
    let s = generate_synthetic_scene(&spec).stage("synthesis")?;
    write_scene(out, &s.scene).stage("writing scene")?;
    let gt = out.join("gt");
    for (v, d) in s.scene.views.iter().zip(&s.gt_depth) {
        write_depth_map(&layout::depth_path(&gt, &v.name), d).stage("writing ground truth")?;
    }
    println!("wrote {views} views of {width}x{height} to {}", out.display());
    Ok(())
}

fn read_run_info(result: &Path) -> (Option<f64>, Option<u64>) {
    let Ok(text) = fs::read_to_string(result.join("run.txt")) else {
        return (None, None);
    };
    let get = |key: &str| {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim().to_string())
    };
    (get("runtime_seconds").and_then(|v| v.parse().ok()), get("peak_memory_bytes").and_then(|v| v.parse().ok()))
}

fn cmd_eval(result: &Path, gt: &Path, scene: Option<&Path>, out: Option<&Path>) -> Result<(), StageError> {
    let labels = match scene {
        Some(s) => Some(load(s)?.views.into_iter().map(|v| (v.name, v.segmentation)).collect::<Vec<_>>()),
        None => None,
    };
    let mut report: EvalReport = evaluate_dirs(result, gt, labels.as_deref()).stage("evaluation")?;
    (report.runtime_seconds, report.peak_memory_bytes) = read_run_info(result);
    let kv = report.to_key_value();
    print!("{kv}");
    if let Some(o) = out {
        if let Some(parent) = o.parent().filter(|p| !p.as_os_str().is_empty()) {
            mkdir(parent)?;
        }
        write_text(&o.with_extension("txt"), &kv)?;
        write_text(&o.with_extension("tsv"), &report.to_tsv())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), StageError> {
    let config = build_config(&cli.global)?;
    if cli.global.print_config {
        print!("{}", config.dump());
        return Ok(());
    }
    let Some(cmd) = cli.command else {
        return Err(StageError {
            stage: "arguments",
            message: "no subcommand given (see --help)".into(),
        });
    };
    match cmd {
        Command::Reconstruct { scene, out } => cmd_reconstruct(&scene, &out, &config),
        Command::Restore { scene, out } => cmd_restore(&scene, &out, &config),
        Command::Occlusion { scene, out } => cmd_occlusion(&scene, &out, &config),
        Command::PatchDebug { scene, view, x, y, out } => cmd_patch_debug(&scene, &view, x, y, &out, &config),
        Command::Synth { out, width, height, views } => cmd_synth(&out, width, height, views, &config),
        Command::Eval { result, gt, scene, out } => cmd_eval(&result, &gt, scene.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.stage, e.message);
            ExitCode::FAILURE
        }
    }
}
