use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use splat_refine::harness::{self, format_translation, ExperimentConfig};
use splat_refine::pose::{median_of, pose_error, read_pose_file, write_pose_file, NamedPose};
use splat_refine::scene::{generate_synthetic, load_ply};
use splat_refine::search::{consistency_report, write_trace_jsonl};
use splat_refine::{
    refine, render_with, Camera, HeuristicKind, ImageBuffer, Pose, RenderOptions, Scene, SearchOptions, StepSchedule,
    SyntheticSpec, Threshold,
};

#[derive(Parser)]
#[command(name = "splat-refine", version, about = "Refine camera poses against a Gaussian splat scene")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SPLAT_REFINE_THREADS")]
    threads: Option<usize>,
    /// Global seed; overrides the config seed for `experiment`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene from a pose to PNG.
    Render {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        camera: CameraArgs,
        /// World-to-camera pose: "qw qx qy qz tx ty tz".
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Refine one coarse pose against one query image.
    Refine {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        camera: CameraArgs,
        #[arg(long)]
        query: PathBuf,
        /// Coarse world-to-camera pose: "qw qx qy qz tx ty tz".
        #[arg(long, allow_hyphen_values = true)]
        initial: String,
        #[arg(long, default_value = "sad")]
        heuristic: HeuristicKind,
        /// JSON list of {rot_step, trans_step, budget}; defaults to the built-in schedule.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long, default_value_t = 400)]
        max_expansions: usize,
        /// Absolute goal threshold on h; the heuristic default is used otherwise.
        #[arg(long)]
        h_threshold: Option<f64>,
        #[arg(long, default_value_t = 1)]
        decimation: usize,
        /// Write the refined pose here.
        #[arg(long)]
        out_pose: Option<PathBuf>,
        /// Write the expansion trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write a query/render comparison image.
        #[arg(long)]
        comparison: Option<PathBuf>,
    },
    /// Run an experiment config (JSON).
    Experiment {
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Error table between estimated and ground-truth pose files.
    Compare {
        estimates: PathBuf,
        ground_truth: PathBuf,
        /// Meters per scene unit; translation is shown in cm when given.
        #[arg(long)]
        metric_scale: Option<f64>,
    },
}

#[derive(Args)]
struct SceneArgs {
    /// Scene file (.ply or .json).
    #[arg(long, conflicts_with = "synthetic")]
    scene: Option<PathBuf>,
    /// Generate a synthetic scene with this many primitives instead.
    #[arg(long)]
    synthetic: Option<usize>,
}

impl SceneArgs {
    fn load(&self, seed: u64) -> anyhow::Result<Scene> {
        match (&self.scene, self.synthetic) {
            (Some(path), _) => load_scene_file(path),
            (None, Some(count)) => Ok(generate_synthetic(&SyntheticSpec { count, seed, ..SyntheticSpec::default() })?),
            (None, None) => bail!("either --scene or --synthetic is required"),
        }
    }
}

fn load_scene_file(path: &Path) -> anyhow::Result<Scene> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => Ok(load_ply(path)?),
        Some("json") => Ok(Scene::load_json(path)?),
        _ => bail!("cannot tell scene format of {} (expected .ply or .json)", path.display()),
    }
}

#[derive(Args)]
struct CameraArgs {
    /// Camera intrinsics JSON {fx, fy, cx, cy, width, height[, near]}.
    #[arg(long, conflicts_with_all = ["width", "height", "hfov"])]
    camera: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    /// Horizontal field of view in degrees.
    #[arg(long, default_value_t = 60.0)]
    hfov: f64,
}

impl CameraArgs {
    fn load(&self) -> anyhow::Result<Camera> {
        let cam = match &self.camera {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => Camera::from_fov(self.width, self.height, self.hfov)?,
        };
        cam.validate()?;
        Ok(cam)
    }
}

fn parse_pose(text: &str) -> anyhow::Result<Pose> {
    let nums: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("bad number {s:?} in pose")))
        .collect::<anyhow::Result<_>>()?;
    if nums.len() != 7 {
        bail!("pose needs 7 numbers (qw qx qy qz tx ty tz), got {}", nums.len());
    }
    Ok(Pose::from_raw([nums[0], nums[1], nums[2], nums[3]], [nums[4], nums[5], nums[6]])?)
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = cli.seed.unwrap_or(0);

    match cli.command {
        Command::Render { scene, camera, pose, out } => {
            let scene = scene.load(seed)?;
            let cam = camera.load()?;
            let img = render_with(&scene, &cam, &parse_pose(&pose)?, &RenderOptions::default());
            img.save_png(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Refine {
            scene,
            camera,
            query,
            initial,
            heuristic,
            schedule,
            max_expansions,
            h_threshold,
            decimation,
            out_pose,
            trace,
            comparison,
        } => {
            let scene = scene.load(seed)?;
            let cam = camera.load()?;
            let query = ImageBuffer::load(&query)?;
            let initial = parse_pose(&initial)?;
            let schedule = match schedule {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<StepSchedule>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => StepSchedule::default(),
            };
            let opts = SearchOptions {
                max_expansions,
                decimation,
                h_threshold: h_threshold.map_or(Threshold::Auto, Threshold::Absolute),
                ..SearchOptions::default()
            };
            let res = refine(&scene, &cam, &query, &initial, &schedule, heuristic, &opts)?;
            let consistency = consistency_report(&res, 1.0);
            println!("refined pose  {}", res.best_pose);
            println!("h             {:.6} -> {:.6}", res.initial_h, res.best_h);
            println!(
                "expansions    {} (per level: {:?})",
                res.expansions,
                res.per_level.iter().map(|l| l.expansions).collect::<Vec<_>>()
            );
            println!("renders       {}", res.renders);
            println!("terminated by {}", res.terminated_by.name());
            println!(
                "consistency   {} of {} edges violate h(n) <= 1 + h(n')",
                consistency.violations, consistency.edges
            );
            if let Some(path) = out_pose {
                write_pose_file(&path, &[NamedPose { name: "refined".into(), pose: res.best_pose }])?;
            }
            if let Some(path) = trace {
                let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_trace_jsonl(std::io::BufWriter::new(file), &res)?;
            }
            if let Some(path) = comparison {
                let rendered = render_with(&scene, &cam, &res.best_pose, &opts.render);
                harness::render_comparison(&query, &rendered)?.save_png(&path)?;
            }
        }
        Command::Experiment { config, output_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = Some(dir);
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let out = harness::run_all(&cfg)?;
            let a = &out.report.aggregates;
            let unit = |v: f64| format_translation(v, cfg.metric_scale);
            println!("queries x seeds   {}", a.count);
            println!(
                "median init       {} / {:.4} deg",
                unit(a.median_init.translation_error),
                a.median_init.rotation_error
            );
            println!(
                "median refined    {} / {:.4} deg",
                unit(a.median_refined.translation_error),
                a.median_refined.rotation_error
            );
            println!(
                "improvement       t {:.1}% / r {:.1}%",
                a.translation_improvement_pct, a.rotation_improvement_pct
            );
            println!("within ({}, {} deg)  {:.1}%", unit(a.within_translation), a.within_rotation_deg, a.ratio_within);
            println!("expansions        median {} / max {}", a.median_expansions, a.max_expansions);
            for s in out.noise_grid.iter().chain(&out.ablation) {
                println!(
                    "{:<24} {} / {:.4} deg -> {} / {:.4} deg",
                    s.label,
                    unit(s.median_init_t),
                    s.median_init_r_deg,
                    unit(s.median_refined_t),
                    s.median_refined_r_deg
                );
            }
            if let Some(dir) = &cfg.output_dir {
                println!("reports in {}", dir.display());
            }
        }
        Command::Compare { estimates, ground_truth, metric_scale } => {
            let est = read_pose_file(&estimates)?;
            let gt = read_pose_file(&ground_truth)?;
            let mut errors = Vec::new();
            println!("{:<24} {:>14} {:>12}", "name", "translation", "rotation");
            for e in &est {
                let Some(g) = gt.iter().find(|g| g.name == e.name) else {
                    eprintln!("no ground truth for {}", e.name);
                    continue;
                };
                let err = pose_error(&e.pose, &g.pose);
                println!(
                    "{:<24} {:>14} {:>8.4} deg",
                    e.name,
                    format_translation(err.translation_error, metric_scale),
                    err.rotation_error
                );
                errors.push(err);
            }
            match median_of(&errors) {
                Some(m) => println!(
                    "{:<24} {:>14} {:>8.4} deg",
                    "median",
                    format_translation(m.translation_error, metric_scale),
                    m.rotation_error
                ),
                None => bail!("no poses in common"),
            }
        }
    }
    Ok(())
}
