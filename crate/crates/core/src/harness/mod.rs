//! Experiment orchestration: scenario configs, batch refinement, sweeps and
//! report emission.

mod report;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::HeuristicKind;
use crate::pose::{inject_noise, pose_error, read_pose_file, NamedPose, Pose, StepSchedule};
use crate::render::{render_with, Camera, ImageBuffer};
use crate::scene::{generate_synthetic, load_ply, Scene, SyntheticSpec};
use crate::search::{refine, write_trace_jsonl, SearchOptions};

pub use report::{
    aggregate, improvement_pct, ratio_within, write_rows_csv, write_summary_csv, Aggregates, Report, ReportRow,
    SummaryRow, CSV_COLUMNS,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    Synthetic(SyntheticSpec),
    Ply(PathBuf),
    Json(PathBuf),
}

impl SceneSource {
    pub fn load(&self) -> Result<Scene> {
        match self {
            SceneSource::Synthetic(spec) => generate_synthetic(spec),
            SceneSource::Ply(path) => load_ply(path),
            SceneSource::Json(path) => Scene::load_json(path),
        }
    }
}

/// Cameras spaced evenly on a horizontal circle, all looking at `target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSpec {
    pub count: usize,
    pub radius: f64,
    /// Offset of the circle along world -y (the up direction for y-down cameras).
    #[serde(default)]
    pub height: f64,
    #[serde(default)]
    pub target: [f64; 3],
    #[serde(default)]
    pub start_deg: f64,
}

impl OrbitSpec {
    pub fn poses(&self) -> Result<Vec<NamedPose>> {
        if self.count == 0 || !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::Config("orbit needs count >= 1 and a positive radius".into()));
        }
        let target = Vector3::from(self.target);
        let up = Vector3::new(0.0, -1.0, 0.0);
        (0..self.count)
            .map(|i| {
                let a = (self.start_deg + 360.0 * i as f64 / self.count as f64).to_radians();
                let eye = target + Vector3::new(self.radius * a.cos(), -self.height, self.radius * a.sin());
                Ok(NamedPose { name: format!("orbit_{i:03}"), pose: Pose::look_at(eye, target, up)? })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlinePose {
    pub name: String,
    /// `[w, x, y, z]`, world-to-camera.
    pub q: [f64; 4],
    pub t: [f64; 3],
}

/// Ground-truth query poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PoseSource {
    File(PathBuf),
    Inline(Vec<InlinePose>),
    Orbit(OrbitSpec),
}

impl PoseSource {
    pub fn load(&self) -> Result<Vec<NamedPose>> {
        match self {
            PoseSource::File(path) => read_pose_file(path),
            PoseSource::Inline(list) => {
                list.iter().map(|p| Ok(NamedPose { name: p.name.clone(), pose: Pose::from_raw(p.q, p.t)? })).collect()
            }
            PoseSource::Orbit(spec) => spec.poses(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryConfig {
    pub poses: PoseSource,
    /// Directory holding `<name>.png` per query. When absent, queries are
    /// rendered from the ground-truth poses.
    #[serde(default)]
    pub images: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub q_scale: f64,
    pub t_scale: f64,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSource {
    /// Coarse poses keyed by query name.
    File(PathBuf),
    Noise(NoiseSpec),
}

fn default_within() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    pub camera: Camera,
    pub queries: QueryConfig,
    pub initial: InitialSource,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default)]
    pub heuristic: HeuristicKind,
    #[serde(default)]
    pub search: SearchOptions,
    /// Where report files go; nothing is written when absent.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Meters per scene unit, used only for display.
    #[serde(default)]
    pub metric_scale: Option<f64>,
    /// Mixed into every noise seed.
    #[serde(default)]
    pub seed: u64,
    /// `[translation, rotation_deg]` limits for the within-ratio.
    #[serde(default = "default_within")]
    pub within: [f64; 2],
    #[serde(default)]
    pub emit_images: bool,
    #[serde(default)]
    pub emit_traces: bool,
    /// Extra runs with `[q_scale, t_scale]` replacing the noise spec scales.
    #[serde(default)]
    pub noise_grid: Vec<[f64; 2]>,
    /// Extra runs with each listed heuristic.
    #[serde(default)]
    pub ablation: Vec<HeuristicKind>,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.scene {
            SceneSource::Ply(p) | SceneSource::Json(p) => fix(p),
            SceneSource::Synthetic(_) => {}
        }
        if let PoseSource::File(p) = &mut self.queries.poses {
            fix(p);
        }
        if let Some(p) = &mut self.queries.images {
            fix(p);
        }
        if let InitialSource::File(p) = &mut self.initial {
            fix(p);
        }
        if let Some(p) = &mut self.output_dir {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.schedule.levels().is_empty() {
            return Err(Error::Config("schedule has no levels".into()));
        }
        if let InitialSource::Noise(n) = &self.initial {
            if n.seeds.is_empty() {
                return Err(Error::Config("noise spec needs at least one seed".into()));
            }
            check_scales(n.q_scale, n.t_scale)?;
        }
        if !self.noise_grid.is_empty() && !matches!(self.initial, InitialSource::Noise(_)) {
            return Err(Error::Config("noise_grid requires a noise initial-pose spec".into()));
        }
        for [q, t] in &self.noise_grid {
            check_scales(*q, *t)?;
        }
        if let Some(s) = self.metric_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("metric_scale must be positive, got {s}")));
            }
        }
        Ok(())
    }

    /// Copy of this config with the noise scales replaced.
    pub fn with_noise(&self, q_scale: f64, t_scale: f64) -> Result<Self> {
        let mut cfg = self.clone();
        match &mut cfg.initial {
            InitialSource::Noise(n) => {
                n.q_scale = q_scale;
                n.t_scale = t_scale;
            }
            InitialSource::File(_) => {
                return Err(Error::Config("noise sweep requires a noise initial-pose spec".into()));
            }
        }
        Ok(cfg)
    }
}

fn check_scales(q: f64, t: f64) -> Result<()> {
    if !(q >= 0.0 && t >= 0.0 && q.is_finite() && t.is_finite()) {
        return Err(Error::Config(format!("noise scales must be nonnegative, got ({q}, {t})")));
    }
    Ok(())
}

/// Per-run noise seed from the global seed, the configured seed and the query index.
pub fn derive_seed(global: u64, seed: u64, query_index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(global) ^ seed) ^ query_index as u64)
}

/// A loaded query with its ground truth.
#[derive(Clone, Debug)]
pub struct Query {
    pub name: String,
    pub gt: Pose,
    pub image: ImageBuffer,
}

/// Loads or renders the query set.
pub fn load_queries(cfg: &ExperimentConfig, scene: &Scene) -> Result<Vec<Query>> {
    let gts = cfg.queries.poses.load()?;
    if gts.is_empty() {
        return Err(Error::Config("query set is empty".into()));
    }
    gts.into_par_iter()
        .map(|np| {
            let image = match &cfg.queries.images {
                Some(dir) => {
                    let img = ImageBuffer::load(dir.join(format!("{}.png", np.name)))?;
                    if img.dims() != (cfg.camera.width, cfg.camera.height) {
                        return Err(Error::Contract(format!(
                            "query {} is {}x{} but camera is {}x{}",
                            np.name,
                            img.width(),
                            img.height(),
                            cfg.camera.width,
                            cfg.camera.height
                        )));
                    }
                    img
                }
                None => render_with(scene, &cfg.camera, &np.pose, &cfg.search.render),
            };
            Ok(Query { name: np.name, gt: np.pose, image })
        })
        .collect()
}

struct Job<'a> {
    query: &'a Query,
    seed: u64,
    initial: Pose,
}

fn build_jobs<'a>(cfg: &ExperimentConfig, queries: &'a [Query]) -> Result<Vec<Job<'a>>> {
    match &cfg.initial {
        InitialSource::Noise(n) => {
            let mut jobs = Vec::with_capacity(queries.len() * n.seeds.len());
            for (qi, q) in queries.iter().enumerate() {
                for &seed in &n.seeds {
                    let initial = inject_noise(&q.gt, n.q_scale, n.t_scale, derive_seed(cfg.seed, seed, qi))?;
                    jobs.push(Job { query: q, seed, initial });
                }
            }
            Ok(jobs)
        }
        InitialSource::File(path) => {
            let coarse: HashMap<String, Pose> =
                read_pose_file(path)?.into_iter().map(|np| (np.name, np.pose)).collect();
            queries
                .iter()
                .map(|q| {
                    let initial = *coarse.get(&q.name).ok_or_else(|| {
                        Error::Config(format!("{} has no initial pose for query {}", path.display(), q.name))
                    })?;
                    Ok(Job { query: q, seed: 0, initial })
                })
                .collect()
        }
    }
}

/// Loads the scene and queries, refines every query from every initial pose
/// and writes the report when an output directory is configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let scene = cfg.scene.load()?;
    let queries = load_queries(cfg, &scene)?;
    run_with(cfg, &scene, &queries, cfg.output_dir.as_deref())
}

/// [`run_experiment`] over an already loaded scene and query set.
pub fn run_with(cfg: &ExperimentConfig, scene: &Scene, queries: &[Query], out: Option<&Path>) -> Result<Report> {
    let jobs = build_jobs(cfg, queries)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for sub in [("comparisons", cfg.emit_images), ("traces", cfg.emit_traces)] {
            if sub.1 {
                let p = dir.join(sub.0);
                std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }

    let rows = jobs
        .par_iter()
        .map(|job| {
            let res =
                refine(scene, &cfg.camera, &job.query.image, &job.initial, &cfg.schedule, cfg.heuristic, &cfg.search)?;
            log::info!(
                "{} seed {}: h {:.4} -> {:.4}, {} expansions ({})",
                job.query.name,
                job.seed,
                res.initial_h,
                res.best_h,
                res.expansions,
                res.terminated_by.name()
            );
            if let Some(dir) = out {
                let stem = format!("{}_s{}", job.query.name, job.seed);
                if cfg.emit_images {
                    let rendered = render_with(scene, &cfg.camera, &res.best_pose, &cfg.search.render);
                    render_comparison(&job.query.image, &rendered)?
                        .save_png(dir.join("comparisons").join(format!("{stem}.png")))?;
                }
                if cfg.emit_traces {
                    let path = dir.join("traces").join(format!("{stem}.jsonl"));
                    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                    write_trace_jsonl(std::io::BufWriter::new(file), &res)?;
                }
            }
            Ok(ReportRow {
                name: job.query.name.clone(),
                seed: job.seed,
                init_error: pose_error(&job.initial, &job.query.gt),
                refined_error: pose_error(&res.best_pose, &job.query.gt),
                initial_h: res.initial_h,
                best_h: res.best_h,
                expansions: res.expansions,
                level_expansions: res.per_level.iter().map(|l| l.expansions).collect(),
                renders: res.renders,
                terminated_by: res.terminated_by,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let report = Report::from_rows(cfg.heuristic, rows, (cfg.within[0], cfg.within[1]));
    if let Some(dir) = out {
        report.write_json(dir.join("report.json"))?;
        report.write_csv(dir.join("report.csv"))?;
    }
    Ok(report)
}

/// Runs the experiment once per `[q_scale, t_scale]` pair.
pub fn run_noise_grid(cfg: &ExperimentConfig, grid: &[[f64; 2]]) -> Result<Vec<(SummaryRow, Report)>> {
    cfg.validate()?;
    let scene = cfg.scene.load()?;
    let queries = load_queries(cfg, &scene)?;
    sweep_noise(cfg, &scene, &queries, grid)
}

fn sweep_noise(
    cfg: &ExperimentConfig,
    scene: &Scene,
    queries: &[Query],
    grid: &[[f64; 2]],
) -> Result<Vec<(SummaryRow, Report)>> {
    let mut out = Vec::with_capacity(grid.len());
    for &[q, t] in grid {
        let sub = cfg.with_noise(q, t)?;
        let label = format!("q{q:e}_t{t:e}");
        let dir = cfg.output_dir.as_ref().map(|d| d.join(format!("noise_{label}")));
        let report = run_with(&sub, scene, queries, dir.as_deref())?;
        out.push((SummaryRow::new(label, q, t, &report), report));
    }
    if let Some(dir) = &cfg.output_dir {
        let rows: Vec<SummaryRow> = out.iter().map(|(s, _)| s.clone()).collect();
        write_summary_csv(dir.join("noise_grid.csv"), &rows)?;
    }
    Ok(out)
}

/// Runs the experiment once per heuristic.
pub fn run_ablation(cfg: &ExperimentConfig, kinds: &[HeuristicKind]) -> Result<Vec<(SummaryRow, Report)>> {
    cfg.validate()?;
    let scene = cfg.scene.load()?;
    let queries = load_queries(cfg, &scene)?;
    sweep_heuristics(cfg, &scene, &queries, kinds)
}

fn sweep_heuristics(
    cfg: &ExperimentConfig,
    scene: &Scene,
    queries: &[Query],
    kinds: &[HeuristicKind],
) -> Result<Vec<(SummaryRow, Report)>> {
    let (q, t) = match &cfg.initial {
        InitialSource::Noise(n) => (n.q_scale, n.t_scale),
        InitialSource::File(_) => (0.0, 0.0),
    };
    let mut out = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let mut sub = cfg.clone();
        sub.heuristic = kind;
        let dir = cfg.output_dir.as_ref().map(|d| d.join(format!("ablation_{kind}")));
        let report = run_with(&sub, scene, queries, dir.as_deref())?;
        out.push((SummaryRow::new(kind.to_string(), q, t, &report), report));
    }
    if let Some(dir) = &cfg.output_dir {
        let rows: Vec<SummaryRow> = out.iter().map(|(s, _)| s.clone()).collect();
        write_summary_csv(dir.join("ablation.csv"), &rows)?;
    }
    Ok(out)
}

/// Everything a config asks for: the main report plus any configured sweeps.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: Report,
    pub noise_grid: Vec<SummaryRow>,
    pub ablation: Vec<SummaryRow>,
}

pub fn run_all(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let scene = cfg.scene.load()?;
    let queries = load_queries(cfg, &scene)?;
    let report = run_with(cfg, &scene, &queries, cfg.output_dir.as_deref())?;
    let noise_grid = if cfg.noise_grid.is_empty() {
        Vec::new()
    } else {
        sweep_noise(cfg, &scene, &queries, &cfg.noise_grid)?.into_iter().map(|(s, _)| s).collect()
    };
    let ablation = if cfg.ablation.is_empty() {
        Vec::new()
    } else {
        sweep_heuristics(cfg, &scene, &queries, &cfg.ablation)?.into_iter().map(|(s, _)| s).collect()
    };
    Ok(ExperimentOutput { report, noise_grid, ablation })
}

/// Side-by-side view split along the main diagonal: the rendered image below
/// it, the query above, and a 1-pixel white line on it.
pub fn render_comparison(query: &ImageBuffer, rendered: &ImageBuffer) -> Result<ImageBuffer> {
    if query.dims() != rendered.dims() {
        return Err(Error::Contract(format!(
            "comparison needs equal sizes, got {:?} and {:?}",
            query.dims(),
            rendered.dims()
        )));
    }
    let (w, h) = query.dims();
    let mut out = query.clone();
    for y in 0..h {
        let diag = diagonal_column(y, w, h);
        for x in 0..w {
            match x.cmp(&diag) {
                std::cmp::Ordering::Less => out.set_pixel(x, y, rendered.pixel(x, y)),
                std::cmp::Ordering::Equal => out.set_pixel(x, y, [1.0; 3]),
                std::cmp::Ordering::Greater => {}
            }
        }
    }
    Ok(out)
}

/// Column of the diagonal from the top-left to the bottom-right corner in row `y`.
fn diagonal_column(y: usize, w: usize, h: usize) -> usize {
    if h <= 1 {
        return 0;
    }
    (2 * y * (w - 1) + (h - 1)) / (2 * (h - 1))
}

/// Formats a translation error, converting to centimeters when a metric scale is known.
pub fn format_translation(value: f64, metric_scale: Option<f64>) -> String {
    match metric_scale {
        Some(s) => format!("{:.3} cm", value * s * 100.0),
        None => format!("{value:.5}"),
    }
}
