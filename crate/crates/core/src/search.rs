//! Best-first pose refinement over a quantized pose lattice.
//!
//! Nodes are poses; edges are the 12 single-axis moves from
//! [`crate::pose::neighbors`]. Every newly discovered node is rendered and
//! scored against the query by a [`Heuristic`]. The open list is a binary heap
//! ordered by `f = g_weight * g + h` with insertion order breaking ties; the
//! closed list holds quantized keys of expanded nodes. Each level of the
//! [`StepSchedule`] runs a fresh search seeded at the best pose found so far.

use std::cmp::Ordering;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{heuristic, HeuristicKind, PSNR_CAP};
use crate::pose::{neighbors, Pose, StepLevel, StepSchedule};
use crate::render::{render_with, Camera, ImageBuffer, RenderOptions};
use crate::scene::Scene;

/// Lattice identity of a pose: `round(q_i / rho_q)` then `round(t_i / rho_t)`.
pub type QuantizedKey = [i64; 7];

/// Keys the canonicalized pose components at the given resolutions.
pub fn quantize(p: &Pose, rho_q: f64, rho_t: f64) -> QuantizedKey {
    let q = p.quaternion_wxyz();
    let t = p.translation_xyz();
    let r = |v: f64, rho: f64| (v / rho).round() as i64;
    [r(q[0], rho_q), r(q[1], rho_q), r(q[2], rho_q), r(q[3], rho_q), r(t[0], rho_t), r(t[1], rho_t), r(t[2], rho_t)]
}

/// Quantization resolution for a level: half of each step.
pub fn level_resolution(level: &StepLevel) -> (f64, f64) {
    (level.rot_step / 2.0, level.trans_step / 2.0)
}

/// Scores a rendered candidate against the query.
pub trait Heuristic: Sync {
    fn cost(&self, query: &ImageBuffer, render: &ImageBuffer) -> Result<f64>;

    /// Goal test used when [`Threshold::Auto`] is selected.
    fn default_threshold(&self, query: &ImageBuffer) -> f64;
}

/// `Auto` goal thresholds per heuristic kind.
pub const SAD_THRESHOLD_FRACTION: f64 = 0.005;
pub const PSNR_GOAL_DB: f64 = 50.0;
pub const SSIM_GOAL: f64 = 0.9999;

impl Heuristic for HeuristicKind {
    fn cost(&self, query: &ImageBuffer, render: &ImageBuffer) -> Result<f64> {
        heuristic(*self, query, render)
    }

    fn default_threshold(&self, query: &ImageBuffer) -> f64 {
        match self {
            HeuristicKind::Sad => SAD_THRESHOLD_FRACTION * query.sum(),
            HeuristicKind::Psnr => PSNR_CAP - PSNR_GOAL_DB,
            HeuristicKind::Ssim => 1.0 - SSIM_GOAL,
        }
    }
}

/// Goal test: the search stops once the best `h` drops strictly below it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Heuristic-specific default (0.5% of query intensity for SAD).
    #[default]
    Auto,
    Absolute(f64),
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    /// Weight on path cost in `f = g_weight * g + h`; zero is greedy best-first.
    pub g_weight: f64,
    pub h_threshold: Threshold,
    /// A level ends after this many consecutive expansions without a new best `h`.
    pub stagnation_limit: Option<usize>,
    /// Cap on expansions across all levels.
    pub max_expansions: usize,
    /// Render and compare at `1 / decimation` resolution during the search.
    pub decimation: usize,
    pub render: RenderOptions,
    /// Keep the open-list event log in the result.
    pub record_events: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            g_weight: 0.0,
            h_threshold: Threshold::Auto,
            stagnation_limit: Some(DEFAULT_STAGNATION_LIMIT),
            max_expansions: 400,
            decimation: 1,
            render: RenderOptions::default(),
            record_events: false,
        }
    }
}

pub const DEFAULT_STAGNATION_LIMIT: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Budget,
    HThreshold,
    Stagnation,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Budget => "budget",
            Termination::HThreshold => "h_threshold",
            Termination::Stagnation => "stagnation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub expansions: usize,
    pub best_h: f64,
    pub terminated_by: Termination,
}

/// One popped-and-expanded node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Global pop index across all levels.
    pub seq: usize,
    pub level: usize,
    pub key: QuantizedKey,
    pub g: u32,
    pub h: f64,
    pub f: f64,
    pub parent: Option<QuantizedKey>,
    pub insertion_seq: u64,
}

/// Open-list operations, in the order they happened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SearchEvent {
    Push { level: usize, key: QuantizedKey, f: f64, insertion_seq: u64 },
    Update { level: usize, key: QuantizedKey, f: f64 },
    Pop { level: usize, key: QuantizedKey },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementResult {
    pub best_pose: Pose,
    pub best_h: f64,
    pub initial_h: f64,
    pub expansions: usize,
    /// Number of candidate renders scored, including the initial pose.
    pub renders: usize,
    pub per_level: Vec<LevelStats>,
    pub terminated_by: Termination,
    pub trace: Vec<TraceEntry>,
    /// `(h(parent), h(child))` for every discovered lattice edge.
    pub edges: Vec<(f64, f64)>,
    pub events: Vec<SearchEvent>,
}

/// `(key, g, h, f)` of every expanded node, in pop order.
pub fn expansion_trace(result: &RefinementResult) -> Vec<(QuantizedKey, u32, f64, f64)> {
    result.trace.iter().map(|t| (t.key, t.g, t.h, t.f)).collect()
}

/// Writes the trace as JSON lines `{seq, level, key, g, h, f}`.
pub fn write_trace_jsonl(mut w: impl Write, result: &RefinementResult) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        seq: usize,
        level: usize,
        key: &'a QuantizedKey,
        g: u32,
        h: f64,
        f: f64,
    }
    for t in &result.trace {
        serde_json::to_writer(&mut w, &Line { seq: t.seq, level: t.level, key: &t.key, g: t.g, h: t.h, f: t.f })?;
        w.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}

/// Empirical check of `h(n) <= c(n, n') + h(n')` over discovered edges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub edges: usize,
    pub violations: usize,
    pub violation_rate: f64,
}

pub fn consistency_report(result: &RefinementResult, edge_cost: f64) -> ConsistencyReport {
    let violations = result.edges.iter().filter(|(hp, hc)| *hp > edge_cost + *hc).count();
    let edges = result.edges.len();
    ConsistencyReport {
        edges,
        violations,
        violation_rate: if edges == 0 { 0.0 } else { violations as f64 / edges as f64 },
    }
}

struct Node {
    pose: Pose,
    g: u32,
    h: f64,
    f: f64,
    parent: Option<QuantizedKey>,
    insertion_seq: u64,
    closed: bool,
}

struct OpenEntry {
    f: f64,
    insertion_seq: u64,
    key: QuantizedKey,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    // Reversed so the max-heap pops the smallest (f, insertion_seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.insertion_seq.cmp(&self.insertion_seq))
    }
}

/// Renders candidates and scores them against the query.
struct Evaluator<'a> {
    scene: &'a Scene,
    cam: Camera,
    query: &'a ImageBuffer,
    heuristic: &'a dyn Heuristic,
    render: RenderOptions,
}

impl Evaluator<'_> {
    fn score(&self, pose: &Pose) -> Result<f64> {
        let img = render_with(self.scene, &self.cam, pose, &self.render);
        self.heuristic.cost(self.query, &img)
    }

    fn score_all(&self, poses: &[Pose]) -> Result<Vec<f64>> {
        poses.par_iter().map(|p| self.score(p)).collect()
    }
}

pub fn refine(
    scene: &Scene,
    cam: &Camera,
    query: &ImageBuffer,
    initial: &Pose,
    schedule: &StepSchedule,
    kind: HeuristicKind,
    opts: &SearchOptions,
) -> Result<RefinementResult> {
    refine_with(scene, cam, query, initial, schedule, &kind, opts)
}

/// [`refine`] with an arbitrary heuristic.
pub fn refine_with(
    scene: &Scene,
    cam: &Camera,
    query: &ImageBuffer,
    initial: &Pose,
    schedule: &StepSchedule,
    heuristic: &dyn Heuristic,
    opts: &SearchOptions,
) -> Result<RefinementResult> {
    cam.validate()?;
    if query.dims() != (cam.width, cam.height) {
        return Err(Error::Contract(format!(
            "query is {}x{} but camera is {}x{}",
            query.width(),
            query.height(),
            cam.width,
            cam.height
        )));
    }
    if schedule.levels().is_empty() {
        return Err(Error::Config("step schedule has no levels".into()));
    }
    if opts.decimation == 0 {
        return Err(Error::Config("decimation must be at least 1".into()));
    }
    if !opts.g_weight.is_finite() || opts.g_weight < 0.0 {
        return Err(Error::Config(format!("g_weight must be nonnegative, got {}", opts.g_weight)));
    }

    let (search_cam, search_query);
    let query_ref = if opts.decimation > 1 {
        search_query = query.downsample(opts.decimation)?;
        search_cam = cam.downscaled(opts.decimation);
        &search_query
    } else {
        search_cam = *cam;
        query
    };
    let eval = Evaluator { scene, cam: search_cam, query: query_ref, heuristic, render: opts.render };
    let threshold = match opts.h_threshold {
        Threshold::Auto => heuristic.default_threshold(query_ref),
        Threshold::Absolute(v) => v,
        Threshold::Disabled => f64::NEG_INFINITY,
    };

    let initial_h = eval.score(initial)?;
    let mut state = SearchState {
        best_pose: *initial,
        best_h: initial_h,
        expansions: 0,
        renders: 1,
        trace: Vec::new(),
        edges: Vec::new(),
        events: Vec::new(),
    };
    let mut per_level = Vec::with_capacity(schedule.levels().len());
    let mut terminated_by = Termination::Budget;

    for (li, level) in schedule.levels().iter().enumerate() {
        let stats = state.run_level(&eval, li, level, threshold, opts)?;
        log::debug!(
            "level {li}: {} expansions, best h {:.6}, {}",
            stats.expansions,
            stats.best_h,
            stats.terminated_by.name()
        );
        terminated_by = stats.terminated_by;
        per_level.push(stats);
        if terminated_by == Termination::HThreshold || state.expansions >= opts.max_expansions {
            break;
        }
    }

    Ok(RefinementResult {
        best_pose: state.best_pose,
        best_h: state.best_h,
        initial_h,
        expansions: state.expansions,
        renders: state.renders,
        per_level,
        terminated_by,
        trace: state.trace,
        edges: state.edges,
        events: state.events,
    })
}

struct SearchState {
    best_pose: Pose,
    best_h: f64,
    expansions: usize,
    renders: usize,
    trace: Vec<TraceEntry>,
    edges: Vec<(f64, f64)>,
    events: Vec<SearchEvent>,
}

impl SearchState {
    fn run_level(
        &mut self,
        eval: &Evaluator<'_>,
        level_index: usize,
        level: &StepLevel,
        threshold: f64,
        opts: &SearchOptions,
    ) -> Result<LevelStats> {
        let (rho_q, rho_t) = level_resolution(level);
        let mut nodes: HashMap<QuantizedKey, Node> = HashMap::new();
        let mut open = BinaryHeap::new();
        let mut next_seq: u64 = 0;
        let record = opts.record_events;

        let seed_key = quantize(&self.best_pose, rho_q, rho_t);
        nodes.insert(
            seed_key,
            Node {
                pose: self.best_pose,
                g: 0,
                h: self.best_h,
                f: self.best_h,
                parent: None,
                insertion_seq: next_seq,
                closed: false,
            },
        );
        open.push(OpenEntry { f: self.best_h, insertion_seq: next_seq, key: seed_key });
        if record {
            self.events.push(SearchEvent::Push {
                level: level_index,
                key: seed_key,
                f: self.best_h,
                insertion_seq: next_seq,
            });
        }
        next_seq += 1;

        let mut level_expansions = 0;
        let mut since_improvement = 0;
        let terminated_by = loop {
            if self.best_h < threshold {
                break Termination::HThreshold;
            }
            if level_expansions >= level.budget || self.expansions >= opts.max_expansions {
                break Termination::Budget;
            }
            if opts.stagnation_limit.is_some_and(|limit| since_improvement >= limit) {
                break Termination::Stagnation;
            }

            // Pop the smallest live entry; stale heap entries are skipped.
            let Some(key) = std::iter::from_fn(|| open.pop())
                .find(|e| nodes.get(&e.key).is_some_and(|n| !n.closed && n.f == e.f))
                .map(|e| e.key)
            else {
                // The lattice is locally exhausted; nothing left to improve on.
                break Termination::Stagnation;
            };
            let node = nodes.get_mut(&key).expect("open entry has a node");
            node.closed = true;
            let (pose, g, h) = (node.pose, node.g, node.h);
            if record {
                self.events.push(SearchEvent::Pop { level: level_index, key });
            }
            self.trace.push(TraceEntry {
                seq: self.expansions,
                level: level_index,
                key,
                g,
                h,
                f: node.f,
                parent: node.parent,
                insertion_seq: node.insertion_seq,
            });
            self.expansions += 1;
            level_expansions += 1;

            let children = neighbors(&pose, level.rot_step, level.trans_step);
            let keys: Vec<QuantizedKey> = children.iter().map(|c| quantize(c, rho_q, rho_t)).collect();

            // Render every child not yet on either list, in parallel.
            let mut fresh: Vec<usize> = Vec::new();
            for (i, k) in keys.iter().enumerate() {
                if !nodes.contains_key(k) && !keys[..i].contains(k) {
                    fresh.push(i);
                }
            }
            let fresh_poses: Vec<Pose> = fresh.iter().map(|&i| children[i]).collect();
            let scores = eval.score_all(&fresh_poses)?;
            self.renders += scores.len();
            let mut fresh_h: HashMap<QuantizedKey, f64> = HashMap::with_capacity(fresh.len());
            for (&i, &s) in fresh.iter().zip(&scores) {
                fresh_h.insert(keys[i], s);
            }

            let tentative = g + 1;
            let mut improved = false;
            for (child, ckey) in children.iter().zip(&keys) {
                match nodes.entry(*ckey) {
                    Entry::Occupied(mut o) => {
                        let n = o.get_mut();
                        if n.closed || tentative >= n.g {
                            continue;
                        }
                        n.g = tentative;
                        n.parent = Some(key);
                        let f = opts.g_weight * tentative as f64 + n.h;
                        if f != n.f {
                            n.f = f;
                            open.push(OpenEntry { f, insertion_seq: n.insertion_seq, key: *ckey });
                        }
                        if record {
                            self.events.push(SearchEvent::Update { level: level_index, key: *ckey, f: n.f });
                        }
                    }
                    Entry::Vacant(v) => {
                        let ch = fresh_h[ckey];
                        let f = opts.g_weight * tentative as f64 + ch;
                        v.insert(Node {
                            pose: *child,
                            g: tentative,
                            h: ch,
                            f,
                            parent: Some(key),
                            insertion_seq: next_seq,
                            closed: false,
                        });
                        open.push(OpenEntry { f, insertion_seq: next_seq, key: *ckey });
                        if record {
                            self.events.push(SearchEvent::Push {
                                level: level_index,
                                key: *ckey,
                                f,
                                insertion_seq: next_seq,
                            });
                        }
                        next_seq += 1;
                        self.edges.push((h, ch));
                        if ch < self.best_h {
                            self.best_h = ch;
                            self.best_pose = *child;
                            improved = true;
                        }
                    }
                }
            }
            since_improvement = if improved { 0 } else { since_improvement + 1 };
        };

        Ok(LevelStats { level: level_index, expansions: level_expansions, best_h: self.best_h, terminated_by })
    }
}
