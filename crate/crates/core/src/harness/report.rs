use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::HeuristicKind;
use crate::pose::{lower_median, median_of, PoseError};
use crate::search::Termination;

/// One refinement of one query from one initial pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub seed: u64,
    pub init_error: PoseError,
    pub refined_error: PoseError,
    pub initial_h: f64,
    pub best_h: f64,
    pub expansions: usize,
    pub level_expansions: Vec<usize>,
    pub renders: usize,
    pub terminated_by: Termination,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    pub median_init: PoseError,
    pub median_refined: PoseError,
    /// `100 * (1 - refined / init)` on the medians; 0 when the initial median is 0.
    pub translation_improvement_pct: f64,
    pub rotation_improvement_pct: f64,
    pub within_translation: f64,
    pub within_rotation_deg: f64,
    /// Percentage of refined poses within both limits.
    pub ratio_within: f64,
    pub median_expansions: usize,
    pub max_expansions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub heuristic: HeuristicKind,
    pub rows: Vec<ReportRow>,
    pub aggregates: Aggregates,
}

impl Report {
    /// Sorts rows by `(name, seed)` and computes aggregates.
    pub fn from_rows(heuristic: HeuristicKind, mut rows: Vec<ReportRow>, within: (f64, f64)) -> Report {
        rows.sort_by(|a, b| a.name.cmp(&b.name).then(a.seed.cmp(&b.seed)));
        let aggregates = aggregate(&rows, within.0, within.1);
        Report { heuristic, rows, aggregates }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_rows_csv(std::io::BufWriter::new(file), &self.rows).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }
}

/// Percentage of rows whose refined error is within both limits.
pub fn ratio_within(rows: &[ReportRow], t_limit: f64, r_limit_deg: f64) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let n = rows.iter().filter(|r| r.refined_error.within(t_limit, r_limit_deg)).count();
    100.0 * n as f64 / rows.len() as f64
}

/// `100 * (1 - refined / init)`, or 0 when `init` is 0.
pub fn improvement_pct(init: f64, refined: f64) -> f64 {
    if init == 0.0 {
        0.0
    } else {
        100.0 * (1.0 - refined / init)
    }
}

pub fn aggregate(rows: &[ReportRow], t_limit: f64, r_limit_deg: f64) -> Aggregates {
    let init: Vec<PoseError> = rows.iter().map(|r| r.init_error).collect();
    let refined: Vec<PoseError> = rows.iter().map(|r| r.refined_error).collect();
    let median_init = median_of(&init).unwrap_or_default();
    let median_refined = median_of(&refined).unwrap_or_default();
    let exp: Vec<f64> = rows.iter().map(|r| r.expansions as f64).collect();
    Aggregates {
        count: rows.len(),
        median_init,
        median_refined,
        translation_improvement_pct: improvement_pct(median_init.translation_error, median_refined.translation_error),
        rotation_improvement_pct: improvement_pct(median_init.rotation_error, median_refined.rotation_error),
        within_translation: t_limit,
        within_rotation_deg: r_limit_deg,
        ratio_within: ratio_within(rows, t_limit, r_limit_deg),
        median_expansions: lower_median(&exp).unwrap_or(0.0) as usize,
        max_expansions: rows.iter().map(|r| r.expansions).max().unwrap_or(0),
    }
}

/// Fixed CSV layout, one line per row.
pub const CSV_COLUMNS: [&str; 11] = [
    "name",
    "seed",
    "init_t",
    "init_r_deg",
    "refined_t",
    "refined_r_deg",
    "initial_h",
    "best_h",
    "expansions",
    "renders",
    "terminated_by",
];

#[derive(Serialize)]
struct CsvRow<'a> {
    name: &'a str,
    seed: u64,
    init_t: f64,
    init_r_deg: f64,
    refined_t: f64,
    refined_r_deg: f64,
    initial_h: f64,
    best_h: f64,
    expansions: usize,
    renders: usize,
    terminated_by: &'static str,
}

pub fn write_rows_csv(w: impl Write, rows: &[ReportRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(CsvRow {
            name: &r.name,
            seed: r.seed,
            init_t: r.init_error.translation_error,
            init_r_deg: r.init_error.rotation_error,
            refined_t: r.refined_error.translation_error,
            refined_r_deg: r.refined_error.rotation_error,
            initial_h: r.initial_h,
            best_h: r.best_h,
            expansions: r.expansions,
            renders: r.renders,
            terminated_by: r.terminated_by.name(),
        })
        .map_err(csv_error)?;
    }
    csv.flush().map_err(|e| Error::io("<csv>", e))
}

/// One aggregate line of a sweep (noise grid or heuristic ablation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub heuristic: HeuristicKind,
    pub q_scale: f64,
    pub t_scale: f64,
    pub median_init_t: f64,
    pub median_init_r_deg: f64,
    pub median_refined_t: f64,
    pub median_refined_r_deg: f64,
    pub t_improvement_pct: f64,
    pub r_improvement_pct: f64,
    pub ratio_within: f64,
    pub median_expansions: usize,
}

impl SummaryRow {
    pub fn new(label: String, q_scale: f64, t_scale: f64, report: &Report) -> Self {
        let a = &report.aggregates;
        SummaryRow {
            label,
            heuristic: report.heuristic,
            q_scale,
            t_scale,
            median_init_t: a.median_init.translation_error,
            median_init_r_deg: a.median_init.rotation_error,
            median_refined_t: a.median_refined.translation_error,
            median_refined_r_deg: a.median_refined.rotation_error,
            t_improvement_pct: a.translation_improvement_pct,
            r_improvement_pct: a.rotation_improvement_pct,
            ratio_within: a.ratio_within,
            median_expansions: a.median_expansions,
        }
    }
}

pub fn write_summary_csv(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut csv = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for r in rows {
        csv.serialize(r).map_err(csv_error)?;
    }
    csv.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv>", io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}
