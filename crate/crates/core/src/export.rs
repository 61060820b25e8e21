//! Writing experiment runs to disk.
//!
//! Layout under the output directory:
//!
//! ```text
//! trials.csv        one row per trial
//! summary.json      per-goal and overall aggregates
//! quantiles.csv     five-number summaries of the completed-trial metrics
//! trajectories/     set{S}_goal{GG}.jsonl, decimated hand paths
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::experiment::{box_stats, ExperimentRun, Goal, SetSummary, TrialResult};
use crate::tracking::TrackingError;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
}

pub const TRIALS_CSV: &str = "trials.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const QUANTILES_CSV: &str = "quantiles.csv";
pub const TRAJECTORY_DIR: &str = "trajectories";

#[derive(Debug, Serialize)]
struct TrialRow {
    goal_id: u8,
    set: usize,
    completed: bool,
    eps_xyz: f64,
    eps_xy: f64,
    duration: f64,
    seed: u64,
}

impl From<&TrialResult> for TrialRow {
    fn from(r: &TrialResult) -> Self {
        Self {
            goal_id: r.config.goal_id,
            set: r.config.set,
            completed: r.metrics.completed,
            eps_xyz: r.metrics.eps_xyz,
            eps_xy: r.metrics.eps_xy,
            duration: r.metrics.duration,
            seed: r.config.seed,
        }
    }
}

pub fn write_trials_csv<W: Write>(results: &[TrialResult], w: W) -> Result<(), ExportError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in results {
        wr.serialize(TrialRow::from(r))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_summary_json<W: Write>(summary: &SetSummary, w: W) -> Result<(), ExportError> {
    serde_json::to_writer_pretty(w, summary)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct QuantileRow {
    metric: &'static str,
    /// Goal id, or `all`.
    goal: String,
    n: usize,
    min: f64,
    q1: f64,
    median: f64,
    q3: f64,
    max: f64,
}

/// Five-number summaries of eps_xyz, eps_xy and duration over completed
/// trials, per goal and overall. Goals with no completed trial are omitted.
pub fn write_quantiles_csv<W: Write>(goals: &[Goal], results: &[TrialResult], w: W) -> Result<(), ExportError> {
    let metrics: [(&'static str, fn(&TrialResult) -> f64); 3] = [
        ("eps_xyz", |r| r.metrics.eps_xyz),
        ("eps_xy", |r| r.metrics.eps_xy),
        ("duration", |r| r.metrics.duration),
    ];
    let mut wr = csv::Writer::from_writer(w);
    for (name, f) in metrics {
        let groups = goals
            .iter()
            .map(|g| (g.id.to_string(), Some(g.id)))
            .chain(std::iter::once(("all".to_string(), None)));
        for (label, id) in groups {
            let values: Vec<f64> = results
                .iter()
                .filter(|r| r.metrics.completed && id.is_none_or(|id| r.config.goal_id == id))
                .map(f)
                .collect();
            if let Some(b) = box_stats(&values) {
                wr.serialize(QuantileRow {
                    metric: name,
                    goal: label,
                    n: b.n,
                    min: b.min,
                    q1: b.q1,
                    median: b.median,
                    q3: b.q3,
                    max: b.max,
                })?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn trajectory_file_name(set: usize, goal_id: u8) -> String {
    format!("set{set}_goal{goal_id:02}.jsonl")
}

/// Writes every output file into `dir`, creating it if needed. `stride`
/// keeps every n-th trajectory sample (the last one is always kept).
pub fn export_run(run: &ExperimentRun, goals: &[Goal], dir: &Path, stride: usize) -> Result<(), ExportError> {
    fs::create_dir_all(dir.join(TRAJECTORY_DIR))?;
    write_trials_csv(&run.results, BufWriter::new(File::create(dir.join(TRIALS_CSV))?))?;
    let mut summary = BufWriter::new(File::create(dir.join(SUMMARY_JSON))?);
    write_summary_json(&run.summary, &mut summary)?;
    summary.flush()?;
    write_quantiles_csv(goals, &run.results, BufWriter::new(File::create(dir.join(QUANTILES_CSV))?))?;
    for r in &run.results {
        let path = dir.join(TRAJECTORY_DIR).join(trajectory_file_name(r.config.set, r.config.goal_id));
        let mut w = BufWriter::new(File::create(path)?);
        r.trajectory.write_jsonl(&r.trajectory.decimated(stride), &mut w)?;
        w.flush()?;
    }
    Ok(())
}
