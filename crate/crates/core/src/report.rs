//! CSV output for experiments and sweeps.
//!
//! Files are staged under temporary names in the output directory and renamed
//! into place only after every file was written, so a failed run leaves no
//! partial output behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{ExperimentResult, SweepResult, TrajectoryRow};

pub const EPISODES_FILE: &str = "episodes.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const QTABLE_FILE: &str = "qtable.csv";
pub const TRAJECTORY_DIR: &str = "trajectories";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRow {
    pub sweep: String,
    pub grid_point: String,
    pub repeat: usize,
    pub episode: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub sweep: String,
    pub grid_point: String,
    pub n_repeats: usize,
    pub n_episodes: usize,
    pub mean_final_smoothed_length: Option<f64>,
    pub seconds_per_step: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub sweep: String,
    pub grid_point: String,
    pub episode: usize,
    pub avg_smoothed_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TrajectoryCsvRow {
    t: f64,
    x: f64,
    x_dot: f64,
    theta: f64,
    theta_dot: f64,
    f: f64,
    reward: f64,
    done: bool,
}

impl From<&TrajectoryRow> for TrajectoryCsvRow {
    fn from(r: &TrajectoryRow) -> Self {
        let o = |i: usize| r.observation.get(i).copied().unwrap_or(f64::NAN);
        Self {
            t: r.t,
            x: o(0),
            x_dot: o(1),
            theta: o(2),
            theta_dot: o(3),
            f: r.inputs.first().copied().unwrap_or(0.0),
            reward: r.reward,
            done: r.done,
        }
    }
}

/// Accumulated rows for one output directory.
#[derive(Debug, Default, Clone)]
pub struct Report {
    pub episodes: Vec<EpisodeRow>,
    pub summary: Vec<SummaryRow>,
    pub curves: Vec<CurveRow>,
    trajectories: Vec<(String, Vec<TrajectoryCsvRow>)>,
    extra: Vec<(String, Vec<u8>)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds episode lengths, the summary line, the smoothed curve and any
    /// recorded trajectories of `result`.
    pub fn add_experiment(&mut self, sweep: &str, grid_point: &str, result: &ExperimentResult) {
        for (repeat, row) in result.lengths.iter().enumerate() {
            for (i, &length) in row.iter().enumerate() {
                self.episodes.push(EpisodeRow {
                    sweep: sweep.into(),
                    grid_point: grid_point.into(),
                    repeat,
                    episode: i + 1,
                    length,
                });
            }
        }
        let curve = result.average_smoothed().unwrap_or_default();
        self.summary.push(SummaryRow {
            sweep: sweep.into(),
            grid_point: grid_point.into(),
            n_repeats: result.lengths.len(),
            n_episodes: result.spec.n_episodes,
            mean_final_smoothed_length: curve.last().copied(),
            seconds_per_step: result.per_step_time().ok(),
            wall_time_s: result.wall_time(),
        });
        for (i, v) in curve.into_iter().enumerate() {
            self.curves.push(CurveRow {
                sweep: sweep.into(),
                grid_point: grid_point.into(),
                episode: i + 1,
                avg_smoothed_length: v,
            });
        }
        for (repeat, episodes) in result.trajectories.iter().enumerate() {
            for (i, rows) in episodes.iter().enumerate() {
                let name = format!(
                    "{}_{}_r{repeat}_e{}.csv",
                    sanitize(sweep),
                    sanitize(grid_point),
                    i + 1
                );
                self.trajectories
                    .push((name, rows.iter().map(TrajectoryCsvRow::from).collect()));
            }
        }
    }

    pub fn add_sweep(&mut self, result: &SweepResult) {
        for (label, r) in &result.points {
            self.add_experiment(result.sweep.name(), label, r);
        }
    }

    /// Adds an arbitrary file (e.g. a Q-table dump) to the output set.
    pub fn add_file(&mut self, name: &str, contents: Vec<u8>) {
        self.extra.push((name.into(), contents));
    }

    pub fn trajectory_count(&self) -> usize {
        self.trajectories.len()
    }

    /// Writes every file under `dir`, creating it if needed. Returns the
    /// final paths.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files: Vec<(PathBuf, Vec<u8>)> = vec![
            (dir.join(EPISODES_FILE), to_csv(&self.episodes)?),
            (dir.join(SUMMARY_FILE), to_csv(&self.summary)?),
            (dir.join(CURVES_FILE), to_csv(&self.curves)?),
        ];
        for (name, bytes) in &self.extra {
            files.push((dir.join(name), bytes.clone()));
        }
        if !self.trajectories.is_empty() {
            let tdir = dir.join(TRAJECTORY_DIR);
            fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
            for (name, rows) in &self.trajectories {
                files.push((tdir.join(name), to_csv(rows)?));
            }
        }
        commit(files)
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

fn staging_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Stages every file, then renames all of them into place. On failure every
/// staged or renamed file is removed again.
fn commit(files: Vec<(PathBuf, Vec<u8>)>) -> Result<Vec<PathBuf>> {
    let mut staged = Vec::with_capacity(files.len());
    let result = (|| {
        for (path, bytes) in &files {
            let tmp = staging_path(path);
            staged.push(tmp.clone());
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        let mut done = Vec::with_capacity(files.len());
        for (path, _) in &files {
            if let Err(e) = fs::rename(staging_path(path), path) {
                for p in &done {
                    let _ = fs::remove_file(p);
                }
                return Err(Error::io(path, e));
            }
            done.push(path.clone());
        }
        Ok(done)
    })();
    if result.is_err() {
        for tmp in &staged {
            let _ = fs::remove_file(tmp);
        }
    }
    result
}
