//! Monte Carlo sweeps comparing the joint solver with per-camera calibration.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::consistency_error;
use crate::model::CalibrationProblem;
use crate::solver::{solve, solve_individually, SolverError};
use crate::synth::{derive_seed, simulate, NoiseConfig, RigConfig, MAX_NOISE_RATIO};

pub const CSV_HEADER: &str = "sweep_value,solver,e_rot_deg,e_trans_m,time_ms,trials,excluded";

pub const JOINT: &str = "joint";
pub const BASELINE: &str = "baseline";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Noise,
    Cameras,
    Measurements,
}

impl SweepKind {
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepKind::Noise => vec![0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30],
            SweepKind::Cameras => vec![1.0, 2.0, 3.0, 4.0],
            SweepKind::Measurements => vec![3.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
        }
    }

    fn tag(self) -> u64 {
        match self {
            SweepKind::Noise => 1,
            SweepKind::Cameras => 2,
            SweepKind::Measurements => 3,
        }
    }
}

/// Settings held fixed while one variable is swept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseSettings {
    pub cameras: usize,
    pub measurements: usize,
    pub noise: f64,
}

impl Default for BaseSettings {
    fn default() -> Self {
        BaseSettings { cameras: 4, measurements: 40, noise: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub grid: Vec<f64>,
    pub trials: usize,
    pub base: BaseSettings,
    pub seed: u64,
    /// Measure wall-clock solve time. Timed sweeps run serially and their
    /// `time_ms` column is not reproducible; untimed sweeps leave it empty.
    pub timing: bool,
}

impl SweepConfig {
    pub fn new(kind: SweepKind, trials: usize, seed: u64) -> Self {
        SweepConfig { kind, grid: kind.default_grid(), trials, base: BaseSettings::default(), seed, timing: false }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.grid.is_empty() {
            return Err(BenchError::Config("empty grid".into()));
        }
        if self.trials == 0 {
            return Err(BenchError::Config("trials must be at least 1".into()));
        }
        for &v in &self.grid {
            let ok = match self.kind {
                SweepKind::Noise => (0.0..=MAX_NOISE_RATIO).contains(&v),
                SweepKind::Cameras => v.fract() == 0.0 && (1.0..=4.0).contains(&v),
                SweepKind::Measurements => v.fract() == 0.0 && (3.0..=40.0).contains(&v),
            };
            if !ok {
                return Err(BenchError::Config(format!("grid value {v} out of range for {:?} sweep", self.kind)));
            }
        }
        Ok(())
    }

    fn settings_at(&self, value: f64) -> BaseSettings {
        let mut s = self.base;
        match self.kind {
            SweepKind::Noise => s.noise = value,
            SweepKind::Cameras => s.cameras = value as usize,
            SweepKind::Measurements => s.measurements = value as usize,
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid sweep: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub solver: &'static str,
    pub e_rot_deg: f64,
    pub e_trans_m: f64,
    pub time_ms: Option<f64>,
    /// Trials attempted; the means cover `trials - excluded` of them.
    pub trials: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn row(&self, value: f64, solver: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.sweep_value == value && r.solver == solver)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let time = r.time_ms.map(|t| format!("{t:.4}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.sweep_value, r.solver, r.e_rot_deg, r.e_trans_m, time, r.trials, r.excluded
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), BenchError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

struct TrialOutcome {
    joint: (f64, f64),
    baseline: (f64, f64),
    time_ms: (f64, f64),
}

fn run_trial(config: &SweepConfig, value: f64, trial: usize, timed: bool) -> Option<TrialOutcome> {
    let s = config.settings_at(value);
    let seed = derive_seed(config.seed, &[config.kind.tag(), value.to_bits(), trial as u64]);
    let rig = RigConfig { camera_count: s.cameras, seed, ..RigConfig::default() };
    let noise = NoiseConfig { ratio: s.noise, seed: derive_seed(seed, &[2]) };
    let (_, problem) = simulate(&rig, s.measurements, &noise);

    let t0 = timed.then(Instant::now);
    let joint = solve(&problem).ok()?;
    let t1 = timed.then(Instant::now);
    let baseline = solve_individually(&problem).ok()?;
    let t2 = timed.then(Instant::now);
    let time_ms = match (t0, t1, t2) {
        (Some(a), Some(b), Some(c)) => ((b - a).as_secs_f64() * 1e3, (c - b).as_secs_f64() * 1e3),
        _ => (0.0, 0.0),
    };
    let je = consistency_error(&problem, &joint).ok()?;
    let be = consistency_error(&problem, &baseline).ok()?;
    Some(TrialOutcome { joint: (je.e_rot, je.e_trans), baseline: (be.e_rot, be.e_trans), time_ms })
}

/// Runs every grid value for `config.trials` seeded trials.
///
/// A trial where either solver reports degenerate motion is excluded from
/// both rows and counted in `excluded`.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport, BenchError> {
    config.validate()?;
    let mut grid = config.grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    grid.dedup();
    let mut rows = Vec::with_capacity(2 * grid.len());
    for &value in &grid {
        let outcomes: Vec<Option<TrialOutcome>> = if config.timing {
            (0..config.trials).map(|t| run_trial(config, value, t, true)).collect()
        } else {
            (0..config.trials).into_par_iter().map(|t| run_trial(config, value, t, false)).collect()
        };
        let ok: Vec<&TrialOutcome> = outcomes.iter().flatten().collect();
        let excluded = config.trials - ok.len();
        let n = ok.len().max(1) as f64;
        let mean = |f: &dyn Fn(&TrialOutcome) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|o| f(o)).sum::<f64>() / n
            }
        };
        let timing = |f: &dyn Fn(&TrialOutcome) -> f64| config.timing.then(|| mean(f));
        // Sorted by solver name within a grid value.
        rows.push(SweepRow {
            sweep_value: value,
            solver: BASELINE,
            e_rot_deg: mean(&|o| o.baseline.0),
            e_trans_m: mean(&|o| o.baseline.1),
            time_ms: timing(&|o| o.time_ms.1),
            trials: config.trials,
            excluded,
        });
        rows.push(SweepRow {
            sweep_value: value,
            solver: JOINT,
            e_rot_deg: mean(&|o| o.joint.0),
            e_trans_m: mean(&|o| o.joint.1),
            time_ms: timing(&|o| o.time_ms.0),
            trials: config.trials,
            excluded,
        });
    }
    Ok(SweepReport { kind: config.kind, rows })
}

/// Median wall-clock time of `solve` over `repetitions` runs (at least 10), milliseconds.
pub fn time_solver_with(problem: &CalibrationProblem, repetitions: usize) -> Result<f64, SolverError> {
    let reps = repetitions.max(10);
    // Warm-up also surfaces solver errors before timing.
    solve(problem)?;
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            let out = solve(problem);
            let dt = start.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(out).ok();
            dt
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite durations"));
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 0 { 0.5 * (times[mid - 1] + times[mid]) } else { times[mid] })
}

pub fn time_solver(problem: &CalibrationProblem) -> Result<f64, SolverError> {
    time_solver_with(problem, 11)
}
