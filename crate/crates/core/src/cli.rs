//! `multieye` command line: simulate, solve, eval, sweep.
//!
//! Exit codes: 0 success, 2 usage or validation, 3 I/O, 4 degenerate motion.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::bench::{run_sweep, BenchError, SweepConfig, SweepKind};
use crate::metrics::{consistency_error, gt_error};
use crate::model::{self, Direction, ModelError, SolutionExtras};
use crate::solver::{relative_extrinsics, solve, SolverError};
use crate::synth::{simulate, NoiseConfig, RigConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "multieye", version, about = "Closed-form joint multi-camera hand-eye calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DirectionArg {
    #[value(alias = "eye_to_base")]
    EyeToBase,
    #[value(alias = "eye_on_hand")]
    EyeOnHand,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::EyeToBase => Direction::EyeToBase,
            DirectionArg::EyeOnHand => Direction::EyeOnHand,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Noise,
    Cameras,
    Measurements,
}

impl From<KindArg> for SweepKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Noise => SweepKind::Noise,
            KindArg::Cameras => SweepKind::Cameras,
            KindArg::Measurements => SweepKind::Measurements,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic rig and its measurement file.
    Simulate {
        #[arg(long, default_value_t = 4)]
        cameras: usize,
        #[arg(long, default_value_t = 40)]
        measurements: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the ground truth (solution format).
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Scatter camera heights instead of a single horizontal plane.
        #[arg(long)]
        non_planar: bool,
    },
    /// Solve a dataset file.
    Solve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the direction stored in the dataset.
        #[arg(long, value_enum)]
        direction: Option<DirectionArg>,
        /// Also report every camera's extrinsics relative to this camera.
        #[arg(long)]
        reference: Option<String>,
    },
    /// Score a solution against a dataset (and optionally ground truth).
    Eval {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Run a Monte Carlo sweep and write CSV.
    Sweep {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated grid replacing the default one.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Record wall-clock solve times (runs serially, output not reproducible).
        #[arg(long)]
        timing: bool,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::Io { .. } => EXIT_IO,
            ModelError::Parse { .. } | ModelError::Validation(_) => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let code = if e.is_degenerate() { EXIT_DEGENERATE } else { EXIT_USAGE };
        Failure { code, message: e.to_string() }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        let code = match e {
            BenchError::Config(_) => EXIT_USAGE,
            BenchError::Io(_) => EXIT_IO,
        };
        Failure { code, message: e.to_string() }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate { cameras, measurements, noise, seed, out: path, gt, non_planar } => {
            cmd_simulate(cameras, measurements, noise, seed, &path, gt.as_deref(), !non_planar, out)
        }
        Command::Solve { input, out: path, direction, reference } => {
            cmd_solve(&input, &path, direction.map(Into::into), reference.as_deref(), out)
        }
        Command::Eval { problem, solution, gt } => cmd_eval(&problem, &solution, gt.as_deref(), out),
        Command::Sweep { kind, trials, seed, out: path, grid, timing } => {
            cmd_sweep(kind.into(), trials, seed, &path, grid, timing, out, err)
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    cameras: usize,
    measurements: usize,
    noise: f64,
    seed: u64,
    path: &std::path::Path,
    gt_path: Option<&std::path::Path>,
    planar: bool,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let rig = RigConfig { camera_count: cameras, planar, seed, ..RigConfig::default() };
    rig.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let noise_cfg = NoiseConfig { ratio: noise, seed: crate::synth::derive_seed(seed, &[2]) };
    noise_cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    if measurements < model::MIN_MEASUREMENTS {
        return Err(Failure::usage(format!(
            "--measurements {measurements} is below the minimum of {}",
            model::MIN_MEASUREMENTS
        )));
    }
    let (gt, problem) = simulate(&rig, measurements, &noise_cfg);
    model::save_problem(&problem, path)?;
    if let Some(gt_path) = gt_path {
        model::save_ground_truth(&gt, gt_path)?;
    }
    let _ = writeln!(out, "cameras={}", problem.cameras.len());
    let _ = writeln!(out, "pairs={}", problem.pair_count());
    let _ = writeln!(out, "noise={noise}");
    Ok(())
}

fn cmd_solve(
    input: &std::path::Path,
    path: &std::path::Path,
    direction: Option<Direction>,
    reference: Option<&str>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let mut problem = model::load_problem(input)?;
    if let Some(d) = direction {
        problem.direction = d;
    }
    let solution = solve(&problem)?;
    let report = consistency_error(&problem, &solution).map_err(|e| Failure::usage(e.to_string()))?;
    let relative = match reference {
        Some(r) => Some((r.to_string(), relative_extrinsics(&solution, r)?)),
        None => None,
    };
    let extras = SolutionExtras { per_camera_residuals: Some(report.per_camera.clone()), relative };
    model::save_solution_with(&solution, &extras, path)?;
    let d = &solution.diagnostics;
    let _ = writeln!(out, "cameras={}", solution.cameras.len());
    let _ = writeln!(out, "pairs={}", report.n_pairs);
    let _ = writeln!(out, "smallest_singular_value={:e}", d.smallest_singular_value);
    let _ = writeln!(out, "second_smallest_singular_value={:e}", d.second_smallest);
    let _ = writeln!(out, "singular_value_ratio={:e}", d.smallest_singular_value / d.second_smallest);
    let _ = writeln!(out, "e_rot_deg={:.6}", d.rotation_residual_deg);
    let _ = writeln!(out, "e_trans_m={:.6}", d.translation_residual_m);
    Ok(())
}

fn cmd_eval(
    problem_path: &std::path::Path,
    solution_path: &std::path::Path,
    gt_path: Option<&std::path::Path>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let problem = model::load_problem(problem_path)?;
    let loaded = model::load_solution(solution_path)?;
    let mut solution = loaded.solution;
    solution.direction = problem.direction;
    let report = consistency_error(&problem, &solution).map_err(|e| Failure::usage(e.to_string()))?;
    let mut lines = vec![
        format!("e_rot_deg={:.6}", report.e_rot),
        format!("e_trans_m={:.6}", report.e_trans),
        format!("n_pairs={}", report.n_pairs),
    ];
    for (id, (r, t)) in &report.per_camera {
        lines.push(format!("camera.{id}.e_rot_deg={r:.6}"));
        lines.push(format!("camera.{id}.e_trans_m={t:.6}"));
    }
    if let Some(gt_path) = gt_path {
        let gt = model::load_ground_truth(gt_path)?;
        let g = gt_error(&solution, &gt).map_err(|e| Failure::usage(e.to_string()))?;
        lines.push(format!("gt.shared.rot_deg={:.6}", g.shared.0));
        lines.push(format!("gt.shared.trans_m={:.6}", g.shared.1));
        for (id, (r, t)) in &g.per_camera {
            lines.push(format!("gt.camera.{id}.rot_deg={r:.6}"));
            lines.push(format!("gt.camera.{id}.trans_m={t:.6}"));
        }
    }
    for l in lines {
        let _ = writeln!(out, "{l}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    kind: SweepKind,
    trials: usize,
    seed: u64,
    path: &std::path::Path,
    grid: Option<Vec<f64>>,
    timing: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    let mut config = SweepConfig::new(kind, trials, seed);
    config.timing = timing;
    if let Some(g) = grid {
        config.grid = g;
    }
    config.validate()?;
    if trials == 1 {
        let _ = writeln!(err, "warning: --trials 1 gives single-sample averages");
    }
    let report = run_sweep(&config)?;
    report.write_csv(path)?;
    let excluded: usize = report.rows.iter().map(|r| r.excluded).sum::<usize>() / 2;
    let _ = writeln!(out, "rows={}", report.rows.len());
    let _ = writeln!(out, "excluded_trials={excluded}");
    Ok(())
}
