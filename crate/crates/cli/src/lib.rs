//! Command implementations behind the `shardba` binary.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use shardba::linear::DampingPolicy;
use shardba::solver::IterationRecord;
use shardba::synthetic::{SyntheticConfig, SyntheticScene};
use shardba::{
    lm_solve, read_bal, BaProblem, MseConvention, Precision, Real, SolverConfig, Termination,
};

pub const REPORT_SCHEMA: u32 = 1;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INPUT: i32 = 2;
    pub const SOLVER: i32 = 3;
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// BAL problem file
    #[arg(long)]
    pub input: PathBuf,
    /// number of workers the observations are split across
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value = "fp64")]
    pub precision: Precision,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub pcg_tol: f64,
    #[arg(long, default_value_t = 500)]
    pub pcg_max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda0: f64,
    /// divide the cost by N observations (`n`) or by 2N residual components (`2n`)
    #[arg(long, default_value = "n")]
    pub mse_convention: MseConvention,
    /// `identity` or `diag-scaled`
    #[arg(long, default_value = "identity")]
    pub damping: DampingPolicy,
    /// write the JSON report here instead of stdout
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// log a progress line every N iterations (0 disables)
    #[arg(long, default_value_t = 1)]
    pub log_every: usize,
}

impl SolveArgs {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            precision: self.precision,
            workers: self.workers,
            max_iterations: self.max_iters,
            pcg_tol: self.pcg_tol,
            pcg_max_iters: self.pcg_max_iters,
            lambda0: self.lambda0,
            damping: self.damping,
            mse_convention: self.mse_convention,
            log_every: self.log_every,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub cameras: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub obs_per_point: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// fraction of the full-scale scene (20000 cameras, 80000 points, 1000
    /// observations per point) used for counts not given explicitly
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// BAL file to write (stdout if omitted)
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl GenerateArgs {
    pub fn config(&self) -> SyntheticConfig {
        let base = SyntheticConfig::scaled(self.scale, self.seed);
        SyntheticConfig {
            cameras: self.cameras.unwrap_or(base.cameras),
            points: self.points.unwrap_or(base.points),
            obs_per_point: self.obs_per_point.unwrap_or(base.obs_per_point),
            seed: self.seed,
        }
    }
}

/// One JSON document per solver run. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub dataset: String,
    pub workers: usize,
    pub precision: Precision,
    pub num_cameras: usize,
    pub num_points: usize,
    pub num_observations: usize,
    pub config: SolverConfig,
    /// absent when the starting state cannot be evaluated
    pub initial_cost: Option<f64>,
    pub final_cost: Option<f64>,
    pub final_mse: Option<f64>,
    pub termination: Option<Termination>,
    pub error: Option<String>,
    pub iterations: Vec<IterationRecord>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Failure of a command together with the exit code it maps to.
#[derive(Debug)]
pub struct CommandError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CommandError {
    fn input(error: impl Into<anyhow::Error>) -> Self {
        CommandError {
            code: exit::INPUT,
            error: error.into(),
        }
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn solve_typed<T: Real>(args: &SolveArgs) -> Result<RunReport, CommandError> {
    let problem: BaProblem<T> = read_bal(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))
        .map_err(CommandError::input)?;
    problem.validate();
    let config = args.config();
    let convention = config.mse_convention;
    let mut report = RunReport {
        schema: REPORT_SCHEMA,
        dataset: dataset_name(&args.input),
        workers: config.workers,
        precision: T::PRECISION,
        num_cameras: problem.num_cameras(),
        num_points: problem.num_points(),
        num_observations: problem.num_observations(),
        config: config.clone(),
        initial_cost: None,
        final_cost: None,
        final_mse: None,
        termination: None,
        error: None,
        iterations: Vec::new(),
    };
    if let Ok(cost) = problem.total_cost() {
        report.initial_cost = Some(cost);
        report.final_cost = Some(cost);
        report.final_mse = Some(convention.apply(cost, problem.num_observations()));
    }
    match lm_solve(&problem, &config) {
        Ok(out) => {
            let state = out.state;
            let cost = state
                .apply_to(&problem)
                .total_cost()
                .expect("accepted states have finite cost");
            report.initial_cost = Some(state.initial_cost);
            report.final_cost = Some(cost);
            report.final_mse = Some(convention.apply(cost, problem.num_observations()));
            report.termination = state.termination;
            report.iterations = state.history;
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    Ok(report)
}

/// Exit code a finished report maps to.
pub fn report_exit_code(report: &RunReport) -> i32 {
    match (report.termination, &report.error) {
        (_, Some(_)) | (Some(Termination::Stalled), _) | (None, _) => exit::SOLVER,
        _ => exit::OK,
    }
}

fn create_output(path: Option<&Path>) -> Result<Box<dyn Write>, CommandError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p)
                .with_context(|| format!("creating {}", p.display()))
                .map_err(CommandError::input)?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

/// Runs the solver and writes the report. The report is written even when
/// the solver fails, so callers get the partial history.
pub fn cmd_solve(args: &SolveArgs) -> Result<(RunReport, i32), CommandError> {
    if args.workers == 0 {
        return Err(CommandError::input(anyhow::anyhow!(
            "--workers must be at least 1"
        )));
    }
    let report = match args.precision {
        Precision::Fp32 => solve_typed::<f32>(args)?,
        Precision::Fp64 => solve_typed::<f64>(args)?,
    };
    let mut out = create_output(args.output.as_deref())?;
    writeln!(out, "{}", report.to_json())
        .and_then(|_| out.flush())
        .context("writing report")
        .map_err(CommandError::input)?;
    let code = report_exit_code(&report);
    Ok((report, code))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<SyntheticConfig, CommandError> {
    let config = args.config();
    let scene = SyntheticScene::generate(config).map_err(CommandError::input)?;
    let out = create_output(args.output.as_deref())?;
    scene
        .write_bal(out)
        .context("writing BAL file")
        .map_err(CommandError::input)?;
    Ok(config)
}
