//! The four experiment commands, independent of argument parsing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use tfddp::ddp::{solve, Mode, SolveError, SolveReport, Status};
use tfddp::derivs::Backend;
use tfddp::problem::{ConfigError, InitKind, ModelKind, ProblemConfig, SystemDynamics};

use crate::bench::measure;
use crate::record::BenchRecord;

/// Relative tolerance for two final costs to count as the same optimum.
pub const MATCHING_COST_RTOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Solver(#[from] SolveError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::NotConverged(_) | CliError::Solver(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { path, source } => CliError::Io { path, source },
            ConfigError::Solve(e) => CliError::Solver(e),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `7`, `2,4,6`, `2..12` (inclusive) or `2..12:2`.
pub fn parse_n_range(s: &str) -> Result<Vec<usize>, CliError> {
    let num = |t: &str| -> Result<usize, CliError> {
        t.trim().parse().map_err(|_| usage(format!("invalid --n `{s}`: `{t}` is not a count")))
    };
    let ns: Vec<usize> = if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (num(hi)?, num(step)?),
            None => (num(rest)?, 1),
        };
        let lo = num(lo)?;
        if step == 0 || lo > hi {
            return Err(usage(format!("invalid --n `{s}`: empty range")));
        }
        (lo..=hi).step_by(step).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if ns.is_empty() || ns.contains(&0) {
        return Err(usage(format!("invalid --n `{s}`: sizes must be at least 1")));
    }
    Ok(ns)
}

/// Parses `all` or a comma separated list of backend names.
pub fn parse_backends(s: &str) -> Result<Vec<Backend>, CliError> {
    if s.trim() == "all" {
        return Ok(Backend::ALL.to_vec());
    }
    let mut out = Vec::new();
    for t in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let b: Backend = t.parse().map_err(CliError::Usage)?;
        if !out.contains(&b) {
            out.push(b);
        }
    }
    if out.is_empty() {
        return Err(usage("no backends given"));
    }
    Ok(out)
}

/// Parses `both` or a comma separated list of modes.
pub fn parse_modes(s: &str) -> Result<Vec<Mode>, CliError> {
    if s.trim() == "both" {
        return Ok(vec![Mode::Ilqr, Mode::Ddp]);
    }
    let mut out = Vec::new();
    for t in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let m: Mode = t.parse().map_err(CliError::Usage)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(usage("no modes given"));
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<ProblemConfig, CliError> {
    Ok(ProblemConfig::load(path)?)
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Converged => "converged",
        Status::MaxIterations => "max_iterations",
        Status::Stalled => "stalled",
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------- bench-derivs

pub struct BenchDerivsArgs {
    pub ns: Vec<usize>,
    pub backends: Vec<Backend>,
    pub reps: usize,
    pub seed: u64,
}

/// Median derivative time per (n, backend), then one slope row per backend
/// when at least two sizes were timed.
pub fn bench_derivs(args: &BenchDerivsArgs) -> Result<Vec<BenchRecord>, CliError> {
    if args.ns.is_empty() || args.backends.is_empty() {
        return Err(usage("bench-derivs needs at least one n and one backend"));
    }
    if args.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let table = measure(&args.ns, &args.backends, args.reps, args.seed)?;
    let mut rows = Vec::new();
    for (j, &n) in table.ns.iter().enumerate() {
        for (i, b) in table.backends.iter().enumerate() {
            let us = table.seconds[i][j] * 1e6;
            rows.push(BenchRecord::new("bench-derivs", Some(n), b.name(), "median_time", us, "us", args.seed));
        }
    }
    for &b in &table.backends {
        if let Some(s) = table.slope(b) {
            rows.push(BenchRecord::new("bench-derivs", None, b.name(), "loglog_slope", s, "1", args.seed));
        }
    }
    Ok(rows)
}

impl From<tfddp::dynamics::DynError> for CliError {
    fn from(e: tfddp::dynamics::DynError) -> Self {
        CliError::Solver(SolveError::Dynamics(e))
    }
}

// ----------------------------------------------------------------------- solve

pub struct SolveOutcome {
    pub report: SolveReport,
    pub solve_time: f64,
    pub trajectory_csv: String,
    pub log_csv: String,
}

/// Solves the problem described by `cfg` with its own mode, backend and seed.
pub fn run_solve(cfg: &ProblemConfig) -> Result<SolveOutcome, CliError> {
    let problem = cfg.build(cfg.seed)?;
    let u0 = cfg.initial_controls(&problem, cfg.seed)?;
    let start = Instant::now();
    let report = solve(&problem, cfg.mode, &u0, &cfg.solver)?;
    let solve_time = start.elapsed().as_secs_f64();
    let trajectory_csv = trajectory_csv(&report, &problem.dynamics, cfg.h);
    let log_csv = log_csv(&report);
    Ok(SolveOutcome {
        report,
        solve_time,
        trajectory_csv,
        log_csv,
    })
}

/// `t`, state columns, control columns; the terminal knot has no control.
pub fn trajectory_csv(report: &SolveReport, dynamics: &SystemDynamics, h: f64) -> String {
    let traj = &report.trajectory;
    let nx = traj.xs.first().map_or(0, |x| x.len());
    let m = traj.us.first().map_or(0, |u| u.len());
    let mut header = vec!["t".to_string()];
    match dynamics {
        SystemDynamics::Robot(_) => {
            let n = nx / 2;
            header.extend((0..n).map(|i| format!("q{i}")));
            header.extend((0..n).map(|i| format!("qd{i}")));
        }
        SystemDynamics::Linear(_) => header.extend((0..nx).map(|i| format!("x{i}"))),
    }
    header.extend((0..m).map(|j| format!("u{j}")));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory csv");
    for (k, x) in traj.xs.iter().enumerate() {
        let mut row = vec![format!("{}", k as f64 * h)];
        row.extend(x.iter().map(|v| v.to_string()));
        match traj.us.get(k) {
            Some(u) => row.extend(u.iter().map(|v| v.to_string())),
            None => row.extend((0..m).map(|_| String::new())),
        }
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

/// One row per outer iteration; `eps` is empty for rejected iterations.
pub fn log_csv(report: &SolveReport) -> String {
    let mut out = String::from("iter,cost,er,eps,rho,grad_norm,backward_sweeps,gauss_newton\n");
    let _ = writeln!(out, "0,{},,,,,0,false", report.initial_cost);
    for l in &report.log {
        let eps = l.eps.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            l.iter, l.cost, l.er, eps, l.rho, l.grad_norm, l.backward_sweeps, l.gauss_newton
        );
    }
    out
}

// ------------------------------------------------------------------- sweep-dof

pub struct SweepArgs {
    pub ns: Vec<usize>,
    pub modes: Vec<Mode>,
    pub backends: Vec<Backend>,
    /// Problem template; its link count is replaced by each n.
    pub base: ProblemConfig,
}

/// The (mode, backend) cells to run: iLQR uses each backend's first-order
/// method, DDP only the second-order backends. Duplicates are dropped.
pub fn sweep_cells(modes: &[Mode], backends: &[Backend]) -> Vec<(Mode, Backend)> {
    let mut cells = Vec::new();
    for &mode in modes {
        for &b in backends {
            let cell = match mode {
                Mode::Ilqr => (mode, b.first_order()),
                Mode::Ddp if b.is_second_order() => (mode, b),
                Mode::Ddp => continue,
            };
            if !cells.contains(&cell) {
                cells.push(cell);
            }
        }
    }
    cells
}

fn cell_label(mode: Mode, backend: Backend) -> String {
    format!("{}/{}", mode.name(), backend.name())
}

/// Solve time and iteration count of the n-link pendubot swing-up for every
/// cell. Solver failures become `failed` rows and the sweep moves on.
pub fn sweep_dof(args: &SweepArgs) -> Result<Vec<BenchRecord>, CliError> {
    if args.base.model != ModelKind::Pendubot {
        return Err(usage("sweep-dof varies the pendubot link count; the config must use model = pendubot"));
    }
    if args.ns.is_empty() {
        return Err(usage("sweep-dof needs at least one n"));
    }
    let cells = sweep_cells(&args.modes, &args.backends);
    if cells.is_empty() {
        return Err(usage("no (mode, backend) combination to run; ddp needs a second-order backend"));
    }
    let seed = args.base.seed;
    let mut rows = Vec::new();
    for &n in &args.ns {
        for &(mode, backend) in &cells {
            let mut cfg = args.base.clone();
            cfg.links = n;
            cfg.mode = mode;
            cfg.backend = backend;
            let label = cell_label(mode, backend);
            let rec = |metric: &str, value: f64, units: &str| BenchRecord::new("sweep-dof", Some(n), &label, metric, value, units, seed);
            match run_solve(&cfg) {
                Ok(out) => {
                    rows.push(rec("solve_time", out.solve_time, "s"));
                    rows.push(rec("iterations", out.report.iterations as f64, "count"));
                    rows.push(rec("final_cost", out.report.final_cost(), "cost"));
                    rows.push(rec("converged", flag(out.report.converged()), "bool"));
                }
                Err(e @ (CliError::Solver(_) | CliError::Usage(_))) => {
                    eprintln!("sweep-dof: n = {n}, {label}: {e}");
                    rows.push(rec("failed", 1.0, "bool"));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------- trials

pub const TRIALS_HEADER: [&str; 11] = [
    "row",
    "trial",
    "seed",
    "mode",
    "backend",
    "iterations",
    "final_cost",
    "status",
    "solve_time_s",
    "metric",
    "value",
];

/// Default problem for `trials`: the 7-link arm from OU-perturbed controls.
pub fn default_trials_config() -> ProblemConfig {
    ProblemConfig {
        model: ModelKind::Arm7,
        init: InitKind::Ou,
        ..ProblemConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct TrialRun {
    pub trial: usize,
    pub seed: u64,
    pub mode: Mode,
    pub backend: Backend,
    /// `None` when the solver stopped with an error.
    pub iterations: Option<usize>,
    pub final_cost: f64,
    pub status: &'static str,
    pub solve_time: f64,
}

impl TrialRun {
    pub fn converged(&self) -> bool {
        self.status == "converged"
    }
}

#[derive(Clone, Debug)]
pub struct TrialsResult {
    /// iLQR and DDP run per trial, in trial order.
    pub runs: Vec<(TrialRun, TrialRun)>,
    pub summary: Vec<(&'static str, f64)>,
}

impl TrialsResult {
    pub fn summary_value(&self, metric: &str) -> Option<f64> {
        self.summary.iter().find(|(m, _)| *m == metric).map(|&(_, v)| v)
    }
}

fn run_trial(base: &ProblemConfig, trial: usize, seed: u64, mode: Mode, backend: Backend) -> TrialRun {
    let mut cfg = base.clone();
    cfg.mode = mode;
    cfg.backend = backend;
    cfg.seed = seed;
    let mut run = TrialRun {
        trial,
        seed,
        mode,
        backend,
        iterations: None,
        final_cost: f64::NAN,
        status: "failed",
        solve_time: 0.0,
    };
    match run_solve(&cfg) {
        Ok(out) => {
            run.iterations = Some(out.report.iterations);
            run.final_cost = out.report.final_cost();
            run.status = status_name(out.report.status);
            run.solve_time = out.solve_time;
        }
        Err(e) => eprintln!("trials: trial {trial} ({mode}): {e}"),
    }
    run
}

/// Solves `count` randomized problems with iLQR and DDP. Trial `i` draws its
/// OU controls and initial state from `seed + i`.
pub fn trials(base: &ProblemConfig, count: usize, seed: u64) -> Result<TrialsResult, CliError> {
    if count == 0 {
        return Err(usage("trial count must be at least 1"));
    }
    if !base.backend.is_second_order() {
        return Err(usage(format!("trials needs a second-order backend for ddp, got {}", base.backend)));
    }
    // surface config problems once instead of once per trial
    base.build(seed)?;
    let ilqr_backend = base.backend.first_order();
    let runs: Vec<(TrialRun, TrialRun)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            (
                run_trial(base, i, s, Mode::Ilqr, ilqr_backend),
                run_trial(base, i, s, Mode::Ddp, base.backend),
            )
        })
        .collect();

    let both: Vec<(usize, usize)> = runs
        .iter()
        .filter_map(|(a, b)| Some((a.iterations?, b.iterations?)))
        .collect();
    let total = count as f64;
    let mean_ratio = if both.is_empty() {
        f64::NAN
    } else {
        let si: usize = both.iter().map(|p| p.0).sum();
        let sd: usize = both.iter().map(|p| p.1).sum();
        si as f64 / sd as f64
    };
    let more = runs
        .iter()
        .filter(|(a, b)| matches!((a.iterations, b.iterations), (Some(i), Some(d)) if i > d))
        .count();
    let matching = runs
        .iter()
        .filter(|(a, b)| {
            let scale = a.final_cost.abs().max(b.final_cost.abs());
            (a.final_cost - b.final_cost).abs() <= MATCHING_COST_RTOL * scale
        })
        .count();
    let conv = |f: fn(&(TrialRun, TrialRun)) -> bool| runs.iter().filter(|r| f(r)).count() as f64 / total;
    let summary = vec![
        ("trials", total),
        ("mean_iteration_ratio", mean_ratio),
        ("ilqr_more_iterations_fraction", more as f64 / total),
        ("matching_cost_fraction", matching as f64 / total),
        ("ilqr_converged_fraction", conv(|r| r.0.converged())),
        ("ddp_converged_fraction", conv(|r| r.1.converged())),
    ];
    Ok(TrialsResult { runs, summary })
}

pub fn trials_csv(result: &TrialsResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRIALS_HEADER).expect("in-memory csv");
    for (a, b) in &result.runs {
        for r in [a, b] {
            w.write_record([
                "trial".to_string(),
                r.trial.to_string(),
                r.seed.to_string(),
                r.mode.name().to_string(),
                r.backend.name().to_string(),
                r.iterations.map(|i| i.to_string()).unwrap_or_default(),
                r.final_cost.to_string(),
                r.status.to_string(),
                r.solve_time.to_string(),
                String::new(),
                String::new(),
            ])
            .expect("in-memory csv");
        }
    }
    for (metric, value) in &result.summary {
        let mut row = vec![String::new(); TRIALS_HEADER.len()];
        row[0] = "summary".into();
        row[9] = metric.to_string();
        row[10] = value.to_string();
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}
