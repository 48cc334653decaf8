use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tfddp::problem::{ModelKind, ProblemConfig};
use tfddp_cli::commands::{
    bench_derivs, default_trials_config, load_config, parse_backends, parse_modes, parse_n_range, run_solve,
    sweep_dof, trials, trials_csv, write_file, BenchDerivsArgs, CliError, SweepArgs,
};
use tfddp_cli::record::{write_bench, BenchRecord};

#[derive(Parser)]
#[command(name = "tfddp", version, about = "Trajectory optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time the dynamics derivatives of each backend against the DoF.
    BenchDerivs(BenchDerivsCmd),
    /// Solve one optimal control problem from a config file.
    Solve(SolveCmd),
    /// Solve the pendubot swing-up for a range of link counts.
    SweepDof(SweepCmd),
    /// Compare iLQR and DDP over randomized initial guesses.
    Trials(TrialsCmd),
}

#[derive(Args)]
struct Output {
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchDerivsCmd {
    /// Link counts: `7`, `2,4,6`, `2..12` or `2..12:2`.
    #[arg(long, default_value = "2..12:2")]
    n: String,
    /// Backends, comma separated, or `all`.
    #[arg(long, default_value = "all")]
    backend: String,
    /// Timed repetitions per measurement (after one warmup).
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SolveCmd {
    /// Problem config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's mode (`ilqr` or `ddp`).
    #[arg(long)]
    mode: Option<String>,
    /// Override the config's derivative backend.
    #[arg(long)]
    backend: Option<String>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the pendubot link count.
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    output: Output,
    /// Convergence log path; defaults to `<out>_log.csv` next to `--out`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct SweepCmd {
    #[arg(long, default_value = "2..12:2")]
    n: String,
    /// Modes, comma separated, or `both`.
    #[arg(long, default_value = "both")]
    mode: String,
    #[arg(long, default_value = "all")]
    backend: String,
    /// Problem template; the pendubot swing-up defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct TrialsCmd {
    /// Problem config; the 7-link arm with OU controls when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of trials.
    #[arg(long, default_value_t = 40)]
    count: usize,
    /// Base seed; trial i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// DDP backend; iLQR uses its first-order counterpart.
    #[arg(long)]
    backend: Option<String>,
    #[command(flatten)]
    output: Output,
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, text),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn bench_text(records: &[BenchRecord]) -> String {
    let mut buf = Vec::new();
    write_bench(&mut buf, records).expect("in-memory csv");
    String::from_utf8(buf).expect("utf-8")
}

fn default_log_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_log.csv"))
}

fn single_backend(s: &str) -> Result<tfddp::derivs::Backend, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::BenchDerivs(c) => {
            let args = BenchDerivsArgs {
                ns: parse_n_range(&c.n)?,
                backends: parse_backends(&c.backend)?,
                reps: c.reps,
                seed: c.seed,
            };
            emit(&c.output.out, &bench_text(&bench_derivs(&args)?))
        }
        Command::Solve(c) => {
            let mut cfg = load_config(&c.config)?;
            if let Some(m) = &c.mode {
                cfg.mode = m.parse().map_err(CliError::Usage)?;
            }
            if let Some(b) = &c.backend {
                cfg.backend = single_backend(b)?;
            }
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            if let Some(n) = c.n {
                if cfg.model != ModelKind::Pendubot {
                    return Err(CliError::Usage("--n applies to model = pendubot only".into()));
                }
                cfg.links = n;
            }
            let out = run_solve(&cfg)?;
            emit(&c.output.out, &out.trajectory_csv)?;
            let log = c.log.or_else(|| c.output.out.as_deref().map(default_log_path));
            if let Some(log) = log {
                write_file(&log, &out.log_csv)?;
            }
            let r = &out.report;
            eprintln!(
                "{} after {} iterations: cost {} (initial {})",
                if r.converged() { "converged" } else { "not converged" },
                r.iterations,
                r.final_cost(),
                r.initial_cost
            );
            if !r.converged() {
                return Err(CliError::NotConverged(format!("solver stopped without converging ({:?})", r.status)));
            }
            Ok(())
        }
        Command::SweepDof(c) => {
            let mut base = match &c.config {
                Some(p) => load_config(p)?,
                None => ProblemConfig::default(),
            };
            if let Some(s) = c.seed {
                base.seed = s;
            }
            let args = SweepArgs {
                ns: parse_n_range(&c.n)?,
                modes: parse_modes(&c.mode)?,
                backends: parse_backends(&c.backend)?,
                base,
            };
            emit(&c.output.out, &bench_text(&sweep_dof(&args)?))
        }
        Command::Trials(c) => {
            let mut base = match &c.config {
                Some(p) => load_config(p)?,
                None => default_trials_config(),
            };
            if let Some(b) = &c.backend {
                base.backend = single_backend(b)?;
            }
            let result = trials(&base, c.count, c.seed)?;
            for (metric, value) in &result.summary {
                eprintln!("{metric}: {value}");
            }
            emit(&c.output.out, &trials_csv(&result))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
