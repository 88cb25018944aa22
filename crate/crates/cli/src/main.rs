//! `mvsde` — experiment driver for tamed Euler/Milstein particle systems.
//!
//! Subcommands. Every experiment is described by a JSON file (see
//! [`config`]); artifacts are CSV.
//!
//! * `simulate` — run one particle system, emit the trajectory table.
//! * `converge` — coupled strong-convergence study across step counts; the
//!   fitted log2-log2 slope goes to stdout.
//! * `validate` — check a model's reported derivatives against central
//!   finite differences.
//! * `moments` — track an empirical moment `(1/N) sum |X^i|^p` along a run.
//! * `chaos` — compare terminal laws across nested population sizes.
//!
//! Exit codes. `0` success; `1` configuration, schema, or usage errors
//! (JSON violations name the line and column); `2` a run left the finite
//! range — the divergence event is printed to stderr as one JSON line with
//! `step`, `time`, and `particle`; `3` a convergence study exceeded its 1%
//! divergence budget; `4` derivative validation failed.
//!
//! Artifacts go to `--out` when given, else to the config's `output.path`,
//! else to stdout. Outputs are deterministic functions of the config file
//! bytes (plus flag overrides); `--threads` changes wall-clock time only,
//! never bytes.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use mvsde::analysis::{
    chaos_study, moment_track, strong_error, validate_model, AnalysisError, ErrorMetric,
};
use mvsde::report::{chaos_csv, convergence_csv, moment_csv, slope_label, trajectory_csv};
use mvsde::scheme::{DivergenceEvent, SimError};
use mvsde::simulate;

use config::{builtin_model, ExperimentConfig, ModelParams};

#[derive(Parser)]
#[command(
    name = "mvsde",
    version,
    about = "Tamed Euler/Milstein simulation of McKean-Vlasov particle systems",
    after_help = "Exit codes: 0 ok, 1 config/usage, 2 divergence (event JSON on stderr), \
                  3 divergence budget exceeded, 4 validation failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the experiment-running subcommands.
#[derive(Args)]
struct Common {
    /// Experiment description (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Artifact destination (overrides the config's output.path; stdout
    /// otherwise).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Worker threads (wall-clock only; results never depend on this).
    #[arg(long, value_name = "INT")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one particle system and emit the trajectory CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run a coupled strong-convergence study and fit the error-vs-h slope.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Diagnostic: drop the measure-derivative Milstein correction.
        #[arg(long)]
        disable_lambda2: bool,
        /// Reduce pathwise errors by their sup over the coarse grid instead
        /// of the terminal distance.
        #[arg(long)]
        sup_error: bool,
    },
    /// Check reported coefficient derivatives against finite differences.
    Validate {
        /// Built-in model name (takes precedence over --config's model).
        #[arg(long, value_name = "NAME")]
        model: Option<String>,
        /// Experiment description; only its model and seed are consulted.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// Finite-difference probe step.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Relative tolerance for a single check.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Probe-point seed.
        #[arg(long, value_name = "INT")]
        seed: Option<u64>,
        /// Worker threads (wall-clock only; results never depend on this).
        #[arg(long, value_name = "INT")]
        threads: Option<usize>,
    },
    /// Track the p-th empirical moment along one run.
    Moments {
        #[command(flatten)]
        common: Common,
        /// Moment order (at least 2).
        #[arg(long, default_value_t = 4.0)]
        p: f64,
    },
    /// Compare terminal empirical laws across nested population sizes.
    Chaos {
        #[command(flatten)]
        common: Common,
        /// Population sizes, increasing, each dividing the next.
        #[arg(
            long,
            value_name = "N1,N2,..",
            value_delimiter = ',',
            default_value = "256,1024,4096"
        )]
        particles: Vec<usize>,
    },
}

impl Command {
    fn threads(&self) -> Option<usize> {
        match self {
            Command::Simulate { common }
            | Command::Converge { common, .. }
            | Command::Moments { common, .. }
            | Command::Chaos { common, .. } => common.threads,
            Command::Validate { threads, .. } => *threads,
        }
    }
}

/// Failure modes, ordered by exit code (1..=4).
#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Divergence(DivergenceEvent),
    #[error("{0}")]
    ExcessiveDivergence(String),
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Divergence(_) => 2,
            CliError::ExcessiveDivergence(_) => 3,
            CliError::Validation(_) => 4,
        }
    }

    fn report_and_exit(self) -> ! {
        let mut stderr = std::io::stderr().lock();
        let _ = match &self {
            // The divergence contract is machine-readable: exactly one JSON
            // line on stderr.
            CliError::Divergence(event) => writeln!(
                stderr,
                "{}",
                serde_json::to_string(event).expect("divergence event serializes")
            ),
            other => writeln!(stderr, "error: {other}"),
        };
        process::exit(self.code())
    }
}

fn usage(err: impl std::fmt::Display) -> CliError {
    CliError::Usage(err.to_string())
}

fn sim_error(err: SimError) -> CliError {
    match err {
        SimError::Divergence(event) => CliError::Divergence(event),
        other => usage(other),
    }
}

fn analysis_error(err: AnalysisError) -> CliError {
    match err {
        AnalysisError::Sim(SimError::Divergence(event)) => CliError::Divergence(event),
        AnalysisError::ExcessiveDivergence { .. } => {
            CliError::ExcessiveDivergence(err.to_string())
        }
        other => usage(other),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help/--version are successful outcomes. Everything else is a
            // usage error and must exit 1: clap's default of 2 would collide
            // with the divergence exit code.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            process::exit(code);
        }
    };
    if let Some(threads) = cli.command.threads() {
        mvsde::configure_threads(threads);
    }
    if let Err(err) = run(cli.command) {
        err.report_and_exit();
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { common } => {
            let config = load(&common.config)?;
            let model = config.model().map_err(usage)?;
            let sim = config.sim_config(common.seed).map_err(usage)?;
            let trajectory = simulate(&model, &sim).map_err(sim_error)?;
            emit(target(&common, &config), &trajectory_csv(&trajectory))
        }
        Command::Converge {
            common,
            disable_lambda2,
            sup_error,
        } => {
            let config = load(&common.config)?;
            let model = config.model().map_err(usage)?;
            let metric = if sup_error {
                ErrorMetric::SupOverGrid
            } else {
                ErrorMetric::Terminal
            };
            let study = config
                .study_config(common.seed, !disable_lambda2, metric)
                .map_err(usage)?;
            let report = strong_error(&model, &study).map_err(analysis_error)?;
            let csv = convergence_csv(&report);
            match target(&common, &config) {
                // File mode still surfaces the headline figure on stdout.
                Some(path) => {
                    write_file(&path, &csv)?;
                    print_out(&format!("slope={}\n", slope_label(&report.rate)))
                }
                // In stdout mode the CSV's trailing `# slope=` line already
                // is the stdout report; a second copy would corrupt the
                // stream for anyone piping it to a file.
                None => emit(None, &csv),
            }
        }
        Command::Validate {
            model,
            config,
            eps,
            tol,
            seed,
            threads: _,
        } => {
            let (name, built, seed) = match (model, config) {
                (Some(name), _) => {
                    let built = builtin_model(&name, &ModelParams::default()).map_err(usage)?;
                    (name, built, seed.unwrap_or(7))
                }
                (None, Some(path)) => {
                    let config = load(&path)?;
                    let built = config.model().map_err(usage)?;
                    (
                        config.model.name.clone(),
                        built,
                        seed.unwrap_or(config.seed),
                    )
                }
                (None, None) => {
                    return Err(CliError::Usage(String::from(
                        "validate needs --model <name> or --config <path>",
                    )))
                }
            };
            let report = validate_model(&built, seed, eps, tol).map_err(analysis_error)?;
            let mut text = format!(
                "model {name}: {} checks, worst error {:e}, tolerance {:e}\n",
                report.checks, report.worst_error, report.tolerance
            );
            if report.passed() {
                text.push_str("all derivative checks passed\n");
                print_out(&text)
            } else {
                for failure in &report.failures {
                    let _ = writeln!(text, "FAIL {failure}");
                }
                print_out(&text)?;
                Err(CliError::Validation(format!(
                    "{} of {} derivative checks failed",
                    report.failures.len(),
                    report.checks
                )))
            }
        }
        Command::Moments { common, p } => {
            let config = load(&common.config)?;
            let model = config.model().map_err(usage)?;
            let sim = config.sim_config(common.seed).map_err(usage)?;
            let trajectory = simulate(&model, &sim).map_err(sim_error)?;
            let rows = moment_track(&trajectory, p).map_err(analysis_error)?;
            emit(target(&common, &config), &moment_csv(&rows))
        }
        Command::Chaos { common, particles } => {
            let config = load(&common.config)?;
            let model = config.model().map_err(usage)?;
            let chaos = config
                .chaos_config(particles, common.seed)
                .map_err(usage)?;
            let report = chaos_study(&model, &chaos).map_err(analysis_error)?;
            emit(target(&common, &config), &chaos_csv(&report))
        }
    }
}

/// Reads and schema-checks the experiment file; parse failures carry
/// `path:line:column:`.
fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|err| CliError::Usage(format!("{}: {err}", path.display())))?;
    config::parse(&text).map_err(|err| CliError::Usage(format!("{}:{err}", path.display())))
}

/// `--out` wins over the config's `output.path`; `None` means stdout.
fn target(common: &Common, config: &ExperimentConfig) -> Option<PathBuf> {
    common
        .out
        .clone()
        .or_else(|| config.output_path().map(PathBuf::from))
}

fn write_file(path: &Path, artifact: &str) -> Result<(), CliError> {
    fs::write(path, artifact).map_err(|err| CliError::Usage(format!("{}: {err}", path.display())))
}

fn emit(target: Option<PathBuf>, artifact: &str) -> Result<(), CliError> {
    match target {
        Some(path) => write_file(&path, artifact),
        None => print_out(artifact),
    }
}

/// Writes to stdout. A consumer that closed the pipe early (e.g. `head`) is
/// not an error: the write is dropped and the run keeps its own exit code.
fn print_out(text: &str) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(err) if err.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(CliError::Usage(format!("stdout: {err}")))
        }
        _ => Ok(()),
    }
}
