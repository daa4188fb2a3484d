use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mcdma::error::Error;
use mcdma::par::with_threads;
use mcdma::sweep::{self, Format, OracleRecord, SweepConfig};

#[derive(Parser)]
#[command(name = "mcdma", version, about = "Replica fixed points and spectral efficiency of MIMO-CDMA channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<OutFormat>,

    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override a config field, e.g. `--set base.beta=2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep one parameter over the configured grid.
    Sweep,
    /// All branches at the base point.
    Solve,
    /// Finite-size Monte Carlo at the base point.
    Oracle,
    /// Run the invariant suite.
    Selfcheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

const EXIT_FAILURE: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_CONFIG: u8 = 3;

enum Failure {
    Config(String),
    Solver(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::InvalidParams(_)
            | Error::InvalidDistribution(_)
            | Error::InvalidQamOrder(_)
            | Error::NonPositive { .. }
            | Error::Dimension(_)
            | Error::Json(_) => Failure::Config(e.to_string()),
            Error::NonConvergence { .. } | Error::NoBranch { .. } | Error::ResidualTooLarge { .. } => {
                Failure::Solver(e.to_string())
            }
            Error::Io(_) => Failure::Other(e.to_string()),
        }
    }
}

fn load(cli: &Cli) -> Result<SweepConfig, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config <path> is required".into()))?;
    let mut cfg = SweepConfig::load(path)?.with_overrides(&cli.sets)?;
    if let Some(f) = cli.format {
        cfg.format = f.into();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_out(text: &str, path: Option<&Path>) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Other(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Other(e.to_string())),
    }
}

fn run_sweep(cli: &Cli) -> Result<u8, Failure> {
    let mut cfg = load(cli)?;
    if cli.out.is_some() {
        cfg.outputs.table = cli.out.clone();
    }
    let run = sweep::run_sweep(&cfg)?;
    write_out(&sweep::render(&run.rows, cfg.format)?, cfg.outputs.table.as_deref())?;
    if !run.oracle.is_empty() {
        match &cfg.outputs.oracle {
            Some(p) => write_out(&sweep::render_oracle(&run.oracle, cfg.format)?, Some(p))?,
            None => log::warn!("oracle records computed but outputs.oracle is not set"),
        }
    }
    for row in run.rows.iter().filter(|r| !r.converged) {
        log::warn!("no converged branch at axis value {}", row.axis_value);
    }
    Ok(if run.failures > 0 { EXIT_SOLVER } else { 0 })
}

fn run_solve(cli: &Cli) -> Result<u8, Failure> {
    let cfg = load(cli)?;
    let rows = sweep::solve_rows(&cfg)?;
    write_out(&sweep::render(&rows, cfg.format)?, cli.out.as_deref().or(cfg.outputs.table.as_deref()))?;
    Ok(0)
}

fn run_oracle(cli: &Cli) -> Result<u8, Failure> {
    let cfg = load(cli)?;
    cfg.validate()?;
    let o = cfg
        .oracle
        .as_ref()
        .ok_or_else(|| Failure::Config("config has no oracle section".into()))?;
    let axis_value = cfg.base.snr_db;
    let mut rec = OracleRecord {
        grid_index: 0,
        axis_value,
        first_seed: cfg.seed,
        dims: o.dims,
        input: o.input,
        sigma2: cfg.base.sigma2(),
        stats: None,
        reference: None,
        error: None,
    };
    let code = match sweep::oracle_point(&cfg.base, o, &cfg.solver, cfg.seed, cfg.execution) {
        Ok((stats, reference)) => {
            rec.stats = Some(stats);
            rec.reference = reference;
            0
        }
        Err(e @ Error::Dimension(_)) => return Err(Failure::Config(e.to_string())),
        Err(e) => {
            rec.error = Some(e.to_string());
            EXIT_SOLVER
        }
    };
    let out = cli.out.as_deref().or(cfg.outputs.oracle.as_deref());
    write_out(&sweep::render_oracle(&[rec], cfg.format)?, out)?;
    Ok(code)
}

fn run_selfcheck(cli: &Cli) -> Result<u8, Failure> {
    let format = match (cli.format, &cli.config) {
        (Some(f), _) => f.into(),
        (None, Some(_)) => load(cli)?.format,
        (None, None) => Format::Csv,
    };
    let exec = match &cli.config {
        Some(_) => load(cli)?.execution,
        None => Default::default(),
    };
    let checks = sweep::selfcheck(exec, cli.seed.unwrap_or(0))?;
    let text = match format {
        Format::Csv => sweep::checks_to_csv(&checks)?,
        Format::Json => serde_json::to_string_pretty(&checks).map_err(|e| Failure::Other(e.to_string()))? + "\n",
    };
    write_out(&text, cli.out.as_deref())?;
    for c in checks.iter().filter(|c| !c.passed) {
        log::error!("check {} failed: {} > {}", c.name, c.value, c.threshold);
    }
    Ok(if checks.iter().all(|c| c.passed) { 0 } else { EXIT_FAILURE })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(EXIT_CONFIG);
    }
    let result = with_threads(cli.threads, || match cli.command {
        Command::Sweep => run_sweep(&cli),
        Command::Solve => run_solve(&cli),
        Command::Oracle => run_oracle(&cli),
        Command::Selfcheck => run_selfcheck(&cli),
    });
    let result = match result {
        Ok(r) => r,
        Err(e) => Err(Failure::from(e)),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver failure: {m}");
            ExitCode::from(EXIT_SOLVER)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
