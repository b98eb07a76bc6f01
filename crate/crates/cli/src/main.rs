//! `coopoptics`: runs one scenario from a JSON config and writes CSV/JSON
//! outputs plus a run manifest.
//!
//! Exit codes: 0 ok, 1 I/O failure, 2 configuration error, 3 numeric failure
//! or failed check.

mod config;
mod output;
mod scenarios;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use crate::output::{sha256_hex, Manifest, OutputFile, Outputs, Versions};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String, bool),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<coopoptics::Error> for CliError {
    fn from(e: coopoptics::Error) -> Self {
        use coopoptics::Error as E;
        let name = format!("{e:?}");
        let name = name.split(['(', ' ', '{']).next().unwrap_or("Error").to_string();
        match e {
            E::Io(e) => CliError::Io(e.to_string()),
            e if e.is_numeric() => CliError::Numeric(format!("numeric failure [{name}]: {e}"), true),
            e => CliError::Numeric(format!("invalid input [{name}]: {e}"), false),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) | CliError::Numeric(_, false) => 2,
            CliError::Numeric(_, true) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "coopoptics", version, about = "Cooperative light scattering from atom arrays")]
struct Args {
    /// Scenario config, or a run manifest to reproduce.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long)]
    threads: Option<usize>,
    /// Single-threaded, no wall time in the manifest.
    #[arg(long)]
    bit_stable: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn run(args: &Args) -> Result<bool, CliError> {
    let start = Instant::now();
    let mut cfg = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    let threads = if args.bit_stable {
        1
    } else {
        cfg.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;

    let cfg_value = serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let canonical = serde_json::to_vec(&cfg_value).map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = Outputs::new(&args.out)?;
    let status = scenarios::run(&cfg, &mut out)?;
    println!("{}", status.summary);

    let manifest = Manifest {
        manifest_version: 1,
        scenario: cfg_value["scenario"].as_str().unwrap_or_default().to_string(),
        config_sha256: sha256_hex(&canonical),
        seed: cfg.seed,
        threads,
        bit_stable: args.bit_stable,
        versions: Versions { coopoptics: coopoptics::VERSION, cli: env!("CARGO_PKG_VERSION") },
        wall_time_s: (!args.bit_stable).then(|| start.elapsed().as_secs_f64()),
        status: status.summary.clone(),
        config: cfg_value,
        outputs: out.digests()?.into_iter().map(|(file, sha256)| OutputFile { file, sha256 }).collect(),
    };
    let path = out.dir().join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(status.passed)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
