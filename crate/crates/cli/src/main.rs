//! `tradeoff`: run verification suites and experiments, write CSV/JSON
//! reports, and exit nonzero when any embedded assertion fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tradeoff_lab::experiments::{run_experiment, run_verify, ExperimentConfig, ExperimentKind, VerifySuite};
use tradeoff_lab::report::{ExperimentReport, OutputFormat};
use tradeoff_lab::{LabError, ToleranceConfig};

/// Default output directory when neither `--out` nor the config sets one.
const OUT_DIR_ENV: &str = "TRADEOFF_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "tradeoff", version, about = "Augmentation tradeoffs in minimum-norm interpolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an invariant suite on seeded random instances.
    Verify {
        /// theorem1, safe-conditions, variance, kovanic, rst or all.
        suite: VerifySuite,
        #[arg(long)]
        seed: u64,
        /// Also write the report to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: OutputFormat,
    },
    /// Run a named experiment from a TOML config.
    Run {
        experiment: ExperimentKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<OutputFormat>,
    },
    /// List experiments with their default parameters.
    List,
}

fn load_config(experiment: ExperimentKind, path: Option<&Path>) -> Result<ExperimentConfig, LabError> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::new(experiment));
    };
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| LabError::Config {
        field: path.display().to_string(),
        message: e.to_string(),
    })?;
    if cfg.experiment != experiment {
        return Err(LabError::Config {
            field: "experiment".into(),
            message: format!("config is for `{}` but `{experiment}` was requested", cfg.experiment),
        });
    }
    Ok(cfg)
}

fn out_dir(flag: Option<PathBuf>, config: Option<PathBuf>) -> PathBuf {
    flag.or(config)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn finish(report: &ExperimentReport, dir: Option<(&Path, OutputFormat)>) -> Result<bool, LabError> {
    print!("{}", report.summary_table());
    if let Some((dir, format)) = dir {
        for path in report.write(dir, format)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(report.all_passed())
}

/// Drops nulls so the value can be printed as TOML.
fn strip_nulls(value: &mut serde_json::Value) {
    if let serde_json::Value::Object(map) = value {
        map.retain(|_, v| !v.is_null());
        map.values_mut().for_each(strip_nulls);
    }
}

fn list() -> Result<bool, LabError> {
    for &kind in ExperimentKind::ALL {
        println!("{kind}: {}", kind.description());
        let mut params = kind.default_params();
        strip_nulls(&mut params);
        let mut table = toml::Table::new();
        table.insert("params".into(), toml::Value::try_from(params).map_err(|e| LabError::Serialize(e.to_string()))?);
        let text = toml::to_string(&table).map_err(|e| LabError::Serialize(e.to_string()))?;
        for line in text.lines() {
            println!("    {line}");
        }
        println!();
    }
    println!("verify suites: {}", VerifySuite::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", "));
    Ok(true)
}

fn run(cli: Cli) -> Result<bool, LabError> {
    match cli.command {
        Command::Verify { suite, seed, out, format } => {
            let report = run_verify(suite, seed, &ToleranceConfig::default())?;
            finish(&report, out.as_deref().map(|d| (d, format)))
        }
        Command::Run { experiment, config, seed, out, format } => {
            let cfg = load_config(experiment, config.as_deref())?;
            let report = run_experiment(&cfg, seed)?;
            let dir = out_dir(out, cfg.out_dir.clone());
            let format = format.or(cfg.format).unwrap_or_default();
            finish(&report, Some((&dir, format)))
        }
        Command::List => list(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
