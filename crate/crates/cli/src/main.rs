//! `pcapae` command-line driver.
//!
//! Exit status 0 on success, 2 for configuration or missing-input errors,
//! 3 for faults raised while a stage runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use pcapae_core::pipeline::{run_stage, PipelineConfig, Stage};
use pcapae_core::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    Fragment,
    TrainAe,
    Compress,
    TrainAd,
    Evaluate,
    Inject,
    Explain,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Fragment => Stage::Fragment,
            StageArg::TrainAe => Stage::TrainAe,
            StageArg::Compress => Stage::Compress,
            StageArg::TrainAd => Stage::TrainAd,
            StageArg::Evaluate => Stage::Evaluate,
            StageArg::Inject => Stage::Inject,
            StageArg::Explain => Stage::Explain,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pcapae",
    version,
    about = "Autoencoder-based anomaly detection on raw packet captures"
)]
struct Cli {
    #[arg(value_enum)]
    stage: StageArg,
    /// `key=value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["byte", "flow"])]
    mode: Option<String>,
    /// Fragments per sequence window.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_parser = ["if", "lof", "ocsvm", "naive"])]
    detector: Option<String>,
    /// Feed normalized fragments to the detector instead of codes.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the named flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::InvalidParameter(_)
        | Error::MissingArtifact(_)
        | Error::InvalidRule(_)
        | Error::InvalidWindow(_)
        | Error::InsufficientData(_)
        | Error::Locked(_) => 2,
        _ => 3,
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = &cli.mode {
        config.set("mode", m)?;
    }
    if let Some(n) = cli.n {
        config.set("n", &n.to_string())?;
    }
    if let Some(d) = &cli.detector {
        config.set("detector", d)?;
    }
    if cli.raw {
        config.raw = true;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = &cli.out {
        config.out = o.clone();
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
            key: kv.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        config.set(k.trim(), v.trim())?;
    }
    Ok(config)
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("PCAPAE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::Config {
            key: "PCAPAE_THREADS".into(),
            message: format!("expected a positive integer, got `{value}`"),
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = Stage::from(cli.stage);
    let result = configure_threads()
        .and_then(|()| build_config(&cli))
        .and_then(|config| run_stage(stage, &config));
    match result {
        Ok(report) => {
            println!("{}: {}", stage.name(), report.summary);
            for p in &report.written {
                println!("  wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pcapae {}: {e}", stage.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
