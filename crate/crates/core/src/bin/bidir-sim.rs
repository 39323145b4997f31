use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use log::{error, info};

use bidir_mimo::harness::{emit_csv_with_metadata, metadata, preset, run_experiment, ExperimentConfig, SchemeSpec, PRESETS};
use bidir_mimo::training::TrainingMode;
use bidir_mimo::Result;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Linear,
    SequentialIpc,
    Thp,
}

impl From<Mode> for TrainingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Linear => TrainingMode::Linear,
            Mode::SequentialIpc => TrainingMode::SequentialIpc,
            Mode::Thp => TrainingMode::Thp,
        }
    }
}

/// Monte Carlo sum-rate experiments for MMSE transceivers with bi-directional training.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// Figure preset (fig5a, fig5b, fig5c, fig6, fig7, fig8, fig9).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Experiment description in JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated SNR grid in dB, replacing the configured one.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path (default: <experiment name>.csv).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Forward-backward iterations for every iterative scheme.
    #[arg(long)]
    rounds: Option<usize>,
    /// Pilot symbols per round for every trained scheme.
    #[arg(long)]
    pilots: Option<usize>,
    /// Downlink training mode for every trained (finite-pilot) scheme.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.preset, &cli.config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => ExperimentConfig::from_json_file(path)?,
        _ => {
            return Err(bidir_mimo::Error::Config(format!(
                "give exactly one of --preset ({}) or --config <file>",
                PRESETS.join(", ")
            )))
        }
    };
    if let Some(snr) = &cli.snr {
        cfg.snr_grid_db = snr.clone();
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(out.clone());
    }
    for scheme in &mut cfg.schemes {
        match scheme {
            SchemeSpec::Iterative {
                label,
                mode,
                rounds,
                pilots,
            }
            | SchemeSpec::Scheduled {
                label,
                mode,
                rounds,
                pilots,
                ..
            } => {
                if let Some(r) = cli.rounds {
                    *rounds = r;
                    *label = None;
                }
                if pilots.is_some() {
                    if let Some(n) = cli.pilots {
                        *pilots = Some(n);
                        *label = None;
                    }
                    if let Some(m) = cli.mode {
                        *mode = m.into();
                        *label = None;
                    }
                }
            }
            SchemeSpec::Simultaneous { label, rounds, .. } | SchemeSpec::Separate { label, rounds, .. } => {
                if let Some(r) = cli.rounds {
                    *rounds = r;
                    *label = None;
                }
            }
            SchemeSpec::Capacity { .. } => {}
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    if cli.dump_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let out = cfg
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", if cfg.name.is_empty() { "results" } else { &cfg.name })));
    let records = run_experiment(&cfg)?;
    emit_csv_with_metadata(&records, &metadata(&cfg, &records)?, &out)?;
    info!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
