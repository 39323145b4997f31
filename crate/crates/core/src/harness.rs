//! Monte Carlo experiment runner, figure presets and CSV output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_channels, ChannelSet, TopologySpec};
use crate::error::{Error, Result};
use crate::filters::{Direction, FilterBank, Init, Kind, Structure};
use crate::mmse::uplink_rx_update;
use crate::objectives::{downlink_mses, mmse_trace_spectrum, uplink_mses, user_sinr_rates};
use crate::optimizer::{capacity_reference, optimize_downlink, optimize_simultaneous, CapacityConfig, OptimizerConfig};
use crate::rng::{derive_seed, stream, Domain};
use crate::training::{bidirectional_train, TrainingConfig, TrainingMode};

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &["fig5a", "fig5b", "fig5c", "fig6", "fig7", "fig8", "fig9"];

/// One curve of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SchemeSpec {
    /// Forward-backward iterations; exact MMSE updates when `pilots` is absent,
    /// least-squares training with `pilots` symbols per round otherwise.
    Iterative {
        #[serde(default)]
        label: Option<String>,
        mode: TrainingMode,
        rounds: usize,
        #[serde(default)]
        pilots: Option<usize>,
    },
    /// Like `Iterative`, but only `active` users drawn uniformly per trial transmit.
    Scheduled {
        #[serde(default)]
        label: Option<String>,
        active: usize,
        mode: TrainingMode,
        rounds: usize,
        #[serde(default)]
        pilots: Option<usize>,
    },
    /// Tied uplink/downlink filters with power normalisation; reports one direction.
    Simultaneous {
        #[serde(default)]
        label: Option<String>,
        kind: Kind,
        rounds: usize,
        report: Direction,
    },
    /// Full-CSI alternating optimisation of one direction.
    Separate {
        #[serde(default)]
        label: Option<String>,
        kind: Kind,
        rounds: usize,
        direction: Direction,
    },
    /// Best-effort rank-one sum-capacity bound (a lower bound on the maximum).
    Capacity {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_restarts")]
        restarts: usize,
        #[serde(default = "default_steps")]
        steps: usize,
    },
}

fn default_restarts() -> usize {
    CapacityConfig::default().restarts
}

fn default_steps() -> usize {
    CapacityConfig::default().steps
}

fn mode_name(mode: TrainingMode) -> &'static str {
    match mode {
        TrainingMode::Linear => "linear",
        TrainingMode::SequentialIpc => "nonlinear-ipc",
        TrainingMode::Thp => "nonlinear",
    }
}

fn kind_name(kind: Kind) -> &'static str {
    match kind {
        Kind::Linear => "linear",
        Kind::Successive => "nonlinear",
    }
}

fn dir_name(d: Direction) -> &'static str {
    match d {
        Direction::Uplink => "uplink",
        Direction::Downlink => "downlink",
    }
}

impl SchemeSpec {
    pub fn label(&self) -> String {
        let pilots = |p: &Option<usize>| p.map(|n| format!("-{n}sym")).unwrap_or_default();
        match self {
            SchemeSpec::Iterative { label: Some(l), .. }
            | SchemeSpec::Scheduled { label: Some(l), .. }
            | SchemeSpec::Simultaneous { label: Some(l), .. }
            | SchemeSpec::Separate { label: Some(l), .. }
            | SchemeSpec::Capacity { label: Some(l), .. } => l.clone(),
            SchemeSpec::Iterative { mode, rounds, pilots: p, .. } => {
                format!("{}-{rounds}it{}", mode_name(*mode), pilots(p))
            }
            SchemeSpec::Scheduled {
                active,
                mode,
                rounds,
                pilots: p,
                ..
            } => format!("{}-sched{active}-{rounds}it{}", mode_name(*mode), pilots(p)),
            SchemeSpec::Simultaneous { kind, rounds, report, .. } => {
                format!("simultaneous-{}-{}-{rounds}it", kind_name(*kind), dir_name(*report))
            }
            SchemeSpec::Separate {
                kind, rounds, direction, ..
            } => format!("separate-{}-{}-{rounds}it", kind_name(*kind), dir_name(*direction)),
            SchemeSpec::Capacity { .. } => "capacity-ref".into(),
        }
    }

    pub fn rounds(&self) -> usize {
        match self {
            SchemeSpec::Iterative { rounds, .. }
            | SchemeSpec::Scheduled { rounds, .. }
            | SchemeSpec::Simultaneous { rounds, .. }
            | SchemeSpec::Separate { rounds, .. } => *rounds,
            SchemeSpec::Capacity { .. } => 0,
        }
    }

    /// Pilot symbols per round; 0 for exact updates and full-CSI schemes.
    pub fn pilots(&self) -> usize {
        match self {
            SchemeSpec::Iterative { pilots, .. } | SchemeSpec::Scheduled { pilots, .. } => pilots.unwrap_or(0),
            _ => 0,
        }
    }

    fn validate(&self, topo: &TopologySpec) -> Result<()> {
        let label = self.label();
        if !matches!(self, SchemeSpec::Capacity { .. }) && self.rounds() == 0 {
            return Err(Error::Config(format!("scheme {label}: rounds must be >= 1")));
        }
        match self {
            SchemeSpec::Iterative { mode, pilots: Some(n), .. } | SchemeSpec::Scheduled { mode, pilots: Some(n), .. } => {
                if *n == 0 {
                    return Err(Error::Config(format!("scheme {label}: pilots must be >= 1")));
                }
                let k = match self {
                    SchemeSpec::Scheduled { active, .. } => *active,
                    _ => topo.users_per_cell,
                };
                let cfg = TrainingConfig {
                    mode: *mode,
                    ..TrainingConfig::default()
                };
                let min = cfg.min_pilots(topo.bts_antennas, k);
                if *n < min {
                    warn!("scheme {label}: {n} pilots is below {min}; least squares will be regularised");
                }
            }
            _ => {}
        }
        match self {
            SchemeSpec::Scheduled { active, .. } if *active == 0 || *active > topo.users_per_cell => Err(Error::Config(
                format!("scheme {label}: cannot schedule {active} of {} users", topo.users_per_cell),
            )),
            SchemeSpec::Scheduled { .. } | SchemeSpec::Capacity { .. } if topo.num_cells != 1 => {
                Err(Error::Config(format!("scheme {label} needs a single cell")))
            }
            SchemeSpec::Capacity { restarts: 0, .. } => Err(Error::Config("capacity restarts must be >= 1".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Noise fields are overwritten per SNR point.
    pub topology: TopologySpec,
    pub snr_grid_db: Vec<f64>,
    pub schemes: Vec<SchemeSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_trials() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.snr_grid_db.is_empty() {
            return Err(Error::Config("SNR grid is empty".into()));
        }
        if self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("SNR grid contains a non-finite value".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes configured".into()));
        }
        self.topology.validate()?;
        let mut seen = std::collections::HashSet::new();
        for s in &self.schemes {
            s.validate(&self.topology)?;
            if !seen.insert(s.label()) {
                return Err(Error::Config(format!("duplicate scheme label {}", s.label())));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn grid(lo: i32, hi: i32, step: i32) -> Vec<f64> {
    (lo..=hi).step_by(step as usize).map(f64::from).collect()
}

fn oracle(mode: TrainingMode, rounds: usize) -> SchemeSpec {
    SchemeSpec::Iterative {
        label: None,
        mode,
        rounds,
        pilots: None,
    }
}

fn trained(mode: TrainingMode, rounds: usize, pilots: usize) -> SchemeSpec {
    SchemeSpec::Iterative {
        label: None,
        mode,
        rounds,
        pilots: Some(pilots),
    }
}

fn capacity() -> SchemeSpec {
    SchemeSpec::Capacity {
        label: None,
        restarts: default_restarts(),
        steps: default_steps(),
    }
}

/// Named experiment preset (one per figure of the study), with 1000 trials.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    use TrainingMode::{Linear, Thp};
    let fig5 = TopologySpec::single_cell(4, 4, 2, 1.0);
    let (topology, schemes) = match name {
        "fig5a" => (
            fig5,
            vec![oracle(Linear, 2), oracle(Linear, 100), oracle(Thp, 2), oracle(Thp, 100), capacity()],
        ),
        "fig5b" => (
            fig5,
            vec![oracle(Linear, 2), oracle(Thp, 2), trained(Linear, 2, 20), trained(Thp, 2, 20)],
        ),
        "fig5c" => (
            fig5,
            vec![
                oracle(Thp, 2),
                trained(Thp, 2, 10),
                trained(Thp, 2, 20),
                trained(Thp, 2, 50),
                trained(Thp, 2, 100),
            ],
        ),
        "fig6" => (
            TopologySpec::single_cell(4, 3, 2, 1.0),
            vec![
                oracle(Linear, 100),
                oracle(Linear, 1000),
                oracle(Thp, 2),
                oracle(Thp, 100),
                oracle(Thp, 1000),
                SchemeSpec::Scheduled {
                    label: None,
                    active: 3,
                    mode: Linear,
                    rounds: 100,
                    pilots: None,
                },
                capacity(),
            ],
        ),
        "fig7" => (fig5, {
            let mut v = Vec::new();
            for d in [Direction::Uplink, Direction::Downlink] {
                v.push(SchemeSpec::Separate {
                    label: None,
                    kind: Kind::Successive,
                    rounds: 2,
                    direction: d,
                });
                v.push(SchemeSpec::Simultaneous {
                    label: None,
                    kind: Kind::Successive,
                    rounds: 2,
                    report: d,
                });
            }
            v
        }),
        "fig8" => (
            TopologySpec::uniform(2, 2, 3, 2, 1.0),
            vec![
                oracle(Linear, 2),
                oracle(Linear, 100),
                oracle(Linear, 1000),
                oracle(Thp, 2),
                oracle(Thp, 100),
                oracle(Thp, 1000),
                trained(Linear, 2, 20),
                trained(Thp, 2, 20),
            ],
        ),
        "fig9" => (
            TopologySpec::uniform(2, 3, 3, 3, 1.0),
            vec![
                oracle(Linear, 2),
                oracle(Linear, 100),
                oracle(Linear, 1000),
                oracle(Thp, 2),
                oracle(Thp, 100),
                oracle(Thp, 1000),
            ],
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(ExperimentConfig {
        name: name.into(),
        topology,
        snr_grid_db: grid(0, 30, 5),
        schemes,
        trials: default_trials(),
        seed: 1,
        output: None,
    })
}

/// Aggregated outcome of one (SNR, scheme) cell. Rates and MSEs are per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub snr_db: f64,
    pub scheme: String,
    pub rounds: usize,
    pub pilots: usize,
    pub sum_rate_mean: f64,
    pub sum_rate_stderr: f64,
    pub sum_mse_mean: f64,
    pub trials: usize,
    /// Trials whose scheme returned an error (excluded from the means).
    #[serde(skip)]
    pub failed: usize,
}

/// Per-trial sample: sum rate and sum MSE, both per cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSample {
    pub rate: f64,
    pub mse: f64,
}

fn per_cell(ch: &ChannelSet, x: f64) -> f64 {
    x / ch.num_cells() as f64
}

fn iterative(ch: &ChannelSet, mode: TrainingMode, rounds: usize, pilots: Option<usize>, seed: u64) -> Result<TrialSample> {
    let cfg = TrainingConfig {
        n: pilots.unwrap_or(1),
        rounds,
        mode,
        seed,
        oracle_updates: pilots.is_none(),
        ..TrainingConfig::default()
    };
    let res = bidirectional_train(ch, &cfg, FilterBank::initial(ch.spec(), Init::Basis))?;
    Ok(TrialSample {
        rate: per_cell(ch, res.sum_rate()),
        mse: per_cell(ch, *res.mse_trajectory.last().expect("nonempty trajectory")),
    })
}

fn exact_iters(kind: Kind, rounds: usize) -> OptimizerConfig {
    OptimizerConfig {
        rel_tol: f64::MIN_POSITIVE,
        ..OptimizerConfig::new(kind, rounds)
    }
}

/// Runs one scheme on one channel realisation.
pub fn run_trial(scheme: &SchemeSpec, ch: &ChannelSet, seed: u64) -> Result<TrialSample> {
    match scheme {
        SchemeSpec::Iterative {
            mode, rounds, pilots, ..
        } => iterative(ch, *mode, *rounds, *pilots, seed),
        SchemeSpec::Scheduled {
            active,
            mode,
            rounds,
            pilots,
            ..
        } => {
            let mut rng = stream(seed, Domain::Schedule, &[]);
            let mut users = sample(&mut rng, ch.users_per_cell(), *active).into_vec();
            users.sort_unstable();
            iterative(&ch.select_users(&users)?, *mode, *rounds, *pilots, seed)
        }
        SchemeSpec::Simultaneous {
            kind, rounds, report, ..
        } => {
            let cfg = OptimizerConfig {
                normalize_powers: true,
                ..exact_iters(*kind, *rounds)
            };
            let mut bank = optimize_simultaneous(ch, &cfg)?.bank;
            let spec = ch.spec();
            let (rates, mses) = match report {
                Direction::Uplink => {
                    let rx = uplink_rx_update(ch, &bank, spec.uplink_noise_var, *kind)?;
                    bank.g = rx.g;
                    (
                        user_sinr_rates(ch, &bank, Structure::new(*kind, Direction::Uplink)),
                        uplink_mses(ch, &bank, spec.uplink_noise_var, *kind),
                    )
                }
                Direction::Downlink => (
                    user_sinr_rates(ch, &bank, Structure::new(*kind, Direction::Downlink)),
                    downlink_mses(ch, &bank, &spec.user_noise_vars, *kind),
                ),
            };
            Ok(TrialSample {
                rate: per_cell(ch, rates.iter().sum()),
                mse: per_cell(ch, mses.iter().sum()),
            })
        }
        SchemeSpec::Separate {
            kind,
            rounds,
            direction,
            ..
        } => match direction {
            Direction::Uplink => {
                let mode = match kind {
                    Kind::Linear => TrainingMode::Linear,
                    Kind::Successive => TrainingMode::Thp,
                };
                iterative(ch, mode, *rounds, None, seed)
            }
            Direction::Downlink => {
                let bank = optimize_downlink(ch, &exact_iters(*kind, *rounds))?.bank;
                let structure = Structure::new(*kind, Direction::Downlink);
                let rates = user_sinr_rates(ch, &bank, structure);
                let mses = downlink_mses(ch, &bank, &ch.spec().user_noise_vars, *kind);
                Ok(TrialSample {
                    rate: per_cell(ch, rates.iter().sum()),
                    mse: per_cell(ch, mses.iter().sum()),
                })
            }
        },
        SchemeSpec::Capacity { restarts, steps, .. } => {
            let spec = ch.spec();
            let cfg = CapacityConfig {
                restarts: *restarts,
                steps: *steps,
                seed,
            };
            let cap = capacity_reference(ch, &spec.user_powers, spec.uplink_noise_var, &cfg)?;
            let h = crate::channel::effective_channel(ch, &cap.v)?;
            Ok(TrialSample {
                rate: cap.rate,
                mse: mmse_trace_spectrum(&h, spec.uplink_noise_var).0,
            })
        }
    }
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let m = xs.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

/// Seed keys of one trial: the trial index, the SNR value and the scheme
/// label, so results do not depend on the order of the config lists.
fn trial_keys(trial: usize, snr_db: f64, scheme: &SchemeSpec) -> Vec<u64> {
    let mut keys = vec![trial as u64, snr_db.to_bits()];
    keys.extend(scheme.label().bytes().map(u64::from));
    keys
}

/// Channel realisation of trial `trial`, shared by every SNR point and scheme.
pub fn trial_channels(cfg: &ExperimentConfig, snr_db: f64, trial: usize) -> Result<ChannelSet> {
    let spec = cfg.topology.clone().with_snr_db(snr_db);
    sample_channels(&spec, derive_seed(cfg.seed, &[trial as u64]))
}

/// Runs every (SNR, scheme, trial) combination in parallel and aggregates in a
/// fixed order, so the output depends only on the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let n_schemes = cfg.schemes.len();
    let tasks: Vec<(usize, usize, usize)> = (0..cfg.snr_grid_db.len())
        .flat_map(|i| (0..n_schemes).flat_map(move |j| (0..cfg.trials).map(move |t| (i, j, t))))
        .collect();
    info!(
        "experiment {:?}: {} SNR points x {n_schemes} schemes x {} trials",
        cfg.name,
        cfg.snr_grid_db.len(),
        cfg.trials
    );
    let samples: Vec<Result<TrialSample>> = tasks
        .par_iter()
        .map(|&(i, j, t)| {
            let snr = cfg.snr_grid_db[i];
            let ch = trial_channels(cfg, snr, t)?;
            let seed = derive_seed(cfg.seed, &trial_keys(t, snr, &cfg.schemes[j]));
            run_trial(&cfg.schemes[j], &ch, seed)
        })
        .collect();
    let mut records = Vec::with_capacity(cfg.snr_grid_db.len() * n_schemes);
    for (cell, chunk) in samples.chunks(cfg.trials).enumerate() {
        let (i, j) = (cell / n_schemes, cell % n_schemes);
        let scheme = &cfg.schemes[j];
        let snr = cfg.snr_grid_db[i];
        let mut rates = Vec::with_capacity(cfg.trials);
        let mut mses = Vec::with_capacity(cfg.trials);
        let mut failed = 0;
        for (t, s) in chunk.iter().enumerate() {
            match s {
                Ok(s) => {
                    rates.push(s.rate);
                    mses.push(s.mse);
                }
                Err(e) => {
                    failed += 1;
                    warn!("snr {snr} dB, scheme {}, trial {t}: {e}", scheme.label());
                }
            }
        }
        if failed > 0 {
            warn!("snr {snr} dB, scheme {}: {failed} of {} trials failed", scheme.label(), cfg.trials);
        }
        let (sum_rate_mean, sum_rate_stderr) = mean_stderr(&rates);
        records.push(ResultRecord {
            snr_db: snr,
            scheme: scheme.label(),
            rounds: scheme.rounds(),
            pilots: scheme.pilots(),
            sum_rate_mean,
            sum_rate_stderr,
            sum_mse_mean: mean_stderr(&mses).0,
            trials: cfg.trials,
            failed,
        });
    }
    records.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db).then_with(|| a.scheme.cmp(&b.scheme)));
    Ok(records)
}

/// Comment lines describing the conventions behind a results file.
pub fn metadata(cfg: &ExperimentConfig, records: &[ResultRecord]) -> Result<Vec<String>> {
    let mut lines = vec![
        format!("experiment: {}", cfg.name),
        format!("seed: {}", cfg.seed),
        format!("trials: {}", cfg.trials),
        format!("topology: {}", serde_json::to_string(&cfg.topology)?),
        "snr_db: 10*log10(P_k / sigma^2) with P_k = user power; user noise sigma_k^2 = sigma^2; downlink power P from topology".into(),
        "sum_rate: uplink unless the scheme label says downlink; bits per channel use per cell; SINR-based with genie-aided cancellation for nonlinear schemes".into(),
        "sum_mse: per cell, same direction as the rate".into(),
        "pilots: 0 means exact MMSE updates (infinite training) or full channel knowledge".into(),
        "capacity-ref: best rate found by projected gradient ascent, a lower bound on the rank-one sum capacity".into(),
    ];
    let failed: BTreeMap<String, usize> = records
        .iter()
        .filter(|r| r.failed > 0)
        .map(|r| (format!("{}@{}dB", r.scheme, r.snr_db), r.failed))
        .collect();
    if !failed.is_empty() {
        lines.push(format!("failed_trials: {}", serde_json::to_string(&failed)?));
    }
    Ok(lines)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_records<W: Write>(records: &[ResultRecord], out: W, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for r in records {
        w.serialize(r).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes the header and one row per record.
pub fn emit_csv(records: &[ResultRecord], path: &Path) -> Result<()> {
    emit_csv_with_metadata(records, &[], path)
}

/// Like [`emit_csv`], preceded by `# ` comment lines.
pub fn emit_csv_with_metadata(records: &[ResultRecord], comments: &[String], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Config("no records to write".into()));
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for c in comments {
        writeln!(out, "# {c}").map_err(io_err(path))?;
    }
    write_records(records, &mut out, path)?;
    out.flush().map_err(io_err(path))
}

/// Reads a results file, skipping `#` comment lines.
pub fn parse_csv(path: &Path) -> Result<Vec<ResultRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    let body: String = BufReader::new(file)
        .lines()
        .map(|l| l.map_err(io_err(path)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l + "\n")
        .collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    rdr.deserialize()
        .map(|r| {
            r.map_err(|source| Error::Csv {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}
