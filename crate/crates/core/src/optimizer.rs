//! Full-CSI alternating optimization.
//!
//! * [`optimize_uplink`] / [`optimize_downlink`]: alternate receive and
//!   transmit MMSE updates for one direction. Each half-step is an exact
//!   minimization with tight power constraints, so the sum MSE never increases.
//! * [`optimize_simultaneous`]: a single set of filters per terminal serves both
//!   directions (`v = r`, `t = g`); with fixed symbol powers the shared
//!   potential decreases, with per-iteration power normalization it is only
//!   observed to converge.
//! * [`capacity_reference`]: best-effort rank-one sum-capacity bound.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::filters::{initial_user_vectors, random_direction, DecodingOrder, Direction, FilterBank, Init, Kind, Structure};
use crate::linalg::{add_outer, c64, hermitian_eigen, identity, log2_det_hpd, solve_hpd, CMat, CVec};
use crate::mmse::{downlink_rx_update, downlink_tx_update, uplink_rx_update, uplink_tx_update};
use crate::objectives::{downlink_mses, potential_pair, sum_mse, uplink_mses};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Forward-backward iterations (one receive plus one transmit update each).
    pub max_iters: usize,
    /// Stop when the relative objective change falls below this.
    pub rel_tol: f64,
    pub kind: Kind,
    /// Uplink symbol power of the tied-filter algorithm.
    pub rho: f64,
    /// Downlink symbol power of the tied-filter algorithm.
    pub beta: f64,
    pub normalize_powers: bool,
    pub capture_trajectory: bool,
    pub init: Init,
    /// Decoding order inside each cell; natural order when absent.
    pub order: Option<Vec<usize>>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            rel_tol: 1e-8,
            kind: Kind::Linear,
            rho: 1.0,
            beta: 1.0,
            normalize_powers: false,
            capture_trajectory: true,
            init: Init::Basis,
            order: None,
        }
    }
}

impl OptimizerConfig {
    pub fn new(kind: Kind, max_iters: usize) -> Self {
        Self {
            kind,
            max_iters,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        if !self.normalize_powers && !(self.rho > 0.0 && self.beta > 0.0) {
            return Err(Error::Config("rho and beta must be positive".into()));
        }
        Ok(())
    }

    fn order(&self, k: usize) -> Result<DecodingOrder> {
        match &self.order {
            Some(o) if o.len() == k => DecodingOrder::from_permutation(o.clone()),
            Some(o) => Err(Error::Config(format!("decoding order {o:?} does not cover {k} users"))),
            None => Ok(DecodingOrder::natural(k)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub bank: FilterBank,
    /// Objective after every half-step (empty unless captured).
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest filter change caused by one more full update at the output.
    pub fixed_point_residual: f64,
    /// Multipliers of the last transmit update.
    pub mu: Vec<f64>,
}

fn rel_change(prev: f64, cur: f64) -> f64 {
    (prev - cur).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

fn max_change(a: &[CVec], b: &[CVec]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Alternating uplink optimization from the configured initialization.
pub fn optimize_uplink(ch: &ChannelSet, cfg: &OptimizerConfig) -> Result<OptimizeResult> {
    cfg.validate()?;
    let bank = FilterBank::initial(ch.spec(), cfg.init).with_order(cfg.order(ch.users_per_cell())?)?;
    optimize_uplink_from(ch, cfg, bank)
}

/// Alternating uplink optimization from the precoders in `bank`.
pub fn optimize_uplink_from(ch: &ChannelSet, cfg: &OptimizerConfig, mut bank: FilterBank) -> Result<OptimizeResult> {
    cfg.validate()?;
    let spec = ch.spec();
    let sigma2 = spec.uplink_noise_var;
    let structure = Structure::new(cfg.kind, Direction::Uplink);
    let mut trajectory = Vec::new();
    let mut prev: Option<f64> = None;
    let mut mu = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=cfg.max_iters {
        iterations = it;
        let rx = uplink_rx_update(ch, &bank, sigma2, cfg.kind)?;
        bank.g = rx.g;
        bank.feedback = rx.feedback;
        bank.alpha = rx.alpha;
        if cfg.capture_trajectory {
            trajectory.push(sum_mse(ch, &bank, structure));
        }
        let tx = uplink_tx_update(ch, &bank, &spec.user_powers, cfg.kind)?;
        bank.v = tx.x;
        mu = tx.mu;
        let f = sum_mse(ch, &bank, structure);
        if cfg.capture_trajectory {
            trajectory.push(f);
        }
        if let Some(p) = prev {
            if rel_change(p, f) < cfg.rel_tol {
                converged = true;
                break;
            }
        }
        prev = Some(f);
    }
    let rx = uplink_rx_update(ch, &bank, sigma2, cfg.kind)?;
    let mut probe = bank.clone();
    probe.g = rx.g;
    let tx = uplink_tx_update(ch, &probe, &spec.user_powers, cfg.kind)?;
    let fixed_point_residual = max_change(&probe.g, &bank.g).max(max_change(&tx.x, &bank.v));
    debug!("uplink {:?}: {iterations} iterations, converged={converged}, residual={fixed_point_residual:e}", cfg.kind);
    Ok(OptimizeResult {
        bank,
        trajectory,
        iterations,
        converged,
        fixed_point_residual,
        mu,
    })
}

/// Alternating downlink optimization. User filters start as unit-norm
/// versions of the configured initial vectors; the first half-step is the
/// precoder update.
pub fn optimize_downlink(ch: &ChannelSet, cfg: &OptimizerConfig) -> Result<OptimizeResult> {
    cfg.validate()?;
    let spec = ch.spec();
    let mut bank = FilterBank::zeros(spec).with_order(cfg.order(ch.users_per_cell())?)?;
    bank.r = initial_user_vectors(spec, cfg.init)
        .into_iter()
        .map(|r| {
            let n = r.norm();
            r / c64(n, 0.0)
        })
        .collect();
    let structure = Structure::new(cfg.kind, Direction::Downlink);
    let noise = &spec.user_noise_vars;
    let mut trajectory = Vec::new();
    let mut prev: Option<f64> = None;
    let mut mu = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=cfg.max_iters {
        iterations = it;
        let tx = downlink_tx_update(ch, &bank, spec.bts_power, cfg.kind)?;
        bank.t = tx.x;
        mu = tx.mu;
        if cfg.capture_trajectory {
            trajectory.push(sum_mse(ch, &bank, structure));
        }
        bank.r = downlink_rx_update(ch, &bank, noise, cfg.kind)?.0;
        let f = sum_mse(ch, &bank, structure);
        if cfg.capture_trajectory {
            trajectory.push(f);
        }
        if let Some(p) = prev {
            if rel_change(p, f) < cfg.rel_tol {
                converged = true;
                break;
            }
        }
        prev = Some(f);
    }
    let mut probe = bank.clone();
    probe.t = downlink_tx_update(ch, &bank, spec.bts_power, cfg.kind)?.x;
    let r = downlink_rx_update(ch, &probe, noise, cfg.kind)?.0;
    let fixed_point_residual = max_change(&probe.t, &bank.t).max(max_change(&r, &bank.r));
    Ok(OptimizeResult {
        bank,
        trajectory,
        iterations,
        converged,
        fixed_point_residual,
        mu,
    })
}

#[derive(Debug, Clone)]
pub struct SimultaneousResult {
    pub bank: FilterBank,
    /// Fixed powers: forward potential at every tie point. Normalized powers:
    /// uplink sum MSE after every BTS update.
    pub trajectory: Vec<f64>,
    /// Backward potential at the same points (fixed powers only).
    pub backward: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Whether the recorded trajectory never increased (10^-9 slack).
    pub monotone: bool,
}

fn scale_to(x: &CVec, power: f64) -> CVec {
    let n = x.norm();
    if n == 0.0 {
        x.clone()
    } else {
        x * c64((power.sqrt()) / n, 0.0)
    }
}

/// Tied uplink/downlink optimization: `v := r`, update `g`, `t := g`, update `r`.
pub fn optimize_simultaneous(ch: &ChannelSet, cfg: &OptimizerConfig) -> Result<SimultaneousResult> {
    cfg.validate()?;
    let spec = ch.spec();
    let k_cell = spec.users_per_cell;
    let kind = cfg.kind;
    let normalized = cfg.normalize_powers;
    let (rho, beta) = if normalized { (1.0, 1.0) } else { (cfg.rho, cfg.beta) };
    let up_noise = spec.uplink_noise_var / rho;
    let down_noise: Vec<f64> = spec.user_noise_vars.iter().map(|s| s / beta).collect();

    let mut bank = FilterBank::initial(spec, cfg.init).with_order(cfg.order(k_cell)?)?;
    bank.r = bank.v.clone();
    let tie_up = |bank: &mut FilterBank| {
        bank.v = if normalized {
            bank.r
                .iter()
                .enumerate()
                .map(|(u, r)| scale_to(r, spec.user_powers[u % k_cell]))
                .collect()
        } else {
            bank.r.clone()
        };
    };
    let tie_down = |bank: &mut FilterBank| {
        if normalized {
            let mut t = Vec::with_capacity(bank.g.len());
            for c in 0..spec.num_cells {
                let cell = &bank.g[c * k_cell..(c + 1) * k_cell];
                let p: f64 = cell.iter().map(|g| g.norm_squared()).sum();
                let s = if p > 0.0 { (spec.bts_power / p).sqrt() } else { 0.0 };
                t.extend(cell.iter().map(|g| g * c64(s, 0.0)));
            }
            bank.t = t;
        } else {
            bank.t = bank.g.clone();
        }
    };

    let mut trajectory = Vec::new();
    let mut backward = Vec::new();
    let record = |bank: &FilterBank, traj: &mut Vec<f64>, back: &mut Vec<f64>| -> Result<f64> {
        let f = if normalized {
            uplink_mses(ch, bank, spec.uplink_noise_var, kind).iter().sum()
        } else {
            let (f, b) = potential_pair(ch, bank, rho, beta, kind)?;
            back.push(b);
            f
        };
        traj.push(f);
        Ok(f)
    };

    tie_up(&mut bank);
    let mut prev: Option<f64> = None;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=cfg.max_iters {
        iterations = it;
        let rx = uplink_rx_update(ch, &bank, up_noise, kind)?;
        bank.g = rx.g;
        bank.feedback = rx.feedback;
        bank.alpha = rx.alpha;
        tie_down(&mut bank);
        let f_up = record(&bank, &mut trajectory, &mut backward)?;
        bank.r = downlink_rx_update(ch, &bank, &down_noise, kind)?.0;
        tie_up(&mut bank);
        let f = if normalized {
            f_up
        } else {
            record(&bank, &mut trajectory, &mut backward)?
        };
        if let Some(p) = prev {
            if rel_change(p, f) < cfg.rel_tol {
                converged = true;
                break;
            }
        }
        prev = Some(f);
    }
    let monotone = trajectory.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    Ok(SimultaneousResult {
        bank,
        trajectory,
        backward,
        iterations,
        converged,
        monotone,
    })
}

/// Sum MSE of both directions for a bank produced by [`optimize_simultaneous`].
pub fn simultaneous_mses(ch: &ChannelSet, bank: &FilterBank, kind: Kind) -> (f64, f64) {
    let spec = ch.spec();
    (
        uplink_mses(ch, bank, spec.uplink_noise_var, kind).iter().sum(),
        downlink_mses(ch, bank, &spec.user_noise_vars, kind).iter().sum(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacityConfig {
    pub restarts: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            steps: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CapacityResult {
    /// Best rate found, a lower bound on the rank-one sum capacity (bits).
    pub rate: f64,
    pub v: Vec<CVec>,
    /// Best rate after each restart (nondecreasing).
    pub best_per_restart: Vec<f64>,
}

fn logdet_rate(h: &[CMat], v: &[CVec], sigma2: f64) -> Result<(f64, CMat)> {
    let n = h[0].nrows();
    let mut m = identity(n);
    for (hk, vk) in h.iter().zip(v) {
        add_outer(&mut m, &(hk * vk), 1.0 / sigma2);
    }
    Ok((log2_det_hpd(&m)?, m))
}

/// Projected gradient ascent of `log2 det(I + sum_k H_k v_k v_k^H H_k^H / sigma2)`
/// over `||v_k||^2 = P_k`. Restart 0 starts from each user's dominant right
/// singular vector; later restarts from random directions.
pub fn capacity_reference(ch: &ChannelSet, powers: &[f64], sigma2: f64, cfg: &CapacityConfig) -> Result<CapacityResult> {
    if ch.num_cells() != 1 {
        return Err(Error::Config("capacity_reference expects a single cell".into()));
    }
    if cfg.restarts == 0 {
        return Err(Error::Config("restarts must be >= 1".into()));
    }
    let k = ch.users_per_cell();
    if powers.len() != k {
        return Err(Error::Shape(format!("{} powers for {k} users", powers.len())));
    }
    let h: Vec<CMat> = (0..k).map(|u| ch.direct(0, u).clone()).collect();
    let mut best_rate = f64::NEG_INFINITY;
    let mut best_v = Vec::new();
    let mut best_per_restart = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let mut v: Vec<CVec> = if restart == 0 {
            h.iter()
                .zip(powers)
                .map(|(hk, &p)| {
                    let e = hermitian_eigen(&hk.ad_mul(hk));
                    let top = e.vectors.column(e.values.len() - 1).into_owned();
                    scale_to(&top, p)
                })
                .collect()
        } else {
            let mut rng = stream(cfg.seed ^ ch.seed(), Domain::Restart, &[restart as u64]);
            h.iter()
                .zip(powers)
                .map(|(hk, &p)| random_direction(&mut rng, hk.ncols(), p))
                .collect()
        };
        let (mut rate, mut m) = logdet_rate(&h, &v, sigma2)?;
        let mut step = 1.0;
        for _ in 0..cfg.steps {
            // gradient w.r.t. conj(v_k): H_k^H M^{-1} H_k v_k / sigma2 (up to 1/ln 2)
            let rhs = CMat::from_columns(&h.iter().zip(&v).map(|(hk, vk)| hk * vk).collect::<Vec<_>>());
            let solved = solve_hpd(&m, &rhs, 1e-14)?.x;
            let grad: Vec<CVec> = h
                .iter()
                .enumerate()
                .map(|(u, hk)| hk.ad_mul(&solved.column(u).into_owned()) * c64(1.0 / sigma2, 0.0))
                .collect();
            let mut improved = false;
            while step > 1e-14 {
                let cand: Vec<CVec> = v
                    .iter()
                    .zip(&grad)
                    .zip(powers)
                    .map(|((vk, gk), &p)| scale_to(&(vk + gk * c64(step, 0.0)), p))
                    .collect();
                let (r, mc) = logdet_rate(&h, &cand, sigma2)?;
                if r > rate {
                    let gain = r - rate;
                    v = cand;
                    rate = r;
                    m = mc;
                    step *= 1.5;
                    improved = gain > 1e-13 * rate.abs().max(1.0);
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if rate > best_rate {
            best_rate = rate;
            best_v = v;
        }
        best_per_restart.push(best_rate);
    }
    Ok(CapacityResult {
        rate: best_rate,
        v: best_v,
        best_per_restart,
    })
}
