//! Scalar objectives: per-user and summed MSEs, the Lagrangian, the tied-filter
//! potential functions, log-det and SINR rates, and the MMSE trace/spectrum pair.
//!
//! Successive structures are evaluated genie-aided: cancelled or pre-compensated
//! users contribute nothing, as if every earlier decision were correct.

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::filters::{Direction, FilterBank, Kind, Structure};
use crate::linalg::{add_outer, c64, hermitian_eigenvalues, identity, log2_det_hpd, solve_hpd, CMat, CVec};

/// SINR ceiling applied before taking logs.
pub const SINR_CAP: f64 = 1e12;

/// Per-user uplink MSEs with receive noise `sigma2` (global user order).
pub fn uplink_mses(ch: &ChannelSet, bank: &FilterBank, sigma2: f64, kind: Kind) -> Vec<f64> {
    let k_cell = ch.users_per_cell();
    let users = ch.num_cells() * k_cell;
    (0..users)
        .map(|u| {
            let (c, k) = (u / k_cell, u % k_cell);
            let g = &bank.g[u];
            let gain = g.dotc(&(ch.direct(c, k) * &bank.v[u]));
            let interference: f64 = (0..users)
                .filter(|&j| j / k_cell != c || kind.uplink_sees(&bank.order, k, j % k_cell))
                .map(|j| g.dotc(&(ch.link(c, j / k_cell, j % k_cell) * &bank.v[j])).norm_sqr())
                .sum();
            1.0 + sigma2 * g.norm_squared() - 2.0 * gain.re + interference
        })
        .collect()
}

/// Per-user downlink MSEs with user noise `noise[k]` (global user order).
pub fn downlink_mses(ch: &ChannelSet, bank: &FilterBank, noise: &[f64], kind: Kind) -> Vec<f64> {
    let k_cell = ch.users_per_cell();
    let users = ch.num_cells() * k_cell;
    (0..users)
        .map(|u| {
            let (c, k) = (u / k_cell, u % k_cell);
            let r = &bank.r[u];
            let gain = r.dotc(&ch.direct(c, k).ad_mul(&bank.t[u]));
            let interference: f64 = (0..users)
                .filter(|&j| j / k_cell != c || kind.downlink_sees(&bank.order, k, j % k_cell))
                .map(|j| r.dotc(&ch.link(j / k_cell, c, k).ad_mul(&bank.t[j])).norm_sqr())
                .sum();
            1.0 + noise[k] * r.norm_squared() - 2.0 * gain.re + interference
        })
        .collect()
}

/// Summed MSE for the structure, with the noise levels stored in the channel spec.
pub fn sum_mse(ch: &ChannelSet, bank: &FilterBank, structure: Structure) -> f64 {
    let spec = ch.spec();
    match structure.direction {
        Direction::Uplink => uplink_mses(ch, bank, spec.uplink_noise_var, structure.kind).iter().sum(),
        Direction::Downlink => downlink_mses(ch, bank, &spec.user_noise_vars, structure.kind).iter().sum(),
    }
}

/// Sum MSE plus multiplier-weighted power slack. Uplink takes one multiplier
/// per user, downlink one per BTS.
pub fn lagrangian(ch: &ChannelSet, bank: &FilterBank, mu: &[f64], structure: Structure) -> Result<f64> {
    let spec = ch.spec();
    let k_cell = spec.users_per_cell;
    let base = sum_mse(ch, bank, structure);
    let penalty: f64 = match structure.direction {
        Direction::Uplink => {
            if mu.len() != bank.v.len() {
                return Err(Error::Shape(format!("{} multipliers for {} users", mu.len(), bank.v.len())));
            }
            bank.v
                .iter()
                .zip(mu)
                .enumerate()
                .map(|(u, (v, m))| m * (v.norm_squared() - spec.user_powers[u % k_cell]))
                .sum()
        }
        Direction::Downlink => {
            if mu.len() != spec.num_cells {
                return Err(Error::Shape(format!("{} multipliers for {} BTSs", mu.len(), spec.num_cells)));
            }
            mu.iter()
                .enumerate()
                .map(|(c, m)| {
                    let p: f64 = bank.t[c * k_cell..(c + 1) * k_cell].iter().map(|t| t.norm_squared()).sum();
                    m * (p - spec.bts_power)
                })
                .sum()
        }
    };
    Ok(base + penalty)
}

/// Potential functions of the tied-filter algorithm:
/// forward = sum_k (uplink MSE normalized by rho + sigma_k^2 ||v_k||^2 / beta),
/// backward = sum_k (downlink MSE normalized by beta + sigma^2 ||t_k||^2 / rho).
/// For a tied bank (`v = r`, `t = g`) the two coincide.
pub fn potential_pair(ch: &ChannelSet, bank: &FilterBank, rho: f64, beta: f64, kind: Kind) -> Result<(f64, f64)> {
    if !(rho > 0.0 && beta > 0.0) {
        return Err(Error::Config(format!("rho and beta must be positive (rho={rho}, beta={beta})")));
    }
    let spec = ch.spec();
    let k_cell = spec.users_per_cell;
    let sigma2 = spec.uplink_noise_var;
    let down_noise: Vec<f64> = spec.user_noise_vars.iter().map(|s| s / beta).collect();
    let forward: f64 = uplink_mses(ch, bank, sigma2 / rho, kind)
        .iter()
        .enumerate()
        .map(|(u, e)| e + spec.user_noise_vars[u % k_cell] * bank.v[u].norm_squared() / beta)
        .sum();
    let backward: f64 = downlink_mses(ch, bank, &down_noise, kind)
        .iter()
        .enumerate()
        .map(|(u, e)| e + sigma2 * bank.t[u].norm_squared() / rho)
        .sum();
    Ok((forward, backward))
}

/// `log2 det(I + sum_k H_k v_k v_k^H H_k^H / sigma2)` for a single cell.
pub fn sum_rate_logdet(ch: &ChannelSet, v: &[CVec], sigma2: f64) -> Result<f64> {
    if ch.num_cells() != 1 {
        return Err(Error::Config("sum_rate_logdet expects a single cell".into()));
    }
    let h = ch.effective(0, 0, v)?;
    let n = ch.bts_antennas();
    let mut m = identity(n);
    for col in h.column_iter() {
        add_outer(&mut m, &col.into_owned(), 1.0 / sigma2);
    }
    log2_det_hpd(&m)
}

/// Filter-output SINRs for the structure's direction (global user order).
pub fn user_sinrs(ch: &ChannelSet, bank: &FilterBank, structure: Structure) -> Vec<f64> {
    let spec = ch.spec();
    let k_cell = spec.users_per_cell;
    let users = ch.num_cells() * k_cell;
    let kind = structure.kind;
    (0..users)
        .map(|u| {
            let (c, k) = (u / k_cell, u % k_cell);
            let (desired, mut denom) = match structure.direction {
                Direction::Uplink => {
                    let g = &bank.g[u];
                    let mut i_plus_n = spec.uplink_noise_var * g.norm_squared();
                    for j in (0..users).filter(|&j| j != u) {
                        if j / k_cell != c || kind.uplink_sees(&bank.order, k, j % k_cell) {
                            i_plus_n += g.dotc(&(ch.link(c, j / k_cell, j % k_cell) * &bank.v[j])).norm_sqr();
                        }
                    }
                    (g.dotc(&(ch.direct(c, k) * &bank.v[u])).norm_sqr(), i_plus_n)
                }
                Direction::Downlink => {
                    let r = &bank.r[u];
                    let mut i_plus_n = spec.user_noise_vars[k] * r.norm_squared();
                    for j in (0..users).filter(|&j| j != u) {
                        if j / k_cell != c || kind.downlink_sees(&bank.order, k, j % k_cell) {
                            i_plus_n += r.dotc(&ch.link(j / k_cell, c, k).ad_mul(&bank.t[j])).norm_sqr();
                        }
                    }
                    (r.dotc(&ch.direct(c, k).ad_mul(&bank.t[u])).norm_sqr(), i_plus_n)
                }
            };
            if desired == 0.0 {
                return 0.0;
            }
            denom = denom.max(desired / SINR_CAP);
            (desired / denom).min(SINR_CAP)
        })
        .collect()
}

/// Per-user rates `log2(1 + SINR_k)` in bits.
pub fn user_sinr_rates(ch: &ChannelSet, bank: &FilterBank, structure: Structure) -> Vec<f64> {
    user_sinrs(ch, bank, structure)
        .into_iter()
        .map(|s| (1.0 + s).log2())
        .collect()
}

/// `(K - sum_i lambda_i / (lambda_i + sigma2), eigenvalues of H H^H descending)`.
pub fn mmse_trace_spectrum(effective_h: &CMat, sigma2: f64) -> (f64, Vec<f64>) {
    let k = effective_h.ncols() as f64;
    let gram = effective_h * effective_h.adjoint();
    let mut lambdas: Vec<f64> = hermitian_eigenvalues(&gram).into_iter().map(|l| l.max(0.0)).collect();
    lambdas.reverse();
    let captured: f64 = lambdas.iter().map(|l| l / (l + sigma2)).sum();
    (k - captured, lambdas)
}

/// `trace(I_K - H^H (H H^H + sigma2 I)^{-1} H)` by direct inversion.
pub fn mmse_trace_direct(effective_h: &CMat, sigma2: f64) -> Result<f64> {
    let n = effective_h.nrows();
    let k = effective_h.ncols();
    let cov = effective_h * effective_h.adjoint() + identity(n) * c64(sigma2, 0.0);
    let x = solve_hpd(&cov, effective_h, 0.0)?.x;
    let m = effective_h.adjoint() * x;
    Ok(k as f64 - (0..k).map(|i| m[(i, i)].re).sum::<f64>())
}
