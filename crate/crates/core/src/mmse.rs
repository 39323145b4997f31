//! Closed-form MMSE filter updates for linear and successive structures.
//!
//! Each receive update is the Wiener filter against the interference the
//! structure leaves in place; each transmit update is the norm-constrained
//! minimizer of the summed MSE with the Lagrange multiplier chosen to make the
//! power constraint tight. In multi-cell topologies every covariance includes
//! all other-cell transmissions, and cancellation / pre-compensation only
//! removes intra-cell users.

use num_complex::Complex64;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::filters::{FilterBank, Kind};
use crate::linalg::{add_outer, c64, identity, solve_hpd_vec, CMat, CVec};
use crate::multiplier::constrained_minimizer;

/// Ridge used when a covariance fails to factor, relative to `trace/dim`.
pub const RX_RIDGE: f64 = 1e-12;

/// Output of an uplink receive update.
#[derive(Debug, Clone)]
pub struct UplinkRx {
    pub g: Vec<CVec>,
    /// Per-cell `B`, unit diagonal, `b_ki = g_k^H H_i v_i` for users decoded before `k`.
    pub feedback: Vec<CMat>,
    /// Bias factors `alpha_k = g_k^H H_k v_k`.
    pub alpha: Vec<Complex64>,
    /// Some covariance needed the ridge fallback.
    pub ridged: bool,
}

/// Output of a transmit update.
#[derive(Debug, Clone)]
pub struct TxUpdate {
    pub x: Vec<CVec>,
    /// One multiplier per user (uplink) or per BTS (downlink).
    pub mu: Vec<f64>,
    /// Constraint met on the boundary `mu = -lambda_min`.
    pub boundary: Vec<bool>,
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: {got} entries for {want} users")));
    }
    Ok(())
}

/// Received signature `H[c_rx][c][i] v_(c,i)` of every user at BTS `c_rx`.
fn signatures_at(ch: &ChannelSet, c_rx: usize, v: &[CVec]) -> Vec<CVec> {
    let k = ch.users_per_cell();
    (0..ch.num_cells() * k)
        .map(|u| ch.link(c_rx, u / k, u % k) * &v[u])
        .collect()
}

/// Uplink receive filters `g_k = (sum_{seen i} H_i v_i v_i^H H_i^H + sigma2 I)^{-1} H_k v_k`.
pub fn uplink_rx_update(ch: &ChannelSet, bank: &FilterBank, sigma2: f64, kind: Kind) -> Result<UplinkRx> {
    let k_cell = ch.users_per_cell();
    let users = ch.num_cells() * k_cell;
    check_len("uplink precoders", bank.v.len(), users)?;
    let n = ch.bts_antennas();
    let order = &bank.order;
    let mut g = vec![CVec::zeros(n); users];
    let mut feedback = Vec::with_capacity(ch.num_cells());
    let mut alpha = vec![c64(0.0, 0.0); users];
    let mut ridged = false;
    for c in 0..ch.num_cells() {
        let sig = signatures_at(ch, c, &bank.v);
        let mut other = identity(n) * c64(sigma2, 0.0);
        for (u, s) in sig.iter().enumerate() {
            if u / k_cell != c {
                add_outer(&mut other, s, 1.0);
            }
        }
        let own = |i: usize| &sig[c * k_cell + i];
        let mut linear_cov = None;
        let mut b = CMat::identity(k_cell, k_cell);
        for k in 0..k_cell {
            let cov = match kind {
                Kind::Linear => linear_cov
                    .get_or_insert_with(|| {
                        let mut m = other.clone();
                        (0..k_cell).for_each(|i| add_outer(&mut m, own(i), 1.0));
                        m
                    })
                    .clone(),
                Kind::Successive => {
                    let mut m = other.clone();
                    for i in (0..k_cell).filter(|&i| kind.uplink_sees(order, k, i)) {
                        add_outer(&mut m, own(i), 1.0);
                    }
                    m
                }
            };
            let (gk, r) = solve_hpd_vec(&cov, own(k), RX_RIDGE)?;
            ridged |= r;
            if kind == Kind::Successive {
                for i in order.before(k) {
                    b[(k, i)] = gk.dotc(own(i));
                }
            }
            alpha[c * k_cell + k] = gk.dotc(own(k));
            g[c * k_cell + k] = gk;
        }
        feedback.push(b);
    }
    Ok(UplinkRx {
        g,
        feedback,
        alpha,
        ridged,
    })
}

/// Uplink precoders `v_k = (sum_{i seeing k} H_k^H g_i g_i^H H_k + mu_k I)^{-1} H_k^H g_k`
/// with `||v_k||^2 = P_k` for each user.
pub fn uplink_tx_update(ch: &ChannelSet, bank: &FilterBank, powers: &[f64], kind: Kind) -> Result<TxUpdate> {
    let k_cell = ch.users_per_cell();
    let users = ch.num_cells() * k_cell;
    check_len("BTS filters", bank.g.len(), users)?;
    check_len("user powers", powers.len(), k_cell)?;
    let order = &bank.order;
    let mut out = TxUpdate {
        x: Vec::with_capacity(users),
        mu: Vec::with_capacity(users),
        boundary: Vec::with_capacity(users),
    };
    for c in 0..ch.num_cells() {
        for k in 0..k_cell {
            let nk = ch.user_antennas(k);
            let mut a = CMat::zeros(nk, nk);
            for c_rx in 0..ch.num_cells() {
                let h = ch.link(c_rx, c, k);
                for i in 0..k_cell {
                    if c_rx == c && !kind.uplink_sees(order, i, k) {
                        continue;
                    }
                    let w = h.ad_mul(&bank.g[c_rx * k_cell + i]);
                    add_outer(&mut a, &w, 1.0);
                }
            }
            let b = ch.direct(c, k).ad_mul(&bank.g[c * k_cell + k]);
            let sol = constrained_minimizer(&[(a, b)], powers[k])?;
            out.x.push(sol.x.into_iter().next().expect("one term"));
            out.mu.push(sol.mu);
            out.boundary.push(sol.boundary);
        }
    }
    Ok(out)
}

/// Downlink precoders `t_k = (sum_{i seeing k} H_i r_i r_i^H H_i^H + mu I)^{-1} H_k r_k`
/// with one multiplier per BTS enforcing `sum_k ||t_k||^2 = P`.
pub fn downlink_tx_update(ch: &ChannelSet, bank: &FilterBank, bts_power: f64, kind: Kind) -> Result<TxUpdate> {
    let k_cell = ch.users_per_cell();
    let users = ch.num_cells() * k_cell;
    check_len("user receive filters", bank.r.len(), users)?;
    let order = &bank.order;
    let n = ch.bts_antennas();
    let mut out = TxUpdate {
        x: Vec::with_capacity(users),
        mu: Vec::with_capacity(ch.num_cells()),
        boundary: Vec::with_capacity(ch.num_cells()),
    };
    for c in 0..ch.num_cells() {
        // what user (c2, i) extracts from BTS c: H[c][c2][i] r_(c2,i)
        let sig: Vec<CVec> = (0..users)
            .map(|u| ch.link(c, u / k_cell, u % k_cell) * &bank.r[u])
            .collect();
        let mut other = CMat::zeros(n, n);
        for (u, s) in sig.iter().enumerate() {
            if u / k_cell != c {
                add_outer(&mut other, s, 1.0);
            }
        }
        let terms: Vec<(CMat, CVec)> = (0..k_cell)
            .map(|k| {
                let mut a = other.clone();
                for i in (0..k_cell).filter(|&i| kind.downlink_sees(order, i, k)) {
                    add_outer(&mut a, &sig[c * k_cell + i], 1.0);
                }
                (a, sig[c * k_cell + k].clone())
            })
            .collect();
        let sol = constrained_minimizer(&terms, bts_power)?;
        out.x.extend(sol.x);
        out.mu.push(sol.mu);
        out.boundary.push(sol.boundary);
    }
    Ok(out)
}

/// Downlink receive filters
/// `r_k = (sum_{seen i} H_k^H t_i t_i^H H_k + sigma_k^2 I)^{-1} H_k^H t_k`.
pub fn downlink_rx_update(ch: &ChannelSet, bank: &FilterBank, noise: &[f64], kind: Kind) -> Result<(Vec<CVec>, bool)> {
    let k_cell = ch.users_per_cell();
    let users = ch.num_cells() * k_cell;
    check_len("downlink precoders", bank.t.len(), users)?;
    check_len("user noise variances", noise.len(), k_cell)?;
    let order = &bank.order;
    let mut r = Vec::with_capacity(users);
    let mut ridged = false;
    for c in 0..ch.num_cells() {
        for k in 0..k_cell {
            let nk = ch.user_antennas(k);
            let mut cov = identity(nk) * c64(noise[k], 0.0);
            for c_tx in 0..ch.num_cells() {
                let h = ch.link(c_tx, c, k);
                for i in 0..k_cell {
                    if c_tx == c && !kind.downlink_sees(order, k, i) {
                        continue;
                    }
                    add_outer(&mut cov, &h.ad_mul(&bank.t[c_tx * k_cell + i]), 1.0);
                }
            }
            let rhs = ch.direct(c, k).ad_mul(&bank.t[c * k_cell + k]);
            let (rk, flag) = solve_hpd_vec(&cov, &rhs, RX_RIDGE)?;
            ridged |= flag;
            r.push(rk);
        }
    }
    Ok((r, ridged))
}

/// Relative residual of the uplink receive normal equations, worst over users.
pub fn uplink_rx_residual(ch: &ChannelSet, bank: &FilterBank, sigma2: f64, kind: Kind) -> f64 {
    let k_cell = ch.users_per_cell();
    let n = ch.bts_antennas();
    let mut worst: f64 = 0.0;
    for c in 0..ch.num_cells() {
        let sig = signatures_at(ch, c, &bank.v);
        for k in 0..k_cell {
            let mut cov = identity(n) * c64(sigma2, 0.0);
            for (u, s) in sig.iter().enumerate() {
                if u / k_cell != c || kind.uplink_sees(&bank.order, k, u % k_cell) {
                    add_outer(&mut cov, s, 1.0);
                }
            }
            let target = &sig[c * k_cell + k];
            let res = (&cov * &bank.g[c * k_cell + k] - target).norm() / target.norm().max(f64::MIN_POSITIVE);
            worst = worst.max(res);
        }
    }
    worst
}
