//! Bi-directional training without channel knowledge.
//!
//! A forward round has every user send pilots through its current precoder;
//! each BTS fits its receive filters (and, for successive decoding, the
//! feedback taps) by least squares. A backward round has each BTS send pilots
//! through its receive filters, reused as precoders under reciprocity; each
//! user fits its filter by norm-constrained least squares and reuses it as
//! the uplink precoder of the next forward round.
//!
//! Three backward variants exist. `Linear` trains all users at once.
//! `SequentialIpc` schedules the pilots in layers so user `k` only hears the
//! streams it would see under interference pre-compensation. `Thp` trains all
//! users at once but Tomlinson-Harashima encodes the pilots, so each user
//! must detect the modulo offsets before fitting its filter.
//!
//! With `oracle_updates` both rounds are replaced by the exact MMSE updates,
//! which is the infinite-pilot limit.

use std::f64::consts::SQRT_2;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::filters::{DecodingOrder, Direction, FilterBank, Kind, Structure};
use crate::linalg::{c64, hermitian_eigenvalues, hermitize, identity, row_vec, solve_hpd, trace_re, CMat, CVec};
use crate::mmse::{uplink_rx_update, uplink_tx_update, UplinkRx};
use crate::multiplier::constrained_minimizer;
use crate::objectives::{sum_mse, user_sinr_rates};
use crate::rng::{derive_seed, stream, Domain};

/// Modulo base for unit-power QPSK: twice the per-dimension spacing.
pub const DEFAULT_TAU: f64 = 2.0 * SQRT_2;
/// Bias factors below this magnitude make THP feedback meaningless.
pub const BIAS_FLOOR: f64 = 1e-6;
/// Ridge added to a rank-deficient pilot Gram matrix, relative to `trace/dim`.
pub const LS_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    Linear,
    SequentialIpc,
    Thp,
}

impl TrainingMode {
    /// Receiver structure trained at the BTS.
    pub fn kind(self) -> Kind {
        match self {
            TrainingMode::Linear => Kind::Linear,
            TrainingMode::SequentialIpc | TrainingMode::Thp => Kind::Successive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Pilot symbols per round.
    pub n: usize,
    /// Forward-backward iterations.
    pub rounds: usize,
    pub mode: TrainingMode,
    /// Fixed downlink pilot power. When absent each BTS uses
    /// `P / sum_k ||g_k||^2` so the power constraint holds with equality.
    pub gamma: Option<f64>,
    pub tau: f64,
    pub seed: u64,
    pub oracle_updates: bool,
    /// Row-orthogonal QPSK pilots (needs `n` to be a multiple of a power of
    /// two no smaller than the number of streams).
    pub orthogonal_pilots: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            n: 20,
            rounds: 2,
            mode: TrainingMode::Thp,
            gamma: None,
            tau: DEFAULT_TAU,
            seed: 0,
            oracle_updates: false,
            orthogonal_pilots: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("pilot length must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("modulo base must be positive".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::Config("gamma must be positive".into()));
            }
        }
        Ok(())
    }

    /// Shortest pilot block that keeps the BTS least-squares system full rank.
    pub fn min_pilots(&self, bts_antennas: usize, users_per_cell: usize) -> usize {
        match self.mode.kind() {
            Kind::Linear => bts_antennas,
            Kind::Successive => bts_antennas + users_per_cell - 1,
        }
    }
}

/// Pilots, received samples and modulo offsets of one downlink THP round.
#[derive(Debug, Clone)]
pub struct PilotBlock {
    /// `K x n` QPSK pilots.
    pub s: CMat,
    /// `K x n` transmitted (encoded) symbols.
    pub encoded: CMat,
    /// `K x n` offsets added by the modulo.
    pub z: CMat,
    pub alpha_hat: Vec<Complex64>,
}

/// i.i.d. uniform QPSK pilots, components `+-1/sqrt(2)`.
pub fn gen_pilots(k: usize, n: usize, seed: u64) -> CMat {
    let mut rng = stream(seed, Domain::Pilots, &[]);
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let mut s = CMat::zeros(k, n);
    for col in 0..n {
        for row in 0..k {
            let re = if rng.random::<bool>() { a } else { -a };
            let im = if rng.random::<bool>() { a } else { -a };
            s[(row, col)] = c64(re, im);
        }
    }
    s
}

/// QPSK pilots with mutually orthogonal rows: Walsh rows tiled over `n`, each
/// column rotated by a common random QPSK symbol.
pub fn orthogonal_pilots(k: usize, n: usize, seed: u64) -> Result<CMat> {
    let m = k.max(1).next_power_of_two();
    if !n.is_multiple_of(m) {
        return Err(Error::Config(format!("orthogonal pilots need n divisible by {m}, got {n}")));
    }
    let common = gen_pilots(1, n, seed);
    Ok(CMat::from_fn(k, n, |row, col| {
        let sign = if (row & (col % m)).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
        common[(0, col)] * sign
    }))
}

fn pilots(cfg: &TrainingConfig, streams: usize, keys: &[u64]) -> Result<CMat> {
    let seed = derive_seed(cfg.seed, keys);
    if cfg.orthogonal_pilots {
        orthogonal_pilots(streams, cfg.n, seed)
    } else {
        Ok(gen_pilots(streams, cfg.n, seed))
    }
}

/// Samples at every BTS when all users send their row of `s` (global user
/// order) through their precoder `v`.
pub fn simulate_uplink_rx(ch: &ChannelSet, v: &[CVec], s: &CMat, sigma2: f64, seed: u64) -> Result<Vec<CMat>> {
    let k_cell = ch.users_per_cell();
    let users = ch.num_cells() * k_cell;
    if v.len() != users || s.nrows() != users {
        return Err(Error::Shape(format!(
            "{} precoders and {} pilot rows for {users} users",
            v.len(),
            s.nrows()
        )));
    }
    let n = s.ncols();
    let mut rng = stream(seed, Domain::Noise, &[]);
    (0..ch.num_cells())
        .map(|c| {
            let mut y = crate::linalg::cscg_matrix(&mut rng, ch.bts_antennas(), n, sigma2);
            for u in 0..users {
                let sig = ch.link(c, u / k_cell, u % k_cell) * &v[u];
                y += &sig * s.row(u);
            }
            Ok(y)
        })
        .collect()
}

/// Samples at user `u` when every stream `j` with `active[j]` is sent with
/// precoder `t[j]` and symbols `x.row(j)`.
pub fn downlink_samples<R: Rng + ?Sized>(
    ch: &ChannelSet,
    t: &[CVec],
    x: &CMat,
    active: &[bool],
    u: usize,
    noise: f64,
    rng: &mut R,
) -> CMat {
    let k_cell = ch.users_per_cell();
    let (c, k) = (u / k_cell, u % k_cell);
    let mut y = crate::linalg::cscg_matrix(rng, ch.user_antennas(k), x.ncols(), noise);
    for (j, tj) in t.iter().enumerate() {
        if active[j] {
            let sig = ch.link(j / k_cell, c, k).ad_mul(tj);
            y += &sig * x.row(j);
        }
    }
    y
}

/// Solves `gram x = rhs`, adding the least-squares ridge when `gram` is
/// numerically rank deficient.
fn gram_solve(gram: &CMat, rhs: &CMat) -> Result<(CMat, bool)> {
    let gram = hermitize(gram);
    let dim = gram.nrows();
    let scale = trace_re(&gram) / dim as f64;
    let lmin = hermitian_eigenvalues(&gram)[0];
    if scale > 0.0 && lmin > LS_RIDGE * scale {
        return Ok((solve_hpd(&gram, rhs, LS_RIDGE)?.x, false));
    }
    let reg = gram + identity(dim) * c64(LS_RIDGE * scale.max(f64::MIN_POSITIVE), 0.0);
    Ok((solve_hpd(&reg, rhs, LS_RIDGE)?.x, true))
}

/// Least-squares BTS filters of one cell.
#[derive(Debug, Clone)]
pub struct LsRx {
    pub g: Vec<CVec>,
    /// Unit-diagonal feedback, `b_ki` for users `i` decoded before `k`.
    pub feedback: CMat,
    pub ridged: bool,
}

/// Fits the receive filters of one BTS from its samples `y` (`N x n`) and the
/// own-cell pilots `s` (`K x n`). Linear: `g_k = (Y Y^H)^{-1} Y s_k^H`.
/// Successive: `[g_k; -b_k^H]` solves the same normal equations with the
/// pilots of earlier-decoded users stacked under `Y`.
pub fn ls_bts_rx(y: &CMat, s: &CMat, kind: Kind, order: &DecodingOrder) -> Result<LsRx> {
    let k_cell = s.nrows();
    if y.ncols() != s.ncols() || order.len() != k_cell {
        return Err(Error::Shape(format!(
            "samples {}x{}, pilots {}x{}, order of {}",
            y.nrows(),
            y.ncols(),
            s.nrows(),
            s.ncols(),
            order.len()
        )));
    }
    let n_ant = y.nrows();
    let mut feedback = CMat::identity(k_cell, k_cell);
    let mut ridged = false;
    let g = match kind {
        Kind::Linear => {
            let (x, r) = gram_solve(&(y * y.adjoint()), &(y * s.adjoint()))?;
            ridged = r;
            (0..k_cell).map(|k| x.column(k).into_owned()).collect()
        }
        Kind::Successive => {
            let mut g = vec![CVec::zeros(n_ant); k_cell];
            for k in 0..k_cell {
                let prev = order.before(k);
                let mut x = CMat::zeros(n_ant + prev.len(), y.ncols());
                x.rows_mut(0, n_ant).copy_from(y);
                for (row, &i) in prev.iter().enumerate() {
                    x.row_mut(n_ant + row).copy_from(&s.row(i));
                }
                let target = s.row(k).adjoint();
                let (w, r) = gram_solve(&(&x * x.adjoint()), &CMat::from_column_slice(x.nrows(), 1, (&x * target).as_slice()))?;
                ridged |= r;
                g[k] = w.rows(0, n_ant).column(0).into_owned();
                for (row, &i) in prev.iter().enumerate() {
                    feedback[(k, i)] = -w[(n_ant + row, 0)].conj();
                }
            }
            g
        }
    };
    Ok(LsRx { g, feedback, ridged })
}

/// DFD outputs `s_hat_k = g_k^H Y - sum_{i before k} b_ki s_i` with known pilots.
pub fn dfd_outputs(y: &CMat, s: &CMat, g: &[CVec], feedback: &CMat, order: &DecodingOrder) -> CMat {
    let mut out = CMat::zeros(g.len(), y.ncols());
    for (k, gk) in g.iter().enumerate() {
        let mut row = gk.adjoint() * y;
        for i in order.before(k) {
            row -= s.row(i) * feedback[(k, i)];
        }
        out.row_mut(k).copy_from(&row);
    }
    out
}

/// `alpha_hat = s_hat s^H / n`.
pub fn estimate_bias(s_hat: &CVec, s: &CVec) -> Complex64 {
    s.dotc(s_hat) / c64(s.len() as f64, 0.0)
}

/// Wraps each real dimension into `[-tau/2, tau/2)`; returns `(wrapped, offset)`
/// with `wrapped = x + offset`.
pub fn modulo(x: Complex64, tau: f64) -> (Complex64, Complex64) {
    let shift = |v: f64| -tau * ((v + tau / 2.0) / tau).floor();
    let z = c64(shift(x.re), shift(x.im));
    (x + z, z)
}

/// Tomlinson-Harashima encoding of the `K x n` pilots. Users are processed
/// from last decoded to first; user `k` pre-subtracts
/// `conj(b_ik / alpha_hat_k) s_enc_i` for every user `i` decoded after it.
/// Returns the encoded symbols and the offsets `Z` (`s_enc_k = Z_k + s_k - ...`).
pub fn thp_encode(s: &CMat, feedback: &CMat, alpha_hat: &[Complex64], tau: f64, order: &DecodingOrder) -> Result<(CMat, CMat)> {
    let k_cell = s.nrows();
    if feedback.nrows() != k_cell || alpha_hat.len() != k_cell || order.len() != k_cell {
        return Err(Error::Shape("THP inputs disagree on the number of users".into()));
    }
    for (user, a) in alpha_hat.iter().enumerate() {
        if a.norm() < BIAS_FLOOR {
            return Err(Error::BiasDegenerate {
                user,
                magnitude: a.norm(),
            });
        }
    }
    let n = s.ncols();
    let mut enc = CMat::zeros(k_cell, n);
    let mut z = CMat::zeros(k_cell, n);
    for &k in order.as_slice().iter().rev() {
        let taps: Vec<(usize, Complex64)> = (0..k_cell)
            .filter(|&i| order.precedes(k, i))
            .map(|i| (i, (feedback[(i, k)] / alpha_hat[k]).conj()))
            .collect();
        for col in 0..n {
            let mut x = s[(k, col)];
            for &(i, c) in &taps {
                x -= c * enc[(i, col)];
            }
            let (w, off) = modulo(x, tau);
            enc[(k, col)] = w;
            z[(k, col)] = off;
        }
    }
    Ok((enc, z))
}

/// Slices `u / gain - s` to the nearest multiple of `tau` per real dimension.
pub fn detect_offsets(u: &CVec, gain: Complex64, s: &CVec, tau: f64) -> CVec {
    CVec::from_iterator(
        u.len(),
        u.iter().zip(s.iter()).map(|(&x, &sk)| {
            let d = x / gain - sk;
            c64(tau * (d.re / tau).round(), tau * (d.im / tau).round())
        }),
    )
}

/// User filter `v = (Y Y^H + mu I)^{-1} Y d^H` with `||v||^2 = power`.
pub fn ls_user_rx(y: &CMat, d: &CVec, power: f64) -> Result<CVec> {
    if y.ncols() != d.len() {
        return Err(Error::Shape(format!("{} samples for {} desired symbols", y.ncols(), d.len())));
    }
    let a = hermitize(&(y * y.adjoint()));
    let b = y * d.conjugate();
    let sol = constrained_minimizer(&[(a, b)], power)?;
    Ok(sol.x.into_iter().next().expect("one term"))
}

/// Downlink pilot power per BTS making `sum_k gamma ||g_k||^2 = P`.
pub fn training_gamma(ch: &ChannelSet, g: &[CVec]) -> Vec<f64> {
    let k_cell = ch.users_per_cell();
    (0..ch.num_cells())
        .map(|c| {
            let p: f64 = g[c * k_cell..(c + 1) * k_cell].iter().map(|x| x.norm_squared()).sum();
            if p > 0.0 {
                ch.spec().bts_power / p
            } else {
                0.0
            }
        })
        .collect()
}

/// One forward round: uplink pilots, BTS least squares, bias estimates.
pub fn forward_round(ch: &ChannelSet, bank: &FilterBank, cfg: &TrainingConfig, round: u64) -> Result<UplinkRx> {
    let kind = cfg.mode.kind();
    if cfg.oracle_updates {
        return uplink_rx_update(ch, bank, ch.spec().uplink_noise_var, kind);
    }
    let k_cell = ch.users_per_cell();
    let users = ch.num_cells() * k_cell;
    let s = pilots(cfg, users, &[round, 0])?;
    let y = simulate_uplink_rx(ch, &bank.v, &s, ch.spec().uplink_noise_var, derive_seed(cfg.seed, &[round, 0]))?;
    let mut out = UplinkRx {
        g: Vec::with_capacity(users),
        feedback: Vec::with_capacity(ch.num_cells()),
        alpha: Vec::with_capacity(users),
        ridged: false,
    };
    for (c, yc) in y.iter().enumerate() {
        let sc = s.rows(c * k_cell, k_cell).into_owned();
        let ls = ls_bts_rx(yc, &sc, kind, &bank.order)?;
        let s_hat = dfd_outputs(yc, &sc, &ls.g, &ls.feedback, &bank.order);
        for k in 0..k_cell {
            out.alpha.push(estimate_bias(&row_vec(&s_hat, k), &row_vec(&sc, k)));
        }
        out.ridged |= ls.ridged;
        out.g.extend(ls.g);
        out.feedback.push(ls.feedback);
    }
    Ok(out)
}

/// Streams sent in the sequential slot that trains layer `layer` of cell `c`:
/// that cell's first `layer + 1` users in decoding order and every stream of
/// the other cells.
pub fn sequential_active(cells: usize, k_cell: usize, order: &DecodingOrder, c: usize, layer: usize) -> Vec<bool> {
    (0..cells * k_cell)
        .map(|j| j / k_cell != c || order.rank(j % k_cell) <= layer)
        .collect()
}

/// Result of one backward round.
#[derive(Debug, Clone)]
pub struct BackwardRound {
    pub v: Vec<CVec>,
    /// Downlink pilot power used by each BTS.
    pub gamma: Vec<f64>,
    /// Offset decisions that differ from the encoder's offsets (THP only).
    pub offset_errors: usize,
    pub offset_symbols: usize,
}

/// One backward round: BTSs send pilots through `sqrt(gamma) g_k`, users
/// fit their filters. Uses `bank.feedback` and `bank.alpha` in THP mode and
/// the current `bank.v` as the users' offset-detection filters.
pub fn backward_round(ch: &ChannelSet, bank: &FilterBank, cfg: &TrainingConfig, round: u64) -> Result<BackwardRound> {
    let spec = ch.spec();
    let k_cell = ch.users_per_cell();
    let users = ch.num_cells() * k_cell;
    let kind = cfg.mode.kind();
    if cfg.oracle_updates {
        let tx = uplink_tx_update(ch, bank, &spec.user_powers, kind)?;
        return Ok(BackwardRound {
            v: tx.x,
            gamma: training_gamma(ch, &bank.g),
            offset_errors: 0,
            offset_symbols: 0,
        });
    }
    let gamma = match cfg.gamma {
        Some(g) => vec![g; ch.num_cells()],
        None => training_gamma(ch, &bank.g),
    };
    let t: Vec<CVec> = bank
        .g
        .iter()
        .enumerate()
        .map(|(u, g)| g * c64(gamma[u / k_cell].sqrt(), 0.0))
        .collect();
    let noise = |u: usize| spec.user_noise_vars[u % k_cell];
    let power = |u: usize| spec.user_powers[u % k_cell];
    let desired = |u: usize, s: &CMat| row_vec(s, u) * c64(gamma[u / k_cell].sqrt(), 0.0);
    let mut out = BackwardRound {
        v: Vec::with_capacity(users),
        gamma: gamma.clone(),
        offset_errors: 0,
        offset_symbols: 0,
    };
    match cfg.mode {
        TrainingMode::Linear => {
            let s = pilots(cfg, users, &[round, 1])?;
            let mut rng = stream(cfg.seed, Domain::Noise, &[round, 1]);
            let active = vec![true; users];
            for u in 0..users {
                let y = downlink_samples(ch, &t, &s, &active, u, noise(u), &mut rng);
                out.v.push(ls_user_rx(&y, &desired(u, &s), power(u))?);
            }
        }
        TrainingMode::SequentialIpc => {
            // One slot per (cell, layer): the cell sends its first `layer + 1`
            // streams while every other cell sends all of its streams.
            out.v = vec![CVec::zeros(0); users];
            for c in 0..ch.num_cells() {
                for (layer, &k) in bank.order.as_slice().iter().enumerate() {
                    let slot = (c * k_cell + layer) as u64;
                    let s = pilots(cfg, users, &[round, 1, slot])?;
                    let mut rng = stream(cfg.seed, Domain::Noise, &[round, 1, slot]);
                    let active = sequential_active(ch.num_cells(), k_cell, &bank.order, c, layer);
                    let u = c * k_cell + k;
                    let y = downlink_samples(ch, &t, &s, &active, u, noise(u), &mut rng);
                    out.v[u] = ls_user_rx(&y, &desired(u, &s), power(u))?;
                }
            }
        }
        TrainingMode::Thp => {
            let s = pilots(cfg, users, &[round, 1])?;
            let mut x = CMat::zeros(users, cfg.n);
            let mut z = CMat::zeros(users, cfg.n);
            for c in 0..ch.num_cells() {
                let range = c * k_cell..(c + 1) * k_cell;
                let sc = s.rows(c * k_cell, k_cell).into_owned();
                let (enc, zc) = thp_encode(&sc, &bank.feedback[c], &bank.alpha[range], cfg.tau, &bank.order)?;
                x.rows_mut(c * k_cell, k_cell).copy_from(&enc);
                z.rows_mut(c * k_cell, k_cell).copy_from(&zc);
            }
            let mut rng = stream(cfg.seed, Domain::Noise, &[round, 1]);
            let active = vec![true; users];
            for u in 0..users {
                let y = downlink_samples(ch, &t, &x, &active, u, noise(u), &mut rng);
                let sk = row_vec(&s, u);
                let filtered = y.adjoint() * &bank.v[u];
                let filtered = filtered.conjugate();
                let gain = bank.alpha[u].conj() * c64(gamma[u / k_cell].sqrt(), 0.0);
                let z_hat = detect_offsets(&filtered, gain, &sk, cfg.tau);
                let z_true = row_vec(&z, u);
                out.offset_errors += z_hat
                    .iter()
                    .zip(z_true.iter())
                    .filter(|(a, b)| (*a - *b).norm() > 1e-9 * cfg.tau)
                    .count();
                out.offset_symbols += cfg.n;
                let d = (z_hat + sk) * c64(gamma[u / k_cell].sqrt(), 0.0);
                out.v.push(ls_user_rx(&y, &d, power(u))?);
            }
        }
    }
    Ok(out)
}

/// Outcome of [`bidirectional_train`].
#[derive(Debug, Clone)]
pub struct TrainingResult {
    /// Final bank; `g`, `feedback` and `alpha` come from a closing forward round
    /// matched to the final precoders.
    pub bank: FilterBank,
    /// Uplink sum MSE after each forward and each backward round, then after the
    /// closing forward round (`2 * rounds + 1` values).
    pub mse_trajectory: Vec<f64>,
    /// Uplink sum rate (bits, all cells) after each round, evaluated with the
    /// filters of the following forward round.
    pub round_rates: Vec<f64>,
    pub offset_errors: usize,
    pub offset_symbols: usize,
    /// Some least-squares system needed the ridge fallback.
    pub ridged: bool,
}

impl TrainingResult {
    pub fn sum_rate(&self) -> f64 {
        self.round_rates.last().copied().unwrap_or(0.0)
    }

    pub fn offset_error_rate(&self) -> Option<f64> {
        (self.offset_symbols > 0).then(|| self.offset_errors as f64 / self.offset_symbols as f64)
    }
}

/// Runs `rounds` forward-backward iterations from the precoders in `initial`
/// and closes with one more forward round.
pub fn bidirectional_train(ch: &ChannelSet, cfg: &TrainingConfig, initial: FilterBank) -> Result<TrainingResult> {
    cfg.validate()?;
    let structure = Structure::new(cfg.mode.kind(), Direction::Uplink);
    let mut bank = initial;
    let mut res = TrainingResult {
        bank: bank.clone(),
        mse_trajectory: Vec::with_capacity(2 * cfg.rounds + 1),
        round_rates: Vec::with_capacity(cfg.rounds),
        offset_errors: 0,
        offset_symbols: 0,
        ridged: false,
    };
    let apply = |bank: &mut FilterBank, rx: UplinkRx| {
        bank.g = rx.g;
        bank.feedback = rx.feedback;
        bank.alpha = rx.alpha;
    };
    for round in 0..cfg.rounds as u64 {
        let rx = forward_round(ch, &bank, cfg, 2 * round)?;
        res.ridged |= rx.ridged;
        apply(&mut bank, rx);
        if round > 0 {
            res.round_rates.push(user_sinr_rates(ch, &bank, structure).iter().sum());
        }
        res.mse_trajectory.push(sum_mse(ch, &bank, structure));
        let back = backward_round(ch, &bank, cfg, 2 * round + 1)?;
        res.offset_errors += back.offset_errors;
        res.offset_symbols += back.offset_symbols;
        bank.v = back.v;
        res.mse_trajectory.push(sum_mse(ch, &bank, structure));
    }
    let rx = forward_round(ch, &bank, cfg, 2 * cfg.rounds as u64)?;
    res.ridged |= rx.ridged;
    apply(&mut bank, rx);
    res.round_rates.push(user_sinr_rates(ch, &bank, structure).iter().sum());
    res.mse_trajectory.push(sum_mse(ch, &bank, structure));
    res.bank = bank;
    Ok(res)
}

/// Largest THP cross-term left at any user relative to its gain:
/// `|conj(g_i^H H_k v_k) - conj(alpha_k) conj(b_ik / alpha_k)|` over streams `i`
/// pre-compensated for user `k`, using the bank's own feedback and biases.
pub fn thp_residual_interference(ch: &ChannelSet, bank: &FilterBank) -> f64 {
    let k_cell = ch.users_per_cell();
    let mut worst: f64 = 0.0;
    for c in 0..ch.num_cells() {
        for k in 0..k_cell {
            let u = c * k_cell + k;
            let hv = ch.direct(c, k) * &bank.v[u];
            let alpha = bank.alpha[u];
            for i in (0..k_cell).filter(|&i| bank.order.precedes(k, i)) {
                let actual = bank.g[c * k_cell + i].dotc(&hv).conj();
                let removed = alpha.conj() * (bank.feedback[c][(i, k)] / alpha).conj();
                worst = worst.max((actual - removed).norm() / alpha.norm());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::TopologySpec;

    #[test]
    fn pilots_are_unit_qpsk() {
        let s = gen_pilots(3, 50, 7);
        assert!(s.iter().all(|x| (x.norm_sqr() - 1.0).abs() < 1e-15));
        assert!(s.iter().all(|x| (x.re.abs() - 0.5f64.sqrt()).abs() < 1e-15));
        assert_eq!(s, gen_pilots(3, 50, 7));
    }

    #[test]
    fn orthogonal_rows() {
        let s = orthogonal_pilots(3, 8, 1).unwrap();
        let gram = &s * s.adjoint();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 8.0 } else { 0.0 };
                assert!((gram[(i, j)] - c64(want, 0.0)).norm() < 1e-12);
            }
        }
        assert!(orthogonal_pilots(3, 6, 1).is_err());
    }

    #[test]
    fn scalar_ls() {
        let s = gen_pilots(1, 10, 3);
        let y = &s * c64(2.0, 0.0);
        let ls = ls_bts_rx(&y, &s, Kind::Linear, &DecodingOrder::natural(1)).unwrap();
        assert!((ls.g[0][0] - c64(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn bias_of_scaled_pilots() {
        let s = row_vec(&gen_pilots(1, 16, 9), 0);
        assert!((estimate_bias(&(&s * c64(0.7, 0.0)), &s) - c64(0.7, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn thp_hand_example() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = CMat::from_row_slice(2, 1, &[c64(h, h), c64(h, -h)]);
        let mut b = CMat::identity(2, 2);
        b[(1, 0)] = c64(DEFAULT_TAU, 0.0);
        let alpha = [c64(1.0, 0.0), c64(1.0, 0.0)];
        let (enc, z) = thp_encode(&s, &b, &alpha, DEFAULT_TAU, &DecodingOrder::natural(2)).unwrap();
        assert_eq!(enc[(1, 0)], s[(1, 0)]);
        assert!((enc[(0, 0)] - c64(-1.292_893_2, -0.121_320_3)).norm() < 1e-6);
        assert!((z[(0, 0)] - c64(0.0, -DEFAULT_TAU)).norm() < 1e-15);
    }

    #[test]
    fn degenerate_bias_rejected() {
        let s = gen_pilots(2, 4, 1);
        let r = thp_encode(&s, &CMat::identity(2, 2), &[c64(1.0, 0.0), c64(1e-9, 0.0)], DEFAULT_TAU, &DecodingOrder::natural(2));
        assert!(matches!(r, Err(Error::BiasDegenerate { user: 1, .. })));
    }

    #[test]
    fn user_filter_meets_power() {
        let s = row_vec(&gen_pilots(1, 12, 2), 0);
        let y = CMat::from_fn(1, 12, |_, c| s[c] * c64(2.0, 0.0));
        let v = ls_user_rx(&y, &s, 1.0).unwrap();
        assert!((v.norm_squared() - 1.0).abs() < 1e-9);
        assert!(v[0].re > 0.0);
    }

    #[test]
    fn trained_run_is_deterministic() {
        let spec = TopologySpec::single_cell(2, 2, 2, 0.1);
        let ch = crate::channel::sample_channels(&spec, 3).unwrap();
        let cfg = TrainingConfig {
            mode: TrainingMode::Linear,
            ..TrainingConfig::default()
        };
        let a = bidirectional_train(&ch, &cfg, FilterBank::initial(&spec, Default::default())).unwrap();
        let b = bidirectional_train(&ch, &cfg, FilterBank::initial(&spec, Default::default())).unwrap();
        assert_eq!(a.mse_trajectory, b.mse_trajectory);
        assert_eq!(a.mse_trajectory.len(), 5);
        assert_eq!(a.round_rates.len(), 2);
    }
}
