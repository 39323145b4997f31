//! Independent reference computations used by the integration tests.
//!
//! Nothing here calls the library's solvers: systems are solved by conjugate
//! gradients, constrained problems by projected gradient descent, and MSEs by
//! direct simulation of the signal model.

#![allow(dead_code)]

use bidir_mimo::channel::ChannelSet;
use bidir_mimo::filters::{FilterBank, Kind};
use bidir_mimo::linalg::{c64, CMat, CVec};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64(s * re, s * im)
}

pub fn gauss_vec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| gauss(rng, 1.0))
}

pub fn gauss_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |_, _| gauss(rng, 1.0))
}

pub fn qpsk(rng: &mut ChaCha8Rng) -> Complex64 {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    c64(if rng.random() { a } else { -a }, if rng.random() { a } else { -a })
}

/// Random Hermitian positive semidefinite matrix of the given rank.
pub fn psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> CMat {
    let x = gauss_mat(rng, n, rank);
    &x * x.adjoint()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn vec_rel(a: &CVec, b: &CVec) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Conjugate gradients for Hermitian positive definite `a`.
pub fn cg_solve(a: &CMat, b: &CVec) -> CVec {
    let mut x = CVec::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    let stop = 1e-30 * b.norm_squared().max(1e-300);
    for _ in 0..(20 * b.len() + 50) {
        if rs <= stop {
            break;
        }
        let ap = a * &p;
        let alpha = rs / p.dotc(&ap).re;
        x += &p * c64(alpha, 0.0);
        r -= &ap * c64(alpha, 0.0);
        let rs_new = r.norm_squared();
        p = &r + &p * c64(rs_new / rs, 0.0);
        rs = rs_new;
    }
    x
}

/// `x^H A x - 2 Re(b^H x)`.
pub fn quad(a: &CMat, b: &CVec, x: &CVec) -> f64 {
    x.dotc(&(a * x)).re - 2.0 * b.dotc(x).re
}

/// Minimises the sum of quadratics `x_j^H A_j x_j - 2 Re(b_j^H x_j)` over
/// `sum_j ||x_j||^2 = power` by projected gradient descent from `restarts`
/// random points; returns the best point and value.
pub fn sphere_min(terms: &[(CMat, CVec)], power: f64, restarts: usize, seed: u64) -> (Vec<CVec>, f64) {
    let mut rng = rng(seed);
    let lmax: f64 = terms.iter().map(|(a, _)| a.norm()).fold(0.0, f64::max);
    let bmax: f64 = terms.iter().map(|(_, b)| b.norm()).fold(0.0, f64::max);
    let step = 0.5 / (lmax + bmax / power.sqrt() + 1e-12);
    let mut best: Option<(Vec<CVec>, f64)> = None;
    let value = |xs: &[CVec]| terms.iter().zip(xs).map(|((a, b), x)| quad(a, b, x)).sum::<f64>();
    let project_all = |xs: Vec<CVec>| {
        let total: f64 = xs.iter().map(|x| x.norm_squared()).sum();
        let s = (power / total.max(1e-300)).sqrt();
        xs.into_iter().map(|x| x * c64(s, 0.0)).collect::<Vec<_>>()
    };
    for _ in 0..restarts {
        let mut xs = project_all(terms.iter().map(|(_, b)| gauss_vec(&mut rng, b.len())).collect());
        let mut f = value(&xs);
        for _ in 0..20000 {
            let cand = project_all(
                terms
                    .iter()
                    .zip(&xs)
                    .map(|((a, b), x)| x - (a * x - b) * c64(2.0 * step, 0.0))
                    .collect(),
            );
            let fc = value(&cand);
            let done = (f - fc).abs() <= 1e-15 * f.abs().max(1.0);
            xs = cand;
            f = fc;
            if done {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((xs, f));
        }
    }
    best.expect("at least one restart")
}

/// Single-vector convenience wrapper around [`sphere_min`].
pub fn sphere_min_one(a: &CMat, b: &CVec, power: f64, restarts: usize, seed: u64) -> (CVec, f64) {
    let (mut xs, f) = sphere_min(&[(a.clone(), b.clone())], power, restarts, seed);
    (xs.remove(0), f)
}

/// Monte Carlo uplink MSEs with QPSK symbols, complex Gaussian noise and
/// genie-aided cancellation of the users the structure removes.
pub fn mc_uplink_mses(ch: &ChannelSet, bank: &FilterBank, sigma2: f64, kind: Kind, draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    let k_cell = ch.users_per_cell();
    let users = ch.num_cells() * k_cell;
    let n = ch.bts_antennas();
    let sig: Vec<Vec<CVec>> = (0..ch.num_cells())
        .map(|c| (0..users).map(|j| ch.link(c, j / k_cell, j % k_cell) * &bank.v[j]).collect())
        .collect();
    let mut acc = vec![0.0; users];
    for _ in 0..draws {
        let s: Vec<Complex64> = (0..users).map(|_| qpsk(&mut rng)).collect();
        for c in 0..ch.num_cells() {
            let mut y = CVec::from_fn(n, |_, _| gauss(&mut rng, sigma2));
            for j in 0..users {
                y += &sig[c][j] * s[j];
            }
            for k in 0..k_cell {
                let u = c * k_cell + k;
                let mut est = bank.g[u].dotc(&y);
                if kind == Kind::Successive {
                    for i in bank.order.before(k) {
                        est -= bank.g[u].dotc(&sig[c][c * k_cell + i]) * s[c * k_cell + i];
                    }
                }
                acc[u] += (s[u] - est).norm_sqr();
            }
        }
    }
    acc.into_iter().map(|a| a / draws as f64).collect()
}

/// `sum_i log2(1 + lambda_i / sigma2)` over the eigenvalues of `H H^H`,
/// eigenvalues found by Jacobi rotations on the real embedding.
pub fn spectral_logdet(h: &CMat, sigma2: f64) -> f64 {
    let g = h * h.adjoint();
    let n = g.nrows();
    let mut m = nalgebra::DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = g[(i, j)];
            m[(i, j)] = z.re;
            m[(i + n, j + n)] = z.re;
            m[(i, j + n)] = -z.im;
            m[(i + n, j)] = z.im;
        }
    }
    let eig = jacobi_eigenvalues(m);
    // the real embedding doubles every eigenvalue
    eig.iter().map(|l| (1.0 + l.max(0.0) / sigma2).log2()).sum::<f64>() / 2.0
}

/// Cyclic Jacobi eigenvalues of a real symmetric matrix.
pub fn jacobi_eigenvalues(mut a: nalgebra::DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-28 * a.norm_squared().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut v: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Uplink receive-filter oracle: the Wiener filter of user `u` from the
/// covariance assembled link by link and solved by conjugate gradients.
pub fn wiener_uplink(ch: &ChannelSet, bank: &FilterBank, sigma2: f64, kind: Kind, u: usize) -> CVec {
    let k_cell = ch.users_per_cell();
    let (c, k) = (u / k_cell, u % k_cell);
    let n = ch.bts_antennas();
    let mut cov = CMat::identity(n, n) * c64(sigma2, 0.0);
    for j in 0..ch.num_cells() * k_cell {
        let cancelled = kind == Kind::Successive && j / k_cell == c && bank.order.before(k).contains(&(j % k_cell));
        if !cancelled {
            let s = ch.link(c, j / k_cell, j % k_cell) * &bank.v[j];
            cov += &s * s.adjoint();
        }
    }
    cg_solve(&cov, &(ch.direct(c, k) * &bank.v[u]))
}
