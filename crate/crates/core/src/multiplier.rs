//! Lagrange multiplier for squared-norm equality constraints.
//!
//! Every transmit-side update has the form `x_j = (A_j + mu I)^{-1} b_j` with
//! `sum_j ||x_j||^2 = target` (one term per user for a per-user constraint, one
//! term per stream for a sum-power constraint). In the eigenbases of the `A_j`
//!
//! ```text
//!     f(mu) = sum_j sum_i |u_ji^H b_j|^2 / (lambda_ji + mu)^2
//! ```
//!
//! is strictly decreasing for `mu > -lambda_min`, so bisection finds the unique
//! root there. When `b` has no energy on the bottom eigenspace the supremum of
//! `f` is finite; [`constrained_minimizer`] then returns the boundary solution
//! `mu = -lambda_min` with the missing power placed on a bottom eigenvector,
//! which is the global minimizer of the quadratic on the sphere.

use crate::error::{Error, Result};
use crate::linalg::{c64, hermitian_eigen, trace_re, CMat, CVec};

/// Weights below this fraction of `||b||^2` are treated as round-off.
const WEIGHT_FLOOR: f64 = 1e-26;
/// Eigenvalues within this fraction of the spectral scale of `lambda_min` share its eigenspace.
const CLUSTER_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Component {
    lambda: f64,
    weight: f64,
}

struct Term {
    values: Vec<f64>,
    vectors: CMat,
    coeffs: Vec<num_complex::Complex64>,
}

/// Eigen-expanded secular function for a block-diagonal quadratic.
pub struct SecularFunction {
    terms: Vec<Term>,
    components: Vec<Component>,
    lambda_min: f64,
    /// Closest approach to the pole, `1e-12 * trace/dim`.
    eps: f64,
    bottom_has_weight: bool,
}

impl SecularFunction {
    pub fn new(terms: &[(CMat, CVec)]) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Shape("multiplier problem without terms".into()));
        }
        let mut out = Vec::with_capacity(terms.len());
        let mut total_trace = 0.0;
        let mut total_dim = 0usize;
        let mut b_energy = 0.0;
        for (a, b) in terms {
            if a.nrows() != a.ncols() || a.nrows() != b.len() {
                return Err(Error::Shape(format!(
                    "quadratic term {}x{} with vector of length {}",
                    a.nrows(),
                    a.ncols(),
                    b.len()
                )));
            }
            let eig = hermitian_eigen(a);
            let coeffs = (0..b.len()).map(|i| eig.vectors.column(i).dotc(b)).collect();
            total_trace += trace_re(a);
            total_dim += a.nrows();
            b_energy += b.norm_squared();
            out.push(Term {
                values: eig.values,
                vectors: eig.vectors,
                coeffs,
            });
        }
        let lambda_min = out
            .iter()
            .flat_map(|t| t.values.iter().copied())
            .fold(f64::INFINITY, f64::min);
        let lambda_max = out
            .iter()
            .flat_map(|t| t.values.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max);
        let scale = lambda_max.abs().max(lambda_min.abs()).max(f64::MIN_POSITIVE);
        let floor = WEIGHT_FLOOR * b_energy;
        let mut components = Vec::new();
        let mut bottom_has_weight = false;
        for t in &mut out {
            for (i, c) in t.coeffs.iter_mut().enumerate() {
                let w = c.norm_sqr();
                if w <= floor {
                    *c = c64(0.0, 0.0);
                    continue;
                }
                if t.values[i] - lambda_min <= CLUSTER_TOL * scale {
                    bottom_has_weight = true;
                }
                components.push(Component {
                    lambda: t.values[i],
                    weight: w,
                });
            }
        }
        let eps = (1e-12 * total_trace / total_dim as f64).abs().max(1e-300);
        Ok(Self {
            terms: out,
            components,
            lambda_min,
            eps,
            bottom_has_weight,
        })
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Aggregate squared norm `sum_j ||(A_j + mu I)^{-1} b_j||^2`.
    pub fn eval(&self, mu: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let d = c.lambda + mu;
                c.weight / (d * d)
            })
            .sum()
    }

    /// Supremum of the aggregate over the positive-definite region.
    pub fn supremum(&self) -> f64 {
        if self.bottom_has_weight {
            f64::INFINITY
        } else {
            self.eval(-self.lambda_min)
        }
    }

    /// Unique `mu > -lambda_min` with `eval(mu) = target`.
    pub fn solve(&self, target: f64) -> Result<f64> {
        if !(target.is_finite() && target > 0.0) {
            return Err(Error::Config(format!("target power must be positive, got {target}")));
        }
        let lower = -self.lambda_min;
        let sup = self.supremum();
        if self.components.is_empty() || (!self.bottom_has_weight && sup <= target) {
            return Err(Error::Infeasible {
                target,
                supremum: sup,
            });
        }
        // upper bracket: double away from max(0, lower)
        let base = lower.max(0.0);
        let mut step = self.eps.max(1e-3 * (1.0 + lower.abs()));
        let mut hi = base + step;
        while self.eval(hi) > target {
            step *= 2.0;
            hi = base + step;
            if !hi.is_finite() {
                return Err(Error::Numerical("multiplier bracket diverged".into()));
            }
        }
        // lower bracket: halve the gap toward the pole; within eps of it the
        // pole itself (f = +inf) serves as the bracket end
        let mut gap = hi - lower;
        let mut lo = lower;
        while gap >= self.eps {
            gap *= 0.5;
            let cand = lower + gap;
            if self.eval(cand) >= target {
                lo = cand;
                break;
            }
            hi = cand;
        }
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let f = if mid <= lower { f64::INFINITY } else { self.eval(mid) };
            if f > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if ((f - target) / target).abs() < 1e-14 {
                return Ok(mid);
            }
        }
        let fl = if lo <= lower { f64::INFINITY } else { self.eval(lo) };
        let fh = self.eval(hi);
        Ok(if (fl - target).abs() < (fh - target).abs() { lo } else { hi })
    }

    /// `x_j = (A_j + mu I)^{-1} b_j` through the eigenbasis.
    pub fn vectors(&self, mu: f64) -> Vec<CVec> {
        self.terms
            .iter()
            .map(|t| {
                let n = t.values.len();
                let mut x = CVec::zeros(n);
                for i in 0..n {
                    if t.coeffs[i] == c64(0.0, 0.0) {
                        continue;
                    }
                    let s = t.coeffs[i] / (t.values[i] + mu);
                    x += t.vectors.column(i) * s;
                }
                x
            })
            .collect()
    }

    /// First bottom eigenvector (term index, vector), phase-normalized so that
    /// its largest entry is real positive.
    fn bottom_vector(&self) -> (usize, CVec) {
        let scale = self
            .terms
            .iter()
            .flat_map(|t| t.values.iter().map(|v| v.abs()))
            .fold(f64::MIN_POSITIVE, f64::max);
        for (j, t) in self.terms.iter().enumerate() {
            for (i, &l) in t.values.iter().enumerate() {
                if l - self.lambda_min <= CLUSTER_TOL * scale {
                    let u: CVec = t.vectors.column(i).into_owned();
                    let pivot = u
                        .iter()
                        .copied()
                        .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
                        .unwrap_or(c64(1.0, 0.0));
                    let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { c64(1.0, 0.0) };
                    return (j, u * phase);
                }
            }
        }
        unreachable!("lambda_min is attained by some eigenvalue")
    }
}

/// Multiplier `mu > -lambda_min` solving `sum_j ||(A_j + mu I)^{-1} b_j||^2 = target`.
///
/// A single term gives the per-user constraint, several terms the sum constraint.
/// Fails with [`Error::Infeasible`] (carrying the supremum) when the target cannot
/// be reached with `A + mu I` positive definite.
pub fn solve_multiplier(terms: &[(CMat, CVec)], target: f64) -> Result<f64> {
    SecularFunction::new(terms)?.solve(target)
}

/// Global minimizer of `sum_j (x_j^H A_j x_j - 2 Re b_j^H x_j)` subject to
/// `sum_j ||x_j||^2 = target`.
#[derive(Debug, Clone)]
pub struct Constrained {
    pub mu: f64,
    pub x: Vec<CVec>,
    /// The solution sits on `mu = -lambda_min` (the target exceeded the
    /// positive-definite supremum).
    pub boundary: bool,
}

pub fn constrained_minimizer(terms: &[(CMat, CVec)], target: f64) -> Result<Constrained> {
    let sf = SecularFunction::new(terms)?;
    match sf.solve(target) {
        Ok(mu) => Ok(Constrained {
            mu,
            x: sf.vectors(mu),
            boundary: false,
        }),
        Err(Error::Infeasible { supremum, .. }) if supremum.is_finite() => {
            let mu = -sf.lambda_min;
            let mut x = sf.vectors(mu);
            let (j, u) = sf.bottom_vector();
            let extra = (target - supremum).max(0.0).sqrt();
            x[j] += u * c64(extra, 0.0);
            Ok(Constrained { mu, x, boundary: true })
        }
        Err(e) => Err(e),
    }
}
