//! Small dense complex linear algebra on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `x^H y`.
#[inline]
pub fn inner(x: &CVec, y: &CVec) -> Complex64 {
    x.dotc(y)
}

/// `m += scale * x x^H`.
pub fn add_outer(m: &mut CMat, x: &CVec, scale: f64) {
    let n = x.len();
    for j in 0..n {
        let xj = x[j].conj() * scale;
        for i in 0..n {
            m[(i, j)] += x[i] * xj;
        }
    }
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn trace_re(m: &CMat) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

/// Replace `m` by its Hermitian part; guards eigen/Cholesky against round-off asymmetry.
pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * c64(0.5, 0.0)
}

/// Solution of a Hermitian positive-definite system, with a flag telling
/// whether the ridge fallback was needed.
#[derive(Debug, Clone)]
pub struct Solved {
    pub x: CMat,
    pub ridged: bool,
}

/// Solves `a x = b` by Cholesky. If the factorization fails, adds
/// `ridge_factor * trace(a)/dim` to the diagonal and retries once.
pub fn solve_hpd(a: &CMat, b: &CMat, ridge_factor: f64) -> Result<Solved> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Shape(format!(
            "system {}x{} with right-hand side {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let h = hermitize(a);
    if let Some(ch) = Cholesky::new(h.clone()) {
        let x = ch.solve(b);
        if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Ok(Solved { x, ridged: false });
        }
    }
    let scale = (trace_re(&h) / n as f64).abs().max(f64::MIN_POSITIVE);
    let ridge = ridge_factor * scale;
    let mut reg = h;
    for i in 0..n {
        reg[(i, i)] += c64(ridge.max(f64::MIN_POSITIVE), 0.0);
    }
    match Cholesky::new(reg) {
        Some(ch) => Ok(Solved {
            x: ch.solve(b),
            ridged: true,
        }),
        None => Err(Error::Numerical(format!(
            "covariance of size {n} is not positive definite even with ridge {ridge:e}"
        ))),
    }
}

pub fn solve_hpd_vec(a: &CMat, b: &CVec, ridge_factor: f64) -> Result<(CVec, bool)> {
    let rhs = CMat::from_column_slice(b.len(), 1, b.as_slice());
    let s = solve_hpd(a, &rhs, ridge_factor)?;
    Ok((s.x.column(0).into_owned(), s.ridged))
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

pub fn hermitian_eigen(a: &CMat) -> HermitianEigen {
    let eig = SymmetricEigen::new(hermitize(a));
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let n = a.nrows();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    HermitianEigen {
        values: idx.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors,
    }
}

/// Real eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(hermitize(a))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `log2 det(a)` for a Hermitian positive-definite matrix.
pub fn log2_det_hpd(a: &CMat) -> Result<f64> {
    let ch = Cholesky::new(hermitize(a))
        .ok_or_else(|| Error::Numerical("log-det of a non-PD matrix".into()))?;
    let l = ch.l();
    Ok((0..l.nrows()).map(|i| 2.0 * l[(i, i)].re.log2()).sum())
}

/// One circularly-symmetric complex Gaussian draw with total variance `var`.
pub fn cscg<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64(s * re, s * im)
}

pub fn cscg_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, var: f64) -> CMat {
    // column-major fill keeps the draw order stable across nalgebra versions
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = cscg(rng, var);
        }
    }
    m
}

pub fn cscg_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, var: f64) -> CVec {
    CVec::from_iterator(len, (0..len).map(|_| cscg(rng, var)))
}

/// Row `k` of `m` as a column vector (no conjugation).
pub fn row_vec(m: &CMat, k: usize) -> CVec {
    m.row(k).transpose()
}

pub fn real_vec(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}
