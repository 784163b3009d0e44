//! Reference computations for verification, built on nalgebra.
//!
//! Nothing here calls solver code except `OperatorPair::apply_ab`, so the
//! oracles can check the reduction, extraction and restart independently.

use nalgebra::{DMatrix, DVector, Schur, SVD};

use crate::c64;
use crate::dense::DenseMatrix;
use crate::error::{Result, SoarError};
use crate::operator::{OperatorPair, QepProblem};

/// Largest order of an explicitly formed linearization.
pub const H_LIMIT: usize = 1000;

/// Largest QEP dimension for the dense spectrum.
pub const SPECTRUM_LIMIT: usize = 500;

type CMat = DMatrix<c64>;

fn to_na(a: &DenseMatrix) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_na(a: &CMat) -> DenseMatrix {
    DenseMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn cols_to_na(cols: &[Vec<c64>]) -> CMat {
    let n = cols.first().map_or(0, |c| c.len());
    CMat::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// `H = [A B; I 0]` of the working QEP, column by column through `apply_ab`.
pub fn build_h(op: &OperatorPair) -> Result<DenseMatrix> {
    let n = op.dim();
    if 2 * n > H_LIMIT {
        return Err(SoarError::TooLarge { n: 2 * n, limit: H_LIMIT });
    }
    let zero = vec![c64::new(0.0, 0.0); n];
    let mut h = CMat::zeros(2 * n, 2 * n);
    for j in 0..2 * n {
        let mut e = zero.clone();
        e[j % n] = c64::new(1.0, 0.0);
        let top = if j < n { op.apply_ab(&e, &zero) } else { op.apply_ab(&zero, &e) };
        for i in 0..n {
            h[(i, j)] = top[i];
        }
        if j < n {
            h[(n + j, j)] = c64::new(1.0, 0.0);
        }
    }
    Ok(from_na(&h))
}

/// Orthonormal basis of `K_k(H, v)` by Arnoldi with full reorthogonalization.
pub fn arnoldi_on_h(h: &DenseMatrix, v: &[c64], k: usize) -> Vec<Vec<c64>> {
    let h = to_na(h);
    let mut basis: Vec<DVector<c64>> = Vec::with_capacity(k);
    let mut w = DVector::from_column_slice(v);
    for _ in 0..k {
        for _ in 0..2 {
            for b in &basis {
                let c = b.dotc(&w);
                w -= b * c;
            }
        }
        let nw = w.norm();
        if nw == 0.0 {
            break;
        }
        let q = w.unscale(nw);
        w = &h * &q;
        basis.push(q);
    }
    basis.into_iter().map(|b| b.iter().copied().collect()).collect()
}

/// Largest principal angle (radians) between the column spans of `a` and `b`
/// of equal dimension, via `sin = ||(I - Qa Qa*) Qb||_2`.
pub fn max_principal_angle(a: &[Vec<c64>], b: &[Vec<c64>]) -> f64 {
    let qa = orthonormal(&cols_to_na(a));
    let qb = orthonormal(&cols_to_na(b));
    let resid = &qb - &qa * (qa.adjoint() * &qb);
    let svd = SVD::new(resid, false, false);
    svd.singular_values.iter().copied().fold(0.0, f64::max).min(1.0).asin()
}

fn orthonormal(a: &CMat) -> CMat {
    let svd = SVD::new(a.clone(), true, false);
    let u = svd.u.expect("requested U");
    let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    // singular values are not guaranteed sorted, pick the matching columns
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    debug_assert_eq!(keep.len(), rank);
    CMat::from_fn(u.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

/// Eigenvalues of the QEP from the Schur form of `[-M^{-1}C, -M^{-1}K; I, 0]`.
pub fn dense_qep_eigenvalues(problem: &QepProblem) -> Result<Vec<c64>> {
    let n = problem.dim();
    if n > SPECTRUM_LIMIT {
        return Err(SoarError::TooLarge { n, limit: SPECTRUM_LIMIT });
    }
    let m = to_na(&problem.mass().to_dense());
    let c = to_na(&problem.damping().to_dense());
    let k = to_na(&problem.stiffness().to_dense());
    let lu = m.lu();
    let a = lu.solve(&c).ok_or(SoarError::SingularMatrix { position: 0 })?;
    let b = lu.solve(&k).ok_or(SoarError::SingularMatrix { position: 0 })?;
    let mut h = CMat::zeros(2 * n, 2 * n);
    for j in 0..n {
        for i in 0..n {
            h[(i, j)] = -a[(i, j)];
            h[(i, j + n)] = -b[(i, j)];
        }
        h[(n + j, j)] = c64::new(1.0, 0.0);
    }
    if problem.is_real() {
        let hr = DMatrix::<f64>::from_fn(2 * n, 2 * n, |i, j| h[(i, j)].re);
        let schur = Schur::try_new(hr, f64::EPSILON, 0).ok_or(SoarError::EigenFailure)?;
        Ok(schur.complex_eigenvalues().iter().copied().collect())
    } else {
        let schur = Schur::try_new(h, f64::EPSILON, 0).ok_or(SoarError::EigenFailure)?;
        let (_, t) = schur.unpack();
        Ok((0..2 * n).map(|i| t[(i, i)]).collect())
    }
}

/// Unit eigenvector for a known eigenvalue: the right singular vector of
/// `Q(lambda)` for its smallest singular value.
pub fn qep_eigenvector(problem: &QepProblem, lambda: c64) -> Vec<c64> {
    let q = to_na(&problem.mass().to_dense()) * (lambda * lambda)
        + to_na(&problem.damping().to_dense()) * lambda
        + to_na(&problem.stiffness().to_dense());
    let (_, v) = smallest_singular(&q);
    v
}

/// Dense reference eigenpairs, vectors computed on demand.
pub struct DenseSpectrum<'a> {
    problem: &'a QepProblem,
    pub values: Vec<c64>,
}

impl<'a> DenseSpectrum<'a> {
    pub fn vector(&self, i: usize) -> Vec<c64> {
        qep_eigenvector(self.problem, self.values[i])
    }

    /// Index of the eigenvalue closest to `z`.
    pub fn nearest(&self, z: c64) -> usize {
        (0..self.values.len())
            .min_by(|&a, &b| (self.values[a] - z).norm().total_cmp(&(self.values[b] - z).norm()))
            .expect("nonempty spectrum")
    }
}

pub fn dense_qep_spectrum(problem: &QepProblem) -> Result<DenseSpectrum<'_>> {
    Ok(DenseSpectrum {
        problem,
        values: dense_qep_eigenvalues(problem)?,
    })
}

fn smallest_singular(a: &CMat) -> (f64, Vec<c64>) {
    let svd = SVD::new(a.clone(), false, true);
    let vt = svd.v_t.expect("requested V");
    let idx = (0..svd.singular_values.len())
        .min_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]))
        .expect("nonempty");
    let v: Vec<c64> = (0..vt.ncols()).map(|j| vt[(idx, j)].conj()).collect();
    (svd.singular_values[idx], v)
}

/// Smallest singular value of a tall matrix by a direct SVD.
pub fn direct_sigma_min(f: &DenseMatrix) -> f64 {
    let svd = SVD::new(to_na(f), false, false);
    svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Eigenvalues of the mass-spring QEP from the eigenvalues
/// `3 - 2 cos(j pi / (n+1))` of `tridiag(-1, 3, -1)`.
pub fn mass_spring_eigenvalues(n: usize, kappa: f64, tau: f64) -> Vec<c64> {
    let mut out = Vec::with_capacity(2 * n);
    for j in 1..=n {
        let t = 3.0 - 2.0 * (j as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos();
        let b = c64::new(tau * t, 0.0);
        let c = c64::new(kappa * t, 0.0);
        let disc = (b * b - 4.0 * c).sqrt();
        // numerically stable pair of roots
        let s = if b.re >= 0.0 { -(b + disc) / 2.0 } else { -(b - disc) / 2.0 };
        out.push(s);
        out.push(c / s);
    }
    out
}
