//! The QEP `(lambda^2 M + lambda C + K) x = 0` and the operators `A = -M^{-1}C`,
//! `B = -M^{-1}K` of its linearization, optionally after a shift-and-invert.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::c64;
use crate::error::{Result, SoarError};
use crate::sparse::{CscMatrix, SparseLu};

/// Sparse QEP with cached 1-norms of its coefficients.
#[derive(Debug, Clone)]
pub struct QepProblem {
    m: CscMatrix,
    c: CscMatrix,
    k: CscMatrix,
    norms1: [f64; 3],
}

impl QepProblem {
    pub fn new(m: CscMatrix, c: CscMatrix, k: CscMatrix) -> Result<Self> {
        let n = m.nrows();
        for (name, a) in [("M", &m), ("C", &c), ("K", &k)] {
            if a.nrows() != n || a.ncols() != n {
                return Err(SoarError::DimensionMismatch {
                    what: format!("coefficient {name}"),
                    expected: n,
                    found: if a.nrows() != n { a.nrows() } else { a.ncols() },
                });
            }
        }
        let norms1 = [m.norm1(), c.norm1(), k.norm1()];
        Ok(Self { m, c, k, norms1 })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn mass(&self) -> &CscMatrix {
        &self.m
    }

    pub fn damping(&self) -> &CscMatrix {
        &self.c
    }

    pub fn stiffness(&self) -> &CscMatrix {
        &self.k
    }

    /// `[||M||_1, ||C||_1, ||K||_1]`
    pub fn norms1(&self) -> [f64; 3] {
        self.norms1
    }

    /// `||M||_1 + ||C||_1 + ||K||_1`, the denominator of every relative residual.
    pub fn norm_sum(&self) -> f64 {
        self.norms1.iter().sum()
    }

    pub fn is_real(&self) -> bool {
        self.m.is_real() && self.c.is_real() && self.k.is_real()
    }

    /// `Q(lambda) x`
    pub fn apply_qep(&self, lambda: c64, x: &[c64]) -> Vec<c64> {
        let mut y = self.k.mul_vec(x);
        self.c.mul_vec_acc(lambda, x, &mut y);
        self.m.mul_vec_acc(lambda * lambda, x, &mut y);
        y
    }

    /// `||Q(lambda) x|| / (||x|| (||M||_1 + ||C||_1 + ||K||_1))`
    pub fn relative_residual(&self, lambda: c64, x: &[c64]) -> f64 {
        let r = crate::dense::norm2(&self.apply_qep(lambda, x));
        r / (crate::dense::norm2(x) * self.norm_sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Direct,
    ShiftInvert { sigma: c64 },
}

/// Which coefficient of the working QEP to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    Mass,
    Damping,
    Stiffness,
}

/// Factored operator pair of the working QEP.
///
/// In direct mode the working QEP is the input problem. In shift-invert mode
/// it is `(sigma^2 M + sigma C + K, C + 2 sigma M, M)` with eigenvalues
/// `rho = 1 / (lambda - sigma)`.
#[derive(Debug)]
pub struct OperatorPair {
    problem: QepProblem,
    mode: Mode,
    factor: SparseLu,
    shifted_mass: Option<CscMatrix>,
    working_mass_norm1: f64,
    applications: AtomicUsize,
}

impl Clone for OperatorPair {
    fn clone(&self) -> Self {
        Self {
            problem: self.problem.clone(),
            mode: self.mode,
            factor: self.factor.clone(),
            shifted_mass: self.shifted_mass.clone(),
            working_mass_norm1: self.working_mass_norm1,
            applications: AtomicUsize::new(self.apply_count()),
        }
    }
}

pub fn build_operator(problem: &QepProblem, mode: Mode) -> Result<OperatorPair> {
    let (factor, shifted_mass, working_mass_norm1) = match mode {
        Mode::Direct => (SparseLu::factor(problem.mass())?, None, problem.norms1()[0]),
        Mode::ShiftInvert { sigma } => {
            if !(sigma.re.is_finite() && sigma.im.is_finite()) {
                return Err(SoarError::NonFinite);
            }
            let mhat = CscMatrix::linear_combination(&[
                (sigma * sigma, problem.mass()),
                (sigma, problem.damping()),
                (c64::new(1.0, 0.0), problem.stiffness()),
            ])?;
            let lu = SparseLu::factor(&mhat)?;
            let norm = mhat.norm1();
            (lu, Some(mhat), norm)
        }
    };
    Ok(OperatorPair {
        problem: problem.clone(),
        mode,
        factor,
        shifted_mass,
        working_mass_norm1,
        applications: AtomicUsize::new(0),
    })
}

impl OperatorPair {
    pub fn problem(&self) -> &QepProblem {
        &self.problem
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn factor(&self) -> &SparseLu {
        &self.factor
    }

    /// 1-norm of the working mass matrix (`M` or `sigma^2 M + sigma C + K`).
    pub fn working_mass_norm1(&self) -> f64 {
        self.working_mass_norm1
    }

    /// Number of `apply_ab` calls so far.
    pub fn apply_count(&self) -> usize {
        self.applications.load(Ordering::Relaxed)
    }

    /// `r = A q + B p` of the working QEP.
    pub fn apply_ab(&self, q: &[c64], p: &[c64]) -> Vec<c64> {
        self.applications.fetch_add(1, Ordering::Relaxed);
        let rhs = match self.mode {
            Mode::Direct => {
                let mut y = self.problem.c.mul_vec(q);
                self.problem.k.mul_vec_acc(c64::new(1.0, 0.0), p, &mut y);
                y
            }
            Mode::ShiftInvert { sigma } => {
                let mut y = self.problem.c.mul_vec(q);
                let w: Vec<c64> = q.iter().zip(p).map(|(a, b)| 2.0 * sigma * a + b).collect();
                self.problem.m.mul_vec_acc(c64::new(1.0, 0.0), &w, &mut y);
                y
            }
        };
        let mut r = self.factor.solve(&rhs);
        for v in r.iter_mut() {
            *v = -*v;
        }
        r
    }

    /// Applies one coefficient of the working QEP.
    pub fn apply_working(&self, which: Coefficient, x: &[c64]) -> Vec<c64> {
        let p = &self.problem;
        match (self.mode, which) {
            (Mode::Direct, Coefficient::Mass) => p.m.mul_vec(x),
            (Mode::Direct, Coefficient::Damping) => p.c.mul_vec(x),
            (Mode::Direct, Coefficient::Stiffness) => p.k.mul_vec(x),
            (Mode::ShiftInvert { .. }, Coefficient::Mass) => {
                self.shifted_mass.as_ref().expect("shift-invert keeps M^").mul_vec(x)
            }
            (Mode::ShiftInvert { sigma }, Coefficient::Damping) => {
                let mut y = p.c.mul_vec(x);
                p.m.mul_vec_acc(2.0 * sigma, x, &mut y);
                y
            }
            (Mode::ShiftInvert { .. }, Coefficient::Stiffness) => p.m.mul_vec(x),
        }
    }

    /// Maps a working eigenvalue and residual norm back to the input problem.
    pub fn to_original(&self, theta: c64, residual_norm: f64) -> Result<(c64, f64)> {
        match self.mode {
            Mode::Direct => Ok((theta, residual_norm)),
            Mode::ShiftInvert { sigma } => recover_eigen(theta, sigma, residual_norm),
        }
    }
}

/// `lambda = 1/rho + sigma` and `||r~|| = ||r^|| / |rho|^2`.
pub fn recover_eigen(rho: c64, sigma: c64, shifted_residual: f64) -> Result<(c64, f64)> {
    if rho.norm() == 0.0 {
        return Err(SoarError::ZeroRho);
    }
    Ok((c64::new(1.0, 0.0) / rho + sigma, shifted_residual / rho.norm_sqr()))
}
