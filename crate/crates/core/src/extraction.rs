//! Rayleigh-Ritz projection of the working QEP onto the MSOAR subspace,
//! Ritz and refined Ritz extraction, and the residual bounds.

use std::sync::OnceLock;

use crate::c64;
use crate::dense::{
    self, adjoint_times, apply_pencil, mat_from_cols, matvec, norm2, refined_vector,
    solve_projected_qep, DenseMatrix, GramBlocks,
};
use crate::error::{Result, SoarError};
use crate::msoar::SoarState;
use crate::operator::{Coefficient, OperatorPair};

/// Projected working QEP `Q~* (theta^2 M + theta C + K) Q~`.
#[derive(Debug)]
pub struct ProjectedQep {
    pub q_tilde: DenseMatrix,
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
    pub w3: DenseMatrix,
    pub mk: DenseMatrix,
    pub ck: DenseMatrix,
    pub kk: DenseMatrix,
    grams: OnceLock<GramBlocks>,
}

impl ProjectedQep {
    pub fn dim(&self) -> usize {
        self.q_tilde.ncols()
    }

    pub fn grams(&self) -> &GramBlocks {
        self.grams
            .get_or_init(|| GramBlocks::new(&self.w1, &self.w2, &self.w3))
    }

    /// `Q~ g`
    pub fn lift(&self, g: &[c64]) -> Vec<c64> {
        matvec(&self.q_tilde, g)
    }

    /// `||(theta^2 W1 + theta W2 + W3) g||`
    pub fn residual_norm(&self, theta: c64, g: &[c64]) -> f64 {
        norm2(&apply_pencil(theta, &self.w1, &self.w2, &self.w3, g))
    }
}

/// Builds `W1 = M Q~`, `W2 = C Q~`, `W3 = K Q~` and the projected coefficients
/// for the working QEP of `op`.
pub fn project(state: &SoarState, op: &OperatorPair) -> Result<ProjectedQep> {
    let basis = state.projection_basis();
    if basis.is_empty() {
        return Err(SoarError::InvalidConfig("projection basis is empty".into()));
    }
    let n = state.n();
    let apply = |which| -> Vec<Vec<c64>> {
        basis.iter().map(|v| op.apply_working(which, v)).collect()
    };
    let q_tilde = mat_from_cols(n, &basis);
    let w1 = mat_from_cols(n, &apply(Coefficient::Mass));
    let w2 = mat_from_cols(n, &apply(Coefficient::Damping));
    let w3 = mat_from_cols(n, &apply(Coefficient::Stiffness));
    let mk = adjoint_times(&q_tilde, &w1);
    let ck = adjoint_times(&q_tilde, &w2);
    let kk = adjoint_times(&q_tilde, &w3);
    Ok(ProjectedQep {
        q_tilde,
        w1,
        w2,
        w3,
        mk,
        ck,
        kk,
        grams: OnceLock::new(),
    })
}

#[derive(Debug, Clone)]
pub struct RitzPair {
    /// Eigenvalue of the projected working QEP.
    pub theta: c64,
    /// Eigenvalue of the input problem.
    pub lambda: c64,
    /// Unit primitive vector.
    pub g: Vec<c64>,
    /// Unit Ritz vector `Q~ g`.
    pub y: Vec<c64>,
    /// `||Q(lambda) y|| / (||M||_1 + ||C||_1 + ||K||_1)`, infinite for excluded values.
    pub rel_residual: f64,
    pub infinite: bool,
}

#[derive(Debug, Clone)]
pub struct RefinedPair {
    pub z: Vec<c64>,
    /// Unit refined Ritz vector `Q~ z`.
    pub u: Vec<c64>,
    pub sigma_min: f64,
    pub rel_residual: f64,
    pub degenerate: bool,
}

/// All Ritz pairs of one projection together with the retained selection.
#[derive(Debug, Clone)]
pub struct RitzSet {
    pub pairs: Vec<RitzPair>,
    /// Indices into `pairs`, best first: largest `|theta|` among finite values.
    pub selection: Vec<usize>,
    /// Refined data aligned with `selection`.
    pub refined: Option<Vec<RefinedPair>>,
}

impl RitzSet {
    pub fn selected(&self) -> impl Iterator<Item = &RitzPair> {
        self.selection.iter().map(|&i| &self.pairs[i])
    }

    /// Relative residuals of the first `count` selected pairs, refined when available.
    pub fn residuals(&self, count: usize, refined: bool) -> Vec<f64> {
        (0..count.min(self.selection.len()))
            .map(|s| match (&self.refined, refined) {
                (Some(r), true) => r[s].rel_residual,
                _ => self.pairs[self.selection[s]].rel_residual,
            })
            .collect()
    }
}

/// Solves the projected QEP, computes every residual and ranks the finite Ritz
/// values by magnitude, retaining `retain` of them.
///
/// In shift-invert mode `theta` is `rho` and the largest `|rho|` are the
/// eigenvalues nearest the shift.
pub fn extract_ritz(proj: &ProjectedQep, op: &OperatorPair, retain: usize) -> Result<RitzSet> {
    let raw = solve_projected_qep(&proj.mk, &proj.ck, &proj.kk)?;
    let norm_sum = op.problem().norm_sum();
    let mut pairs = Vec::with_capacity(raw.len());
    for ep in raw {
        let y = proj.lift(&ep.g);
        if ep.infinite {
            pairs.push(RitzPair {
                theta: ep.theta,
                lambda: ep.theta,
                g: ep.g,
                y,
                rel_residual: f64::INFINITY,
                infinite: true,
            });
            continue;
        }
        let res = proj.residual_norm(ep.theta, &ep.g);
        let (lambda, res) = match op.to_original(ep.theta, res) {
            Ok(v) => v,
            Err(_) => (c64::new(f64::INFINITY, 0.0), f64::INFINITY),
        };
        pairs.push(RitzPair {
            theta: ep.theta,
            lambda,
            g: ep.g,
            y,
            rel_residual: res / norm_sum,
            infinite: !lambda.re.is_finite(),
        });
    }
    let mut order: Vec<usize> = (0..pairs.len()).filter(|&i| !pairs[i].infinite).collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (pairs[a].theta, pairs[b].theta);
        tb.norm()
            .total_cmp(&ta.norm())
            .then(ta.re.total_cmp(&tb.re))
            .then(ta.im.total_cmp(&tb.im))
    });
    order.truncate(retain);
    Ok(RitzSet {
        pairs,
        selection: order,
        refined: None,
    })
}

/// Number of worker threads for refined extraction, from `SOARQEP_THREADS`.
pub fn thread_count() -> usize {
    std::env::var("SOARQEP_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(1)
}

/// Computes refined Ritz vectors for every selected pair.
///
/// Each value is handled independently, so the result does not depend on
/// the thread count.
pub fn extract_refined(proj: &ProjectedQep, op: &OperatorPair, ritz: &mut RitzSet) -> Result<()> {
    let grams = proj.grams();
    let thetas: Vec<c64> = ritz.selected().map(|p| p.theta).collect();
    let threads = thread_count().min(thetas.len().max(1));
    let one = |theta: c64| -> Result<RefinedPair> {
        let rv = refined_vector(theta, grams, &proj.w1, &proj.w2, &proj.w3)?;
        let (_, res) = op.to_original(theta, rv.sigma_min)?;
        Ok(RefinedPair {
            u: proj.lift(&rv.z),
            z: rv.z,
            sigma_min: rv.sigma_min,
            rel_residual: res / op.problem().norm_sum(),
            degenerate: rv.degenerate,
        })
    };
    let results: Vec<Result<RefinedPair>> = if threads <= 1 {
        thetas.iter().map(|&t| one(t)).collect()
    } else {
        let chunk = thetas.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = thetas
                .chunks(chunk)
                .map(|part| scope.spawn(|| part.iter().map(|&t| one(t)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("refined worker panicked"))
                .collect()
        })
    };
    let refined = results.into_iter().collect::<Result<Vec<_>>>()?;
    ritz.refined = Some(refined);
    Ok(())
}

/// Eigenpairs `(nu, s)` of `T_k` with unit `s`.
pub fn petrov_pairs(state: &SoarState) -> Result<Vec<(c64, Vec<c64>)>> {
    let t = state.t_k().into_mat();
    let k = t.nrows();
    if k == 0 {
        return Ok(Vec::new());
    }
    let evd = t.eigen().map_err(|_| SoarError::EigenFailure)?;
    let s = evd.S().column_vector();
    let u = evd.U();
    Ok((0..k)
        .map(|j| {
            let mut v: Vec<c64> = (0..k).map(|i| u[(i, j)]).collect();
            let nv = norm2(&v);
            dense::scale(c64::new(1.0 / nv, 0.0), &mut v);
            (s[j], v)
        })
        .collect())
}

/// Pairs every eigenvalue of `T_k` with its nearest unused finite Ritz pair.
///
/// At breakdown `H [Q_k; P_k] = [Q_k; P_k] T_k` holds exactly, so the
/// eigenvalues of `T_k` are the eigenvalues carried by the invariant
/// subspace; the matched Ritz pairs are the ones a breakdown delivers.
/// Returns `(index into ritz.pairs, nu, s)`.
pub fn invariant_pairs(state: &SoarState, ritz: &RitzSet) -> Result<Vec<(usize, c64, Vec<c64>)>> {
    let petrov = petrov_pairs(state)?;
    let mut used = vec![false; ritz.pairs.len()];
    let mut out = Vec::with_capacity(petrov.len());
    for (nu, s) in petrov {
        let best = (0..ritz.pairs.len())
            .filter(|&i| !used[i] && !ritz.pairs[i].infinite)
            .min_by(|&a, &b| {
                (ritz.pairs[a].theta - nu)
                    .norm()
                    .total_cmp(&(ritz.pairs[b].theta - nu).norm())
            });
        if let Some(i) = best {
            used[i] = true;
            out.push((i, nu, s));
        }
    }
    Ok(out)
}

/// Bound factor `(|theta|^2+1)^{1/2} (||M||^2 + ||p_{k+1}||^2)^{1/2} / (1 + ||P_k s||^2)^{1/2}`.
pub fn bound_factor(state: &SoarState, theta: c64, s: &[c64], norm_m: f64) -> f64 {
    let k = state.k();
    let n = state.n();
    let mut ps = dense::zeros(n);
    for (j, sj) in s.iter().enumerate().take(k) {
        dense::axpy(*sj, &state.p_cols()[j], &mut ps);
    }
    let pk1 = norm2(&state.p_cols()[k]);
    (theta.norm_sqr() + 1.0).sqrt() * (norm_m * norm_m + pk1 * pk1).sqrt()
        / (1.0 + norm2(&ps).powi(2)).sqrt()
}

/// `c_k t_{k+1,k} |e_k* s|`, using the pre-reset `t_{k+1,k}`.
pub fn residual_bound(state: &SoarState, theta: c64, s: &[c64], norm_m: f64) -> f64 {
    let k = state.k();
    if k == 0 {
        return 0.0;
    }
    let t = state.t_raw()[k - 1];
    bound_factor(state, theta, s, norm_m) * t * s[k - 1].norm()
}

/// `||r_nu||`: residual of the Petrov pair `(nu, [Q_k; P_k] s)` in the
/// linearization `[-C -K; I 0] - nu [M 0; 0 I]` of the working QEP, with the
/// stacked vector normalized. Formed from the coefficients directly.
pub fn petrov_residual(state: &SoarState, op: &OperatorPair, nu: c64, s: &[c64]) -> f64 {
    let n = state.n();
    let mut w = dense::zeros(n);
    let mut z = dense::zeros(n);
    for (j, sj) in s.iter().enumerate().take(state.k()) {
        dense::axpy(*sj, &state.q_cols()[j], &mut w);
        dense::axpy(*sj, &state.p_cols()[j], &mut z);
    }
    let len = (norm2(&w).powi(2) + norm2(&z).powi(2)).sqrt();
    if len == 0.0 {
        return 0.0;
    }
    let mut top = op.apply_working(Coefficient::Damping, &w);
    let kz = op.apply_working(Coefficient::Stiffness, &z);
    let mw = op.apply_working(Coefficient::Mass, &w);
    for i in 0..n {
        top[i] = -(top[i] + kz[i]) - nu * mw[i];
    }
    let bottom: Vec<c64> = w.iter().zip(&z).map(|(a, b)| a - nu * b).collect();
    (norm2(&top).powi(2) + norm2(&bottom).powi(2)).sqrt() / len
}

/// `||r_theta|| = ||(theta^2 M + theta C + K) y|| / (|theta|^2 + 1)^{1/2}` for
/// unit `y`, the linearization residual of `(theta, [theta y; y])`.
pub fn ritz_linear_residual(theta: c64, residual_norm: f64) -> f64 {
    residual_norm / (theta.norm_sqr() + 1.0).sqrt()
}

/// `c_k |e_k* s| tol`, the relative bound reported at breakdown.
pub fn breakdown_bound(state: &SoarState, theta: c64, s: &[c64], norm_m: f64, tol: f64) -> f64 {
    let k = state.k();
    if k == 0 {
        return 0.0;
    }
    bound_factor(state, theta, s, norm_m) * s[k - 1].norm() * tol
}
