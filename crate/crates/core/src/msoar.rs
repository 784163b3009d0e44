//! Modified second-order Arnoldi reduction.
//!
//! Builds `H [Q_k; P_k] = [Q_{k+1}; P_{k+1}] T^_k` for `H = [A B; I 0]` while
//! storing only n-vectors. The columns of `Q` are orthonormal or zero; a zero
//! column marks a deflation, where the `r`-sequence became dependent but the
//! stacked Krylov vectors did not.

use crate::c64;
use crate::dense::{
    self, axpy, is_zero, norm2, orthogonalize_with_refinement, scale, zeros, DenseMatrix,
    HessenbergMatrix,
};
use crate::error::{Result, SoarError};
use crate::operator::OperatorPair;

/// Classification of one MSOAR step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// Normal step with `t_{j+1,j}`.
    Regular { t: f64 },
    /// The new `r` vanished but the stacked vector did not.
    Deflation { t_raw: f64 },
    /// The stacked Krylov space became invariant.
    Breakdown { t_raw: f64 },
}

/// Decomposition data after `k` steps.
#[derive(Debug, Clone)]
pub struct SoarState {
    n: usize,
    q: Vec<Vec<c64>>,
    p: Vec<Vec<c64>>,
    /// Column `j` of `T^_k`, holding `j + 2` entries.
    t: Vec<Vec<c64>>,
    /// `t_{j+1,j}` before any reset to 1.
    t_raw: Vec<f64>,
    /// Orthonormal basis of the `p` columns sitting at zero `q` columns.
    deflation_basis: Vec<Vec<c64>>,
    breakdown: Option<usize>,
}

/// Totals from `run_msoar`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub steps: usize,
    pub deflations: usize,
    pub breakdown: bool,
}

/// Starts the reduction with `q_1 = u1/||u1||`, `p_1 = u2/||u1||`.
pub fn init_state(u1: &[c64], u2: &[c64]) -> Result<SoarState> {
    if u1.len() != u2.len() {
        return Err(SoarError::DimensionMismatch {
            what: "starting vector u2".into(),
            expected: u1.len(),
            found: u2.len(),
        });
    }
    let nrm = norm2(u1);
    if nrm == 0.0 || !nrm.is_finite() {
        return Err(SoarError::ZeroStartVector);
    }
    let inv = c64::new(1.0 / nrm, 0.0);
    let mut q1 = u1.to_vec();
    let mut p1 = u2.to_vec();
    scale(inv, &mut q1);
    scale(inv, &mut p1);
    Ok(SoarState {
        n: u1.len(),
        q: vec![q1],
        p: vec![p1],
        t: Vec::new(),
        t_raw: Vec::new(),
        deflation_basis: Vec::new(),
        breakdown: None,
    })
}

impl SoarState {
    /// Assembles a state from a decomposition of length `m = t_cols.len()`.
    /// `q` and `p` hold `m + 1` columns.
    pub(crate) fn from_parts(
        q: Vec<Vec<c64>>,
        p: Vec<Vec<c64>>,
        t: Vec<Vec<c64>>,
        t_raw: Vec<f64>,
        breakdown: Option<usize>,
    ) -> Self {
        let n = q.first().map_or(0, |c| c.len());
        let mut state = SoarState {
            n,
            q,
            p,
            t,
            t_raw,
            deflation_basis: Vec::new(),
            breakdown,
        };
        state.rebuild_deflation_basis();
        state
    }

    fn rebuild_deflation_basis(&mut self) {
        self.deflation_basis.clear();
        for i in 0..self.q.len() {
            if is_zero(&self.q[i]) {
                let s = self.p[i].clone();
                self.push_deflation_direction(s);
            }
        }
    }

    fn push_deflation_direction(&mut self, mut s: Vec<c64>) {
        let nrm = norm2(&s);
        if nrm == 0.0 {
            return;
        }
        scale(c64::new(1.0 / nrm, 0.0), &mut s);
        let basis: Vec<&[c64]> = self.deflation_basis.iter().map(|v| v.as_slice()).collect();
        let o = orthogonalize_with_refinement(&mut s, &basis);
        if o.norm > dense::DEPENDENCE_TOL {
            scale(c64::new(1.0 / o.norm, 0.0), &mut s);
            self.deflation_basis.push(s);
        }
    }

    /// Residual norm of `s` against the span of the recorded deflation directions.
    pub(crate) fn distance_to_deflation_span(&self, s: &[c64]) -> f64 {
        let mut v = s.to_vec();
        let basis: Vec<&[c64]> = self.deflation_basis.iter().map(|v| v.as_slice()).collect();
        orthogonalize_with_refinement(&mut v, &basis).norm
    }

    /// Number of completed steps.
    pub fn k(&self) -> usize {
        self.t.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `q_1 .. q_{k+1}`
    pub fn q_cols(&self) -> &[Vec<c64>] {
        &self.q
    }

    /// `p_1 .. p_{k+1}`
    pub fn p_cols(&self) -> &[Vec<c64>] {
        &self.p
    }

    /// Column `j` of `T^_k` (length `j + 2`).
    pub fn t_col(&self, j: usize) -> &[c64] {
        &self.t[j]
    }

    /// `t_{j+1,j}` before a reset to 1, per step.
    pub fn t_raw(&self) -> &[f64] {
        &self.t_raw
    }

    /// Indices of zero `q` columns, 0-based over `q_1 .. q_{k+1}`.
    pub fn deflation_steps(&self) -> Vec<usize> {
        (0..self.q.len()).filter(|&i| is_zero(&self.q[i])).collect()
    }

    pub fn deflation_count(&self) -> usize {
        self.deflation_steps().len()
    }

    /// Step at which the stacked space became invariant.
    pub fn breakdown(&self) -> Option<usize> {
        self.breakdown
    }

    /// `T^_k`, `(k+1) x k` upper Hessenberg.
    pub fn t_hat(&self) -> DenseMatrix {
        let k = self.k();
        DenseMatrix::from_fn(k + 1, k, |i, j| {
            if i < self.t[j].len() {
                self.t[j][i]
            } else {
                c64::new(0.0, 0.0)
            }
        })
    }

    /// Leading `k x k` block of `T^_k`.
    pub fn t_k(&self) -> HessenbergMatrix {
        let k = self.k();
        let m = DenseMatrix::from_fn(k, k, |i, j| {
            if i < self.t[j].len() {
                self.t[j][i]
            } else {
                c64::new(0.0, 0.0)
            }
        });
        HessenbergMatrix::new(m).expect("T_k is Hessenberg by construction")
    }

    /// `t_{k+1,k}` as stored (1 after a deflation or breakdown).
    pub fn t_next(&self) -> f64 {
        self.t.last().map_or(0.0, |c| c[c.len() - 1].re)
    }

    /// Squared norms of `p_1 .. p_{k+1}`.
    pub fn p_norms_sq(&self) -> Vec<f64> {
        self.p.iter().map(|v| v.iter().map(|x| x.norm_sqr()).sum()).collect()
    }

    /// Orthonormal basis for the projection: nonzero columns of `Q_k` plus
    /// the direction of `p_1` orthogonalized against `Q_{k+1}` when it is new.
    pub fn projection_basis(&self) -> Vec<Vec<c64>> {
        let k = self.k();
        let mut basis: Vec<Vec<c64>> = self.q[..k.max(1).min(self.q.len())]
            .iter()
            .filter(|c| !is_zero(c))
            .cloned()
            .collect();
        if k == 0 {
            return basis;
        }
        let mut fin = self.p[0].clone();
        let pn = norm2(&fin);
        if pn > 0.0 {
            let against: Vec<&[c64]> = self.q.iter().filter(|c| !is_zero(c)).map(|c| c.as_slice()).collect();
            let mut o = orthogonalize_with_refinement(&mut fin, &against);
            if o.norm > 1e-10 * pn {
                // third pass keeps orthogonality when most of p_1 was already in the span
                let extra = orthogonalize_with_refinement(&mut fin, &against);
                o.norm = extra.norm;
                scale(c64::new(1.0 / o.norm, 0.0), &mut fin);
                basis.push(fin);
            }
        }
        basis
    }
}

/// Extends the decomposition by one column.
///
/// A step counts as regular when `t_{j+1,j} / (||M||_1 + ||C||_1 + ||K||_1) > tol`.
/// Otherwise the candidate `p_{j+1}` decides: it is a deflation when it
/// leaves the span of earlier deflation directions by more than `tol`
/// relative to the terms it was formed from, and a breakdown when it does not.
pub fn msoar_step(state: &mut SoarState, op: &OperatorPair, tol: f64) -> Result<StepOutcome> {
    if state.breakdown.is_some() {
        return Err(SoarError::InvalidConfig("cannot extend past a breakdown".into()));
    }
    if op.dim() != state.n {
        return Err(SoarError::DimensionMismatch {
            what: "operator".into(),
            expected: state.n,
            found: op.dim(),
        });
    }
    let j = state.k();
    let mut r = op.apply_ab(&state.q[j], &state.p[j]);
    if r.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(SoarError::NonFinite);
    }
    let mut s = state.q[j].clone();
    let basis: Vec<&[c64]> = state.q[..=j].iter().map(|c| c.as_slice()).collect();
    let o = orthogonalize_with_refinement(&mut r, &basis);
    for (i, h) in o.coeffs.iter().enumerate() {
        if *h != c64::new(0.0, 0.0) {
            axpy(-*h, &state.p[i], &mut s);
        }
    }
    let t = o.norm;
    let s_scale = norm2(&state.q[j])
        + o.coeffs
            .iter()
            .zip(&state.p)
            .map(|(h, p)| h.norm() * norm2(p))
            .sum::<f64>();
    let mut col = o.coeffs;
    let outcome = if t / op.problem().norm_sum() > tol {
        let inv = c64::new(1.0 / t, 0.0);
        scale(inv, &mut r);
        scale(inv, &mut s);
        col.push(c64::new(t, 0.0));
        state.q.push(r);
        state.p.push(s);
        StepOutcome::Regular { t }
    } else {
        let outcome = classify_stop(state, &s, s_scale, t, tol);
        col.push(c64::new(1.0, 0.0));
        state.q.push(zeros(state.n));
        if let StepOutcome::Deflation { .. } = outcome {
            state.push_deflation_direction(s.clone());
        } else {
            state.breakdown = Some(j);
        }
        state.p.push(s);
        outcome
    };
    state.t.push(col);
    state.t_raw.push(t);
    Ok(outcome)
}

/// `[0; s]` lies in the stacked span exactly when `s` lies in the span of the
/// `p` columns at zero `q` columns. `s_scale` is the size of the terms that
/// were combined into `s`, so the test measures cancellation.
pub(crate) fn classify_stop(
    state: &SoarState,
    s: &[c64],
    s_scale: f64,
    t_raw: f64,
    tol: f64,
) -> StepOutcome {
    if state.distance_to_deflation_span(s) > tol * s_scale {
        StepOutcome::Deflation { t_raw }
    } else {
        StepOutcome::Breakdown { t_raw }
    }
}

/// Runs `msoar_step` until the state has `k_target` columns or breaks down.
pub fn run_msoar(
    state: &mut SoarState,
    op: &OperatorPair,
    k_target: usize,
    tol: f64,
) -> Result<RunSummary> {
    let mut summary = RunSummary {
        steps: 0,
        deflations: 0,
        breakdown: state.breakdown.is_some(),
    };
    while state.k() < k_target && state.breakdown.is_none() {
        match msoar_step(state, op, tol)? {
            StepOutcome::Regular { .. } => {}
            StepOutcome::Deflation { .. } => summary.deflations += 1,
            StepOutcome::Breakdown { .. } => summary.breakdown = true,
        }
        summary.steps += 1;
    }
    Ok(summary)
}

/// Cheap estimate of the residual bound factor `c_k` for monitoring:
/// `(|theta|^2 + 1)^{1/2} (||M||^2 + ||p_{k+1}||^2)^{1/2} / (1 + mean ||p_j||^2)^{1/2}`.
pub fn estimate_ck(state: &SoarState, theta: c64, norm_m: f64) -> f64 {
    let k = state.k();
    let norms = state.p_norms_sq();
    let mean = if k == 0 {
        0.0
    } else {
        norms[..k].iter().sum::<f64>() / k as f64
    };
    let last = norms.get(k).copied().unwrap_or(0.0);
    (theta.norm_sqr() + 1.0).sqrt() * (norm_m * norm_m + last).sqrt() / (1.0 + mean).sqrt()
}
