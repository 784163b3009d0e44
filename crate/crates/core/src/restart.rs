//! Implicit restart of an MSOAR decomposition: shift selection, contraction
//! with deflation repair, and re-expansion.

use crate::c64;
use crate::dense::{
    self, axpy, hessenberg_shifted_qr, is_zero, mat_from_cols, matmul, norm2,
    orthogonalize_with_refinement, qr_unit_diagonal, scale, solve_projected_qep,
    solve_upper_right, upper_inverse, zeros, DenseMatrix,
};
use crate::error::{Result, SoarError};
use crate::extraction::ProjectedQep;
use crate::msoar::{classify_stop, run_msoar, RunSummary, SoarState, StepOutcome};
use crate::operator::{Mode, OperatorPair};

/// Minimum distance between a shift and a retained Ritz value.
pub const SHIFT_SEPARATION: f64 = 1e-12;

/// Loss of orthogonality in the contracted `Q` that aborts a restart.
pub const REPAIR_ORTHOGONALITY_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ShiftSet {
    pub shifts: Vec<c64>,
    /// Finite eigenvalues of the complement QEP.
    pub candidates: Vec<c64>,
    pub complement_dim: usize,
}

#[derive(Debug, Clone)]
pub struct RestartReport {
    pub retained: usize,
    /// Zero `q` columns among `q_1 .. q_k` before contraction.
    pub deflations_before: usize,
    /// Zero `q` columns among the retained `m`.
    pub deflations_carried: usize,
    /// `t_{m+1,m}` of the contracted decomposition.
    pub residual_subdiag: f64,
    /// `||Q~+* Q~+ - I||` over the nonzero retained columns.
    pub orthogonality: f64,
}

/// Chooses `p` shifts from the spectrum of the projected QEP restricted to
/// the orthogonal complement of `vectors` (primitive vectors of the retained
/// Ritz pairs, in `Q~` coordinates).
///
/// Direct mode keeps the candidates farthest from `retained` (largest minimum
/// distance). Shift-invert mode keeps those with the smallest `|rho|`, which
/// lie farthest from the shift.
pub fn select_shifts(
    proj: &ProjectedQep,
    vectors: &[Vec<c64>],
    retained: &[c64],
    p: usize,
    mode: Mode,
    real_data: bool,
) -> Result<ShiftSet> {
    let kt = proj.dim();
    let cols = realify(vectors, retained, real_data);
    let mut basis: Vec<Vec<c64>> = Vec::new();
    for mut v in cols {
        let vn = norm2(&v);
        let refs: Vec<&[c64]> = basis.iter().map(|b| b.as_slice()).collect();
        let o = orthogonalize_with_refinement(&mut v, &refs);
        if vn == 0.0 || o.norm <= 1e-10 * vn {
            log::warn!("dropping a dependent retained vector in shift selection");
            continue;
        }
        scale(c64::new(1.0 / o.norm, 0.0), &mut v);
        basis.push(v);
    }
    let spanned = basis.len();
    let mut comp: Vec<Vec<c64>> = Vec::new();
    for i in 0..kt {
        if spanned + comp.len() == kt {
            break;
        }
        let mut e = zeros(kt);
        e[i] = c64::new(1.0, 0.0);
        let refs: Vec<&[c64]> = basis.iter().chain(comp.iter()).map(|b| b.as_slice()).collect();
        let mut o = orthogonalize_with_refinement(&mut e, &refs);
        if o.norm > 1e-6 {
            let again = orthogonalize_with_refinement(&mut e, &refs);
            o.norm = again.norm;
            scale(c64::new(1.0 / o.norm, 0.0), &mut e);
            comp.push(e);
        }
    }
    let complement_dim = comp.len();
    if complement_dim == 0 {
        return Ok(ShiftSet {
            shifts: Vec::new(),
            candidates: Vec::new(),
            complement_dim,
        });
    }
    let u = mat_from_cols(kt, &comp);
    let restrict = |a: &DenseMatrix| dense::adjoint_times(&u, &matmul(a, &u));
    let cand = solve_projected_qep(&restrict(&proj.mk), &restrict(&proj.ck), &restrict(&proj.kk))?;
    let candidates: Vec<c64> = cand.iter().filter(|c| !c.infinite).map(|c| c.theta).collect();
    let usable: Vec<c64> = candidates
        .iter()
        .copied()
        .filter(|c| retained.iter().all(|t| (c - t).norm() > SHIFT_SEPARATION))
        .collect();
    let mut scored: Vec<(f64, c64)> = match mode {
        Mode::ShiftInvert { .. } => usable.iter().map(|&c| (-c.norm(), c)).collect(),
        Mode::Direct if retained.is_empty() => usable.iter().map(|&c| (c.norm(), c)).collect(),
        Mode::Direct => usable
            .iter()
            .map(|&c| {
                let d = retained.iter().map(|t| (c - t).norm()).fold(f64::INFINITY, f64::min);
                (d, c)
            })
            .collect(),
    };
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.re.total_cmp(&b.1.re))
            .then(a.1.im.total_cmp(&b.1.im))
    });
    let shifts = scored.into_iter().take(p).map(|(_, c)| c).collect();
    Ok(ShiftSet {
        shifts,
        candidates,
        complement_dim,
    })
}

/// For real data, replaces each conjugate pair of vectors by the normalized
/// real and imaginary parts of one of them.
fn realify(vectors: &[Vec<c64>], thetas: &[c64], real_data: bool) -> Vec<Vec<c64>> {
    let mut out: Vec<Vec<c64>> = vectors.to_vec();
    if !real_data || thetas.len() != vectors.len() {
        return out;
    }
    let mut used = vec![false; vectors.len()];
    for i in 0..vectors.len() {
        if used[i] || thetas[i].im.abs() <= 1e-14 * thetas[i].norm().max(1.0) {
            continue;
        }
        let partner = (i + 1..vectors.len()).find(|&j| {
            !used[j] && (thetas[j] - thetas[i].conj()).norm() <= 1e-8 * thetas[i].norm().max(1.0)
        });
        if let Some(j) = partner {
            let normalized = |f: &dyn Fn(c64) -> f64| {
                let mut v: Vec<c64> = vectors[i].iter().map(|x| c64::new(f(*x), 0.0)).collect();
                let nv = norm2(&v);
                if nv > 0.0 {
                    scale(c64::new(1.0 / nv, 0.0), &mut v);
                }
                v
            };
            out[i] = normalized(&|x| x.re);
            out[j] = normalized(&|x| x.im);
            used[i] = true;
            used[j] = true;
        }
    }
    out
}

/// Applies the shifts to `T_k` and truncates the decomposition to length `m`.
///
/// Zero columns of `Q_k` are handled by a unit-diagonal QR of the reduced
/// rotation matrix, which keeps `Q` orthonormal and records the retained
/// deflations. The new residual column is classified like an MSOAR step,
/// with `norm_sum = ||M||_1 + ||C||_1 + ||K||_1`.
pub fn contract(
    state: &SoarState,
    shifts: &[c64],
    m: usize,
    tol: f64,
    norm_sum: f64,
) -> Result<(SoarState, RestartReport)> {
    let k = state.k();
    if m == 0 || m >= k {
        return Err(SoarError::InvalidConfig(format!("cannot contract {k} columns to {m}")));
    }
    if shifts.len() > k - m {
        return Err(SoarError::InvalidConfig(format!(
            "{} shifts exceed k - m = {}",
            shifts.len(),
            k - m
        )));
    }
    let n = state.n();
    let (tplus, v) = hessenberg_shifted_qr(&state.t_k(), shifts)?;
    let tplus = tplus.into_mat();
    let t_last = state.t_col(k - 1)[k];
    let q_next = &state.q_cols()[k];
    let p_next = &state.p_cols()[k];
    let vkm = v[(k - 1, m - 1)];

    let zero_rows: Vec<usize> = (0..k).filter(|&i| is_zero(&state.q_cols()[i])).collect();
    let combine = |cols: &[Vec<c64>], coef: &DenseMatrix, upto: usize| -> Vec<Vec<c64>> {
        (0..upto)
            .map(|j| {
                let mut acc = zeros(n);
                for (i, col) in cols.iter().enumerate() {
                    let a = coef[(i, j)];
                    if a != c64::new(0.0, 0.0) {
                        axpy(a, col, &mut acc);
                    }
                }
                acc
            })
            .collect()
    };
    let p_k = &state.p_cols()[..k];
    let pv = combine(p_k, &v, m + 1);

    let (new_q, new_p, t_m, t_sub, beta) = if zero_rows.is_empty() {
        let qv = combine(&state.q_cols()[..k], &v, m + 1);
        let t_m = DenseMatrix::from_fn(m, m, |i, j| tplus[(i, j)]);
        (qv, pv, t_m, tplus[(m, m - 1)], t_last * vkm)
    } else {
        let keep: Vec<usize> = (0..k).filter(|i| !zero_rows.contains(i)).collect();
        let q_hat: Vec<Vec<c64>> = keep.iter().map(|&i| state.q_cols()[i].clone()).collect();
        let v_hat = DenseMatrix::from_fn(keep.len(), k, |r, c| v[(keep[r], c)]);
        let (u, r) = qr_unit_diagonal(&v_hat)?;
        let qu = combine(&q_hat, &u, m + 1);
        let r_lead = DenseMatrix::from_fn(m + 1, m + 1, |i, j| r[(i, j)]);
        let pvr = solve_upper_right(&pv, &r_lead);
        let rtr = matmul(&matmul(&r, &tplus), &upper_inverse(&r));
        let t_m = DenseMatrix::from_fn(m, m, |i, j| rtr[(i, j)]);
        (qu, pvr, t_m, rtr[(m, m - 1)], t_last * vkm / r[(m - 1, m - 1)])
    };

    let mut f_top = new_q[m].clone();
    scale(t_sub, &mut f_top);
    axpy(beta, q_next, &mut f_top);
    let s_scale = t_sub.norm() * norm2(&new_p[m]) + beta.norm() * norm2(p_next);
    let mut f_bot = new_p[m].clone();
    scale(t_sub, &mut f_bot);
    axpy(beta, p_next, &mut f_bot);

    let mut q: Vec<Vec<c64>> = new_q.into_iter().take(m).collect();
    let mut p: Vec<Vec<c64>> = new_p.into_iter().take(m).collect();
    let orthogonality = orthogonality_error(&q);
    if orthogonality > REPAIR_ORTHOGONALITY_LIMIT {
        return Err(SoarError::RepairFailure { error: orthogonality });
    }
    let deflations_carried = q.iter().filter(|c| is_zero(c)).count();

    let mut t_cols: Vec<Vec<c64>> = (0..m)
        .map(|j| (0..(j + 2).min(m)).map(|i| t_m[(i, j)]).collect())
        .collect();
    let mut t_raw: Vec<f64> = (0..m.saturating_sub(1)).map(|j| t_m[(j + 1, j)].norm()).collect();

    // Re-derive the deflation span of the retained part before classifying the new column.
    let provisional = SoarState::from_parts(
        q.iter().cloned().chain(std::iter::once(zeros(n))).collect(),
        p.iter().cloned().chain(std::iter::once(zeros(n))).collect(),
        Vec::new(),
        Vec::new(),
        None,
    );
    let top_norm = norm2(&f_top);
    let mut breakdown = None;
    let residual_subdiag;
    if top_norm / norm_sum > tol {
        let inv = c64::new(1.0 / top_norm, 0.0);
        scale(inv, &mut f_top);
        scale(inv, &mut f_bot);
        q.push(f_top);
        p.push(f_bot);
        t_cols[m - 1].push(c64::new(top_norm, 0.0));
        residual_subdiag = top_norm;
    } else {
        if let StepOutcome::Breakdown { .. } =
            classify_stop(&provisional, &f_bot, s_scale, top_norm, tol)
        {
            breakdown = Some(m - 1);
        }
        q.push(zeros(n));
        p.push(f_bot);
        t_cols[m - 1].push(c64::new(1.0, 0.0));
        residual_subdiag = 1.0;
    }
    t_raw.push(top_norm);

    let new_state = SoarState::from_parts(q, p, t_cols, t_raw, breakdown);
    Ok((
        new_state,
        RestartReport {
            retained: m,
            deflations_before: zero_rows.len(),
            deflations_carried,
            residual_subdiag,
            orthogonality,
        },
    ))
}

fn orthogonality_error(q: &[Vec<c64>]) -> f64 {
    let nz: Vec<&Vec<c64>> = q.iter().filter(|c| !is_zero(c)).collect();
    let mut worst: f64 = 0.0;
    for (i, a) in nz.iter().enumerate() {
        for (j, b) in nz.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dense::dot(a, b) - c64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// Re-expands a contracted decomposition to `k` columns.
pub fn expand(state: &mut SoarState, op: &OperatorPair, k: usize, tol: f64) -> Result<RunSummary> {
    run_msoar(state, op, k, tol)
}

/// Cosine distance `1 - |cos|` between the restarted starting direction and
/// `psi(H) [q1; p1]`, with `H` built explicitly.
#[cfg(feature = "verification")]
pub fn verify_filter(
    before: &SoarState,
    after: &SoarState,
    shifts: &[c64],
    op: &OperatorPair,
) -> Result<f64> {
    let h = crate::oracles::build_h(op)?;
    let mut x: Vec<c64> = before.q_cols()[0]
        .iter()
        .chain(before.p_cols()[0].iter())
        .copied()
        .collect();
    for &mu in shifts {
        let mut y = crate::dense::matvec(&h, &x);
        axpy(-mu, &x, &mut y);
        x = y;
    }
    let got: Vec<c64> = after.q_cols()[0]
        .iter()
        .chain(after.p_cols()[0].iter())
        .copied()
        .collect();
    Ok(cosine_distance(&x, &got))
}

/// `1 - |a* b| / (||a|| ||b||)`
pub fn cosine_distance(a: &[c64], b: &[c64]) -> f64 {
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 0.0 } else { 1.0 };
    }
    (1.0 - dense::dot(a, b).norm() / (na * nb)).max(0.0)
}
