//! Small dense kernels shared by the reduction, extraction and restart code.
//!
//! Tall bases are kept as lists of columns (`Vec<Vec<c64>>`); square
//! projected matrices are faer matrices.

use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::ComputeEigenvectors;
use faer::linalg::gevd::{gevd_cplx, gevd_scratch, GevdParams};
use faer::{Mat, Par, Side, Spec};

use crate::c64;
use crate::error::{Result, SoarError};

pub type DenseMatrix = Mat<c64>;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Relative residual below which a column of `qr_unit_diagonal` counts as dependent.
pub const DEPENDENCE_TOL: f64 = 1e-12;

/// Relative gap between the two smallest eigenvalues of B_k below which the
/// refined vector is flagged as unreliable.
pub const DEGENERACY_GAP: f64 = 1e-6;

pub fn zeros(n: usize) -> Vec<c64> {
    vec![c64::new(0.0, 0.0); n]
}

/// Conjugated inner product `a* b`.
pub fn dot(a: &[c64], b: &[c64]) -> c64 {
    a.iter()
        .zip(b)
        .fold(c64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

pub fn norm2(a: &[c64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: c64, x: &[c64], y: &mut [c64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: c64, x: &mut [c64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn is_zero(x: &[c64]) -> bool {
    x.iter().all(|v| v.re == 0.0 && v.im == 0.0)
}

/// Builds an `n x cols.len()` matrix from columns.
pub fn mat_from_cols(n: usize, cols: &[Vec<c64>]) -> DenseMatrix {
    Mat::from_fn(n, cols.len(), |i, j| cols[j][i])
}

pub fn col_of(m: &DenseMatrix, j: usize) -> Vec<c64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

pub fn frobenius(m: &DenseMatrix) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

/// `A* B` for two matrices with the same row count.
pub fn adjoint_times(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a.as_ref().adjoint() * b.as_ref()
}

pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a.as_ref() * b.as_ref()
}

pub fn matvec(a: &DenseMatrix, x: &[c64]) -> Vec<c64> {
    let mut y = zeros(a.nrows());
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == c64::new(0.0, 0.0) {
            continue;
        }
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += a[(i, j)] * xj;
        }
    }
    y
}

/// Upper Hessenberg square matrix. Entries below the first subdiagonal are exactly zero.
#[derive(Debug, Clone)]
pub struct HessenbergMatrix {
    mat: DenseMatrix,
}

impl HessenbergMatrix {
    pub fn new(mat: DenseMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(SoarError::DimensionMismatch {
                what: "Hessenberg matrix".into(),
                expected: mat.nrows(),
                found: mat.ncols(),
            });
        }
        let n = mat.nrows();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in (j + 2)..n {
                worst = worst.max(mat[(i, j)].norm());
            }
        }
        if worst > 0.0 {
            return Err(SoarError::HessenbergLost { magnitude: worst });
        }
        Ok(Self { mat })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_mat(&self) -> &DenseMatrix {
        &self.mat
    }

    pub fn into_mat(self) -> DenseMatrix {
        self.mat
    }
}

/// Outcome of orthogonalizing one vector against a basis.
#[derive(Debug, Clone)]
pub struct Orthogonalization {
    /// Accumulated projection coefficients, one per basis column.
    pub coeffs: Vec<c64>,
    /// Norm of the vector after orthogonalization.
    pub norm: f64,
    /// Whether the second pass ran.
    pub refined: bool,
}

/// Modified Gram-Schmidt against `basis` with one optional refinement pass.
///
/// The second pass runs when the norm drops below `1/sqrt(2)` of its value
/// before the first pass. Coefficients of both passes are summed.
pub fn orthogonalize_with_refinement(v: &mut [c64], basis: &[&[c64]]) -> Orthogonalization {
    let mut coeffs = zeros(basis.len());
    let before = norm2(v);
    mgs_pass(v, basis, &mut coeffs);
    let mut norm = norm2(v);
    let mut refined = false;
    if norm < INV_SQRT2 * before {
        mgs_pass(v, basis, &mut coeffs);
        norm = norm2(v);
        refined = true;
    }
    Orthogonalization {
        coeffs,
        norm,
        refined,
    }
}

fn mgs_pass(v: &mut [c64], basis: &[&[c64]], coeffs: &mut [c64]) {
    for (b, c) in basis.iter().zip(coeffs.iter_mut()) {
        let h = dot(b, v);
        if h != c64::new(0.0, 0.0) {
            axpy(-h, b, v);
            *c += h;
        }
    }
}

/// Plane rotation `G = [c s; -conj(s) c]` with `G [a; b] = [r; 0]`.
#[derive(Debug, Clone, Copy)]
struct Givens {
    c: f64,
    s: c64,
}

impl Givens {
    fn new(a: c64, b: c64) -> Self {
        let bn = b.norm();
        if bn == 0.0 {
            return Self {
                c: 1.0,
                s: c64::new(0.0, 0.0),
            };
        }
        let an = a.norm();
        if an == 0.0 {
            return Self {
                c: 0.0,
                s: b.conj() / bn,
            };
        }
        let r = an.hypot(bn);
        Self {
            c: an / r,
            s: (a / an) * b.conj() / r,
        }
    }

    /// Rows `i`, `i+1` of `m` become `G` times themselves.
    fn apply_rows(&self, m: &mut DenseMatrix, i: usize) {
        for j in 0..m.ncols() {
            let x = m[(i, j)];
            let y = m[(i + 1, j)];
            m[(i, j)] = x * self.c + self.s * y;
            m[(i + 1, j)] = -self.s.conj() * x + y * self.c;
        }
    }

    /// Columns `i`, `i+1` of `m` become themselves times `G*`.
    fn apply_cols(&self, m: &mut DenseMatrix, i: usize) {
        for r in 0..m.nrows() {
            let x = m[(r, i)];
            let y = m[(r, i + 1)];
            m[(r, i)] = x * self.c + self.s.conj() * y;
            m[(r, i + 1)] = -self.s * x + y * self.c;
        }
    }
}

/// Applies one implicit single-shift QR sweep per shift, in order of
/// increasing `|mu|`, and returns `(V* T V, V)`.
///
/// `V e_1` is proportional to `prod (T - mu I) e_1` and `V` has as many
/// nonzero subdiagonals as there are shifts.
pub fn hessenberg_shifted_qr(
    t: &HessenbergMatrix,
    shifts: &[c64],
) -> Result<(HessenbergMatrix, DenseMatrix)> {
    let k = t.dim();
    let mut h = t.as_mat().clone();
    let mut v: DenseMatrix = Mat::identity(k, k);
    let mut order: Vec<c64> = shifts.to_vec();
    order.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let scale = 1.0 + frobenius(&h);
    for mu in order {
        if k < 2 {
            continue;
        }
        let g = Givens::new(h[(0, 0)] - mu, h[(1, 0)]);
        g.apply_rows(&mut h, 0);
        g.apply_cols(&mut h, 0);
        g.apply_cols(&mut v, 0);
        for i in 1..k - 1 {
            let g = Givens::new(h[(i, i - 1)], h[(i + 1, i - 1)]);
            g.apply_rows(&mut h, i);
            h[(i + 1, i - 1)] = c64::new(0.0, 0.0);
            g.apply_cols(&mut h, i);
            g.apply_cols(&mut v, i);
        }
        let mut worst: f64 = 0.0;
        for j in 0..k {
            for i in (j + 2)..k {
                worst = worst.max(h[(i, j)].norm());
                h[(i, j)] = c64::new(0.0, 0.0);
            }
        }
        if worst > 1e-10 * scale {
            return Err(SoarError::HessenbergLost { magnitude: worst });
        }
    }
    Ok((HessenbergMatrix { mat: h }, v))
}

/// Ritz value of a projected QEP and its primitive vector.
#[derive(Debug, Clone)]
pub struct ProjectedEigenpair {
    pub theta: c64,
    /// Unit-norm primitive vector `g`.
    pub g: Vec<c64>,
    /// Eigenvalue is infinite or too large to be trusted (`|theta| > 1e12`).
    pub infinite: bool,
}

/// Magnitude above which a projected eigenvalue is treated as infinite.
pub const INFINITE_THRESHOLD: f64 = 1e12;

/// Solves `(theta^2 M_k + theta C_k + K_k) g = 0` through QZ on the companion
/// pencil `[-C_k -K_k; I 0] - theta [M_k 0; 0 I]`.
pub fn solve_projected_qep(
    mk: &DenseMatrix,
    ck: &DenseMatrix,
    kk: &DenseMatrix,
) -> Result<Vec<ProjectedEigenpair>> {
    let k = mk.nrows();
    for (name, m) in [("M_k", mk), ("C_k", ck), ("K_k", kk)] {
        if m.nrows() != k || m.ncols() != k {
            return Err(SoarError::DimensionMismatch {
                what: name.into(),
                expected: k,
                found: m.ncols(),
            });
        }
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let one = c64::new(1.0, 0.0);
    let a = Mat::from_fn(2 * k, 2 * k, |i, j| match (i < k, j < k) {
        (true, true) => -ck[(i, j)],
        (true, false) => -kk[(i, j - k)],
        (false, true) => {
            if i - k == j {
                one
            } else {
                c64::new(0.0, 0.0)
            }
        }
        (false, false) => c64::new(0.0, 0.0),
    });
    let b = Mat::from_fn(2 * k, 2 * k, |i, j| match (i < k, j < k) {
        (true, true) => mk[(i, j)],
        (false, false) if i == j => one,
        _ => c64::new(0.0, 0.0),
    });
    if a.as_ref().has_nan() || b.as_ref().has_nan() || !a.as_ref().is_all_finite() {
        return Err(SoarError::NonFinite);
    }
    let (u, sa, sb) = generalized_eigen(a, b)?;
    let mut out = Vec::with_capacity(2 * k);
    for idx in 0..2 * k {
        let alpha = sa[idx];
        let beta = sb[idx];
        let theta = if beta.norm() == 0.0 {
            c64::new(f64::INFINITY, 0.0)
        } else {
            alpha / beta
        };
        let infinite = !(theta.norm() <= INFINITE_THRESHOLD);
        let top: Vec<c64> = (0..k).map(|i| u[(i, idx)]).collect();
        let bottom: Vec<c64> = (0..k).map(|i| u[(i + k, idx)]).collect();
        let mut g = if infinite || theta.norm() >= 1.0 {
            top
        } else {
            bottom
        };
        let mut gn = norm2(&g);
        if gn == 0.0 {
            g = (0..k).map(|i| u[(i, idx)] + u[(i + k, idx)]).collect();
            gn = norm2(&g);
        }
        if gn > 0.0 {
            scale(c64::new(1.0 / gn, 0.0), &mut g);
        }
        out.push(ProjectedEigenpair { theta, g, infinite });
    }
    Ok(out)
}

/// QZ on the pencil `(a, b)`: right eigenvectors and `(alpha, beta)` pairs.
///
/// The blocked multishift QZ of faer is extremely slow on some pencils of
/// order around 80, so the unblocked sweep is forced; projected pencils are
/// small enough for it to be the faster choice anyway.
fn generalized_eigen(
    mut a: DenseMatrix,
    mut b: DenseMatrix,
) -> Result<(DenseMatrix, Vec<c64>, Vec<c64>)> {
    let n = a.nrows();
    let mut params: Spec<GevdParams, c64> = Default::default();
    params.schur.blocking_threshold = usize::MAX / 2;
    let mut u = Mat::zeros(n, n);
    let mut sa = Diag::zeros(n);
    let mut sb = Diag::zeros(n);
    let scratch = gevd_scratch::<c64>(n, ComputeEigenvectors::No, ComputeEigenvectors::Yes, Par::Seq, params);
    gevd_cplx(
        a.as_mut(),
        b.as_mut(),
        sa.as_mut(),
        sb.as_mut(),
        None,
        Some(u.as_mut()),
        Par::Seq,
        MemStack::new(&mut MemBuffer::new(scratch)),
        params,
    )
    .map_err(|_| SoarError::SingularPencil)?;
    let sa = (0..n).map(|i| sa[i]).collect();
    let sb = (0..n).map(|i| sb[i]).collect();
    Ok((u, sa, sb))
}

/// The nine Gram blocks `W_i* W_j` used to assemble B_k for any theta.
#[derive(Debug, Clone)]
pub struct GramBlocks {
    blocks: [[DenseMatrix; 3]; 3],
}

impl GramBlocks {
    pub fn new(w1: &DenseMatrix, w2: &DenseMatrix, w3: &DenseMatrix) -> Self {
        let w = [w1, w2, w3];
        let g = |i: usize, j: usize| adjoint_times(w[i], w[j]);
        let g12 = g(0, 1);
        let g13 = g(0, 2);
        let g23 = g(1, 2);
        Self {
            blocks: [
                [g(0, 0), g12.clone(), g13.clone()],
                [g12.adjoint().to_owned(), g(1, 1), g23.clone()],
                [g13.adjoint().to_owned(), g23.adjoint().to_owned(), g(2, 2)],
            ],
        }
    }

    pub fn dim(&self) -> usize {
        self.blocks[0][0].nrows()
    }

    /// `B_k(theta) = F* F` with `F = theta^2 W1 + theta W2 + W3`.
    pub fn assemble(&self, theta: c64) -> DenseMatrix {
        let t2 = theta * theta;
        let coef = [t2, theta, c64::new(1.0, 0.0)];
        let k = self.dim();
        let mut b = Mat::from_fn(k, k, |_, _| c64::new(0.0, 0.0));
        for i in 0..3 {
            for j in 0..3 {
                let c = coef[i].conj() * coef[j];
                let g = &self.blocks[i][j];
                for col in 0..k {
                    for row in 0..k {
                        b[(row, col)] += c * g[(row, col)];
                    }
                }
            }
        }
        for col in 0..k {
            for row in 0..col {
                let avg = (b[(row, col)] + b[(col, row)].conj()) * 0.5;
                b[(row, col)] = avg;
                b[(col, row)] = avg.conj();
            }
            b[(col, col)] = c64::new(b[(col, col)].re, 0.0);
        }
        b
    }
}

/// Refined Ritz vector for one Ritz value.
#[derive(Debug, Clone)]
pub struct RefinedVector {
    /// Unit right singular vector of F for the smallest singular value.
    pub z: Vec<c64>,
    /// `||F z||`, evaluated directly from the W products.
    pub sigma_min: f64,
    /// Smallest eigenvalue of B_k.
    pub lambda_min: f64,
    /// The two smallest eigenvalues of B_k are within relative `DEGENERACY_GAP`.
    pub degenerate: bool,
}

/// Minimizes `||(theta^2 W1 + theta W2 + W3) z||` over unit `z` via the
/// Hermitian eigenproblem of the cross-product matrix B_k.
pub fn refined_vector(
    theta: c64,
    grams: &GramBlocks,
    w1: &DenseMatrix,
    w2: &DenseMatrix,
    w3: &DenseMatrix,
) -> Result<RefinedVector> {
    let k = grams.dim();
    if k == 0 {
        return Err(SoarError::DimensionMismatch {
            what: "refined vector basis".into(),
            expected: 1,
            found: 0,
        });
    }
    let b = grams.assemble(theta);
    let evd = b
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| SoarError::EigenFailure)?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut z: Vec<c64> = (0..k).map(|i| u[(i, 0)]).collect();
    let zn = norm2(&z);
    scale(c64::new(1.0 / zn, 0.0), &mut z);
    let lambda_min = s[0].re;
    let degenerate = if k > 1 {
        let l2 = s[1].re;
        (l2 - lambda_min) <= DEGENERACY_GAP * l2.abs().max(f64::MIN_POSITIVE)
    } else {
        false
    };
    if degenerate {
        log::warn!("refined vector for theta = {theta} sits on a near-degenerate eigenvalue of B_k");
    }
    let sigma_min = norm2(&apply_pencil(theta, w1, w2, w3, &z));
    Ok(RefinedVector {
        z,
        sigma_min,
        lambda_min,
        degenerate,
    })
}

/// `(theta^2 W1 + theta W2 + W3) z`
pub fn apply_pencil(
    theta: c64,
    w1: &DenseMatrix,
    w2: &DenseMatrix,
    w3: &DenseMatrix,
    z: &[c64],
) -> Vec<c64> {
    let a = matvec(w1, z);
    let b = matvec(w2, z);
    let c = matvec(w3, z);
    let t2 = theta * theta;
    a.iter()
        .zip(&b)
        .zip(&c)
        .map(|((x, y), w)| t2 * x + theta * y + w)
        .collect()
}

/// QR of a full-row-rank wide matrix where dependent columns get a zero
/// column in `U` and a unit diagonal entry in `R`.
///
/// Returns `(U, R)` with `V = U R`, `U` having orthonormal or zero columns.
pub fn qr_unit_diagonal(v: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let rows = v.nrows();
    let cols = v.ncols();
    let mut u_cols: Vec<Vec<c64>> = Vec::with_capacity(cols);
    let mut accepted: Vec<usize> = Vec::new();
    let mut r = Mat::from_fn(cols, cols, |_, _| c64::new(0.0, 0.0));
    for c in 0..cols {
        let mut x = col_of(v, c);
        let xnorm = norm2(&x);
        let basis: Vec<&[c64]> = accepted.iter().map(|&i| u_cols[i].as_slice()).collect();
        let o = orthogonalize_with_refinement(&mut x, &basis);
        for (pos, &i) in accepted.iter().enumerate() {
            r[(i, c)] = o.coeffs[pos];
        }
        let dependent = accepted.len() == rows || xnorm == 0.0 || o.norm <= DEPENDENCE_TOL * xnorm;
        if dependent {
            u_cols.push(zeros(rows));
            r[(c, c)] = c64::new(1.0, 0.0);
        } else {
            scale(c64::new(1.0 / o.norm, 0.0), &mut x);
            u_cols.push(x);
            r[(c, c)] = c64::new(o.norm, 0.0);
            accepted.push(c);
        }
    }
    if accepted.len() < rows {
        return Err(SoarError::RowRankDeficient {
            rank: accepted.len(),
            expected: rows,
        });
    }
    Ok((mat_from_cols(rows, &u_cols), r))
}

/// Solves `X R = B` for upper triangular `R` (columns of B combined).
pub fn solve_upper_right(b: &[Vec<c64>], r: &DenseMatrix) -> Vec<Vec<c64>> {
    let m = r.ncols();
    let n = b.first().map_or(0, |c| c.len());
    let mut x: Vec<Vec<c64>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut col = b[j].clone();
        for (i, xi) in x.iter().enumerate().take(j) {
            let rij = r[(i, j)];
            if rij != c64::new(0.0, 0.0) {
                axpy(-rij, xi, &mut col);
            }
        }
        let d = r[(j, j)];
        for v in col.iter_mut() {
            *v /= d;
        }
        debug_assert_eq!(col.len(), n);
        x.push(col);
    }
    x
}

/// Inverse of an upper triangular matrix.
pub fn upper_inverse(r: &DenseMatrix) -> DenseMatrix {
    let m = r.nrows();
    let mut inv = Mat::from_fn(m, m, |_, _| c64::new(0.0, 0.0));
    for j in 0..m {
        inv[(j, j)] = c64::new(1.0, 0.0) / r[(j, j)];
        for i in (0..j).rev() {
            let mut s = c64::new(0.0, 0.0);
            for l in (i + 1)..=j {
                s += r[(i, l)] * inv[(l, j)];
            }
            inv[(i, j)] = -s / r[(i, i)];
        }
    }
    inv
}
