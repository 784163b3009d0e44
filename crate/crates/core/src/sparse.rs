//! Compressed sparse column storage and a left-looking sparse LU.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::colamd;
use faer::sparse::SymbolicSparseColMatRef;

use crate::c64;
use crate::dense::DenseMatrix;
use crate::error::{Result, SoarError};

const NONE: usize = usize::MAX;

/// Complex matrix in compressed sparse column form with sorted, unique row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<c64>,
}

impl CscMatrix {
    /// Builds a matrix from `(row, col, value)` entries. Duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, c64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, c64)> = Vec::with_capacity(entries.len());
        for &(i, j, v) in entries {
            if i >= nrows || j >= ncols {
                return Err(SoarError::DimensionMismatch {
                    what: format!("entry ({i}, {j})"),
                    expected: nrows.max(ncols),
                    found: i.max(j) + 1,
                });
            }
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(SoarError::NonFinite);
            }
            sorted.push((i, j, v));
        }
        sorted.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<c64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(i);
                values.push(v);
                col_ptr[j + 1] += 1;
                last = Some((i, j));
            }
        }
        for j in 0..ncols {
            col_ptr[j + 1] += col_ptr[j];
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![c64::new(1.0, 0.0); n])
    }

    pub fn diagonal(d: &[c64]) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    /// Keeps every nonzero entry of a dense matrix.
    pub fn from_dense(a: &DenseMatrix) -> Self {
        let mut entries = Vec::new();
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                let v = a[(i, j)];
                if v != c64::new(0.0, 0.0) {
                    entries.push((i, j, v));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), &entries).expect("dense entries are in range")
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            a[(i, j)] = v;
        }
        a
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[c64] {
        &self.values
    }

    /// Entries in column-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, c64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for j in 0..self.ncols {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                out.push((self.row_idx[p], j, self.values[p]));
            }
        }
        out
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.ncols)
            .map(|j| {
                self.values[self.col_ptr[j]..self.col_ptr[j + 1]]
                    .iter()
                    .map(|v| v.norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn mul_vec(&self, x: &[c64]) -> Vec<c64> {
        let mut y = vec![c64::new(0.0, 0.0); self.nrows];
        self.mul_vec_acc(c64::new(1.0, 0.0), x, &mut y);
        y
    }

    /// `y += alpha * A x`
    pub fn mul_vec_acc(&self, alpha: c64, x: &[c64], y: &mut [c64]) {
        for j in 0..self.ncols {
            let xj = alpha * x[j];
            if xj == c64::new(0.0, 0.0) {
                continue;
            }
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[p]] += self.values[p] * xj;
            }
        }
    }

    /// `sum_i alpha_i A_i` over matrices of equal shape.
    pub fn linear_combination(terms: &[(c64, &CscMatrix)]) -> Result<Self> {
        let (nrows, ncols) = terms
            .first()
            .map_or((0, 0), |(_, a)| (a.nrows, a.ncols));
        let mut entries = Vec::new();
        for (alpha, a) in terms {
            if a.nrows != nrows || a.ncols != ncols {
                return Err(SoarError::DimensionMismatch {
                    what: "linear combination".into(),
                    expected: nrows,
                    found: a.nrows,
                });
            }
            for (i, j, v) in a.triplets() {
                entries.push((i, j, *alpha * v));
            }
        }
        Self::from_triplets(nrows, ncols, &entries)
    }

    fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// `P A Q = L U` with row pivoting for stability and a COLAMD column order for fill.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    col_perm: Vec<usize>,
    row_perm_inv: Vec<usize>,
    l: CscMatrix,
    u: CscMatrix,
    growth: f64,
}

impl SparseLu {
    pub fn factor(a: &CscMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(SoarError::DimensionMismatch {
                what: "LU factorization".into(),
                expected: a.nrows,
                found: a.ncols,
            });
        }
        let n = a.nrows;
        let col_perm = column_order(a)?;
        let anorm = a.norm1();
        let pivot_tol = 8.0 * f64::EPSILON * anorm;

        let mut pinv = vec![NONE; n];
        let mut lp = vec![0usize; n + 1];
        let mut li: Vec<usize> = Vec::new();
        let mut lx: Vec<c64> = Vec::new();
        let mut up = vec![0usize; n + 1];
        let mut ui: Vec<usize> = Vec::new();
        let mut ux: Vec<c64> = Vec::new();

        let mut x = vec![c64::new(0.0, 0.0); n];
        let mut xi = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut pstack = vec![0usize; n];
        let mut marked = vec![false; n];

        for k in 0..n {
            lp[k] = li.len();
            up[k] = ui.len();
            let col = col_perm[k];
            let rows = &a.row_idx[a.col_ptr[col]..a.col_ptr[col + 1]];
            let vals = &a.values[a.col_ptr[col]..a.col_ptr[col + 1]];

            // reach of the column through the columns of L found so far
            let mut top = n;
            for &r in rows {
                if !marked[r] {
                    top = dfs(r, &lp, &li, &pinv, top, &mut xi, &mut stack, &mut pstack, &mut marked);
                }
            }
            for &r in &xi[top..n] {
                marked[r] = false;
            }
            for &r in &xi[top..n] {
                x[r] = c64::new(0.0, 0.0);
            }
            for (&r, &v) in rows.iter().zip(vals) {
                x[r] = v;
            }
            for idx in top..n {
                let j = xi[idx];
                let jj = pinv[j];
                if jj == NONE {
                    continue;
                }
                let xj = x[j];
                for p in (lp[jj] + 1)..lp[jj + 1] {
                    x[li[p]] -= lx[p] * xj;
                }
            }

            let mut ipiv = NONE;
            let mut best = -1.0;
            for &i in &xi[top..n] {
                if pinv[i] == NONE {
                    let mag = x[i].norm();
                    if mag > best {
                        best = mag;
                        ipiv = i;
                    }
                } else {
                    ui.push(pinv[i]);
                    ux.push(x[i]);
                }
            }
            if ipiv == NONE || best <= pivot_tol {
                return Err(SoarError::SingularMatrix { position: k });
            }
            let pivot = x[ipiv];
            ui.push(k);
            ux.push(pivot);
            pinv[ipiv] = k;
            li.push(ipiv);
            lx.push(c64::new(1.0, 0.0));
            for &i in &xi[top..n] {
                if pinv[i] == NONE {
                    li.push(i);
                    lx.push(x[i] / pivot);
                }
                x[i] = c64::new(0.0, 0.0);
            }
        }
        lp[n] = li.len();
        up[n] = ui.len();
        for r in li.iter_mut() {
            *r = pinv[*r];
        }
        let l = CscMatrix {
            nrows: n,
            ncols: n,
            col_ptr: lp,
            row_idx: li,
            values: lx,
        };
        let u = CscMatrix {
            nrows: n,
            ncols: n,
            col_ptr: up,
            row_idx: ui,
            values: ux,
        };
        let amax = a.max_abs();
        let growth = if amax > 0.0 { u.max_abs() / amax } else { 1.0 };
        Ok(Self {
            n,
            col_perm,
            row_perm_inv: pinv,
            l,
            u,
            growth,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `max |U_ij| / max |A_ij|`
    pub fn pivot_growth(&self) -> f64 {
        self.growth
    }

    pub fn fill(&self) -> usize {
        self.l.nnz() + self.u.nnz()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[c64]) -> Vec<c64> {
        let n = self.n;
        let mut y = vec![c64::new(0.0, 0.0); n];
        for i in 0..n {
            y[self.row_perm_inv[i]] = b[i];
        }
        let l = &self.l;
        for j in 0..n {
            let yj = y[j];
            if yj == c64::new(0.0, 0.0) {
                continue;
            }
            for p in (l.col_ptr[j] + 1)..l.col_ptr[j + 1] {
                y[l.row_idx[p]] -= l.values[p] * yj;
            }
        }
        let u = &self.u;
        for j in (0..n).rev() {
            let last = u.col_ptr[j + 1] - 1;
            y[j] /= u.values[last];
            let yj = y[j];
            if yj == c64::new(0.0, 0.0) {
                continue;
            }
            for p in u.col_ptr[j]..last {
                y[u.row_idx[p]] -= u.values[p] * yj;
            }
        }
        let mut x = vec![c64::new(0.0, 0.0); n];
        for k in 0..n {
            x[self.col_perm[k]] = y[k];
        }
        x
    }
}

/// Nonrecursive depth-first search from row `start` through finished columns of L.
/// Appends the postorder to `xi[..top]`, returning the new top.
#[allow(clippy::too_many_arguments)]
fn dfs(
    start: usize,
    lp: &[usize],
    li: &[usize],
    pinv: &[usize],
    mut top: usize,
    xi: &mut [usize],
    stack: &mut [usize],
    pstack: &mut [usize],
    marked: &mut [bool],
) -> usize {
    let mut head: isize = 0;
    stack[0] = start;
    while head >= 0 {
        let h = head as usize;
        let j = stack[h];
        let jj = pinv[j];
        if !marked[j] {
            marked[j] = true;
            pstack[h] = if jj == NONE { 0 } else { lp[jj] };
        }
        let end = if jj == NONE { 0 } else { lp[jj + 1] };
        let mut done = true;
        let mut p = pstack[h];
        while p < end {
            let i = li[p];
            p += 1;
            if marked[i] {
                continue;
            }
            pstack[h] = p;
            head += 1;
            stack[head as usize] = i;
            done = false;
            break;
        }
        if done {
            head -= 1;
            top -= 1;
            xi[top] = j;
        }
    }
    top
}

fn column_order(a: &CscMatrix) -> Result<Vec<usize>> {
    let n = a.ncols;
    if n == 0 {
        return Ok(Vec::new());
    }
    let sym = SymbolicSparseColMatRef::new_checked(a.nrows, n, &a.col_ptr, None, &a.row_idx);
    let mut perm = vec![0usize; n];
    let mut perm_inv = vec![0usize; n];
    let req = colamd::order_scratch::<usize>(a.nrows, n, a.nnz());
    let mut buf = MemBuffer::new(req);
    colamd::order(
        &mut perm,
        &mut perm_inv,
        sym,
        colamd::Control::default(),
        MemStack::new(&mut buf),
    )
    .map_err(|_| SoarError::InvalidConfig("column ordering failed".into()))?;
    Ok(perm)
}
