//! The two benchmark problems: a damped string and a mass-spring chain.

use std::f64::consts::PI;

use crate::c64;
use crate::error::{Result, SoarError};
use crate::operator::QepProblem;
use crate::sparse::CscMatrix;

/// Absolute tolerance of each damping integral.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// Damping profile `a(x) = x^2 (pi - x)^2 - 201`.
pub fn damping_profile(x: f64) -> f64 {
    let y = x * (PI - x);
    y * y - 201.0
}

/// String with damping `epsilon a(x)`:
/// `M = (pi/2) I`, `K = (pi/2) diag(j^2)`,
/// `c_ij = |epsilon int_0^pi a(x) sin(ix) sin(jx) dx|`.
pub fn string_damping(n: usize, epsilon: f64) -> Result<QepProblem> {
    if n == 0 {
        return Err(SoarError::InvalidConfig("string-damping needs n >= 1".into()));
    }
    let half_pi = PI / 2.0;
    // sin(ix) sin(jx) = (cos((i-j)x) - cos((i+j)x)) / 2
    let moments: Vec<f64> = (0..=2 * n)
        .map(|nu| {
            let nu = nu as f64;
            adaptive_gauss_kronrod(&|x| damping_profile(x) * (nu * x).cos(), 0.0, PI, QUADRATURE_TOL)
        })
        .collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(n * n);
    for j in 1..=n {
        for i in 1..=n {
            let v = 0.5 * (moments[i.abs_diff(j)] - moments[i + j]);
            entries.push((i - 1, j - 1, c64::new((epsilon * v).abs(), 0.0)));
        }
    }
    let m = CscMatrix::diagonal(&vec![c64::new(half_pi, 0.0); n]);
    let k = CscMatrix::diagonal(
        &(1..=n)
            .map(|j| c64::new(half_pi * (j * j) as f64, 0.0))
            .collect::<Vec<_>>(),
    );
    QepProblem::new(m, CscMatrix::from_triplets(n, n, &entries)?, k)
}

/// Mass-spring chain: `M = I`, `C = tau T`, `K = kappa T`, `T = tridiag(-1, 3, -1)`.
pub fn mass_spring(n: usize, kappa: f64, tau: f64) -> Result<QepProblem> {
    if n == 0 {
        return Err(SoarError::InvalidConfig("mass-spring needs n >= 1".into()));
    }
    let tri = |s: f64| {
        let mut e = Vec::with_capacity(3 * n);
        for i in 0..n {
            e.push((i, i, c64::new(3.0 * s, 0.0)));
            if i + 1 < n {
                e.push((i, i + 1, c64::new(-s, 0.0)));
                e.push((i + 1, i, c64::new(-s, 0.0)));
            }
        }
        CscMatrix::from_triplets(n, n, &e)
    };
    QepProblem::new(CscMatrix::identity(n), tri(tau)?, tri(kappa)?)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let pair = f(c - dx) + f(c + dx);
        kronrod += KRONROD_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive 7/15-point Gauss-Kronrod quadrature to absolute tolerance `tol`.
pub fn adaptive_gauss_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    const MAX_INTERVALS: usize = 20_000;
    let (v, e) = gk15(f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    loop {
        let total_err: f64 = intervals.iter().map(|iv| iv.3).sum();
        if total_err <= tol {
            return Ok(intervals.iter().map(|iv| iv.2).sum());
        }
        if intervals.len() >= MAX_INTERVALS {
            return Err(SoarError::Quadrature { tol });
        }
        let worst = (0..intervals.len())
            .max_by(|&i, &j| intervals[i].3.total_cmp(&intervals[j].3))
            .expect("nonempty");
        let (lo, hi, _, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_spring_three() {
        let p = mass_spring(3, 5.0, 10.0).unwrap();
        let k = p.stiffness().to_dense();
        let c = p.damping().to_dense();
        assert_eq!(k[(0, 0)], c64::new(15.0, 0.0));
        assert_eq!(k[(0, 1)], c64::new(-5.0, 0.0));
        assert_eq!(k[(0, 2)], c64::new(0.0, 0.0));
        assert_eq!(c[(1, 1)], c64::new(30.0, 0.0));
        assert_eq!(c[(2, 1)], c64::new(-10.0, 0.0));
        assert_eq!(p.mass().to_dense()[(1, 1)], c64::new(1.0, 0.0));
    }

    #[test]
    fn quadrature_of_polynomial_is_exact() {
        let v = adaptive_gauss_kronrod(&|x| x * x, 0.0, 3.0, 1e-12).unwrap();
        assert!((v - 9.0).abs() <= 1e-13);
    }

    #[test]
    fn string_damping_stiffness_and_mass() {
        let p = string_damping(4, 0.6).unwrap();
        let k = p.stiffness().to_dense();
        assert!((k[(2, 2)].re - PI / 2.0 * 9.0).abs() <= 1e-13);
        assert!((p.mass().to_dense()[(3, 3)].re - PI / 2.0).abs() <= 1e-15);
        let c = p.damping().to_dense();
        assert!((c[(0, 1)] - c[(1, 0)]).norm() <= 1e-13);
        assert!(c[(0, 0)].re >= 0.0);
    }
}
