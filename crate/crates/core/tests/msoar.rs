mod common;

use common::{
    combine_pairs, decomposition_check, low_rank, unitary_diagonal_problem, nonzero_cols, norm, orthonormality_error, prop_config, random_dense,
    random_problem, random_vec, rng, stacked,
};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use soarqep::c64;
use soarqep::dense::DenseMatrix;
use soarqep::io::generators::mass_spring;
use soarqep::msoar::{estimate_ck, init_state, msoar_step, run_msoar, StepOutcome};
use soarqep::operator::{build_operator, Mode, OperatorPair, QepProblem};
use soarqep::oracles::{arnoldi_on_h, build_h, dense_qep_spectrum, max_principal_angle};
use soarqep::sparse::CscMatrix;

fn c(re: f64) -> c64 {
    c64::new(re, 0.0)
}

fn problem(m: &DenseMatrix, cm: &DenseMatrix, k: &DenseMatrix) -> QepProblem {
    QepProblem::new(CscMatrix::from_dense(m), CscMatrix::from_dense(cm), CscMatrix::from_dense(k)).unwrap()
}

fn zeros(n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, n, |_, _| c(0.0))
}

fn identity(n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, n, |i, j| c(if i == j { 1.0 } else { 0.0 }))
}

#[test]
fn init_examples() {
    let mut u1 = vec![c(0.0); 4];
    u1[0] = c(3.0);
    let st = init_state(&u1, &[c(0.0); 4]).unwrap();
    assert_eq!(st.q_cols()[0], vec![c(1.0), c(0.0), c(0.0), c(0.0)]);
    assert!(norm(&st.p_cols()[0]) == 0.0);

    let ones = vec![c(1.0); 5];
    let st = init_state(&ones, &ones).unwrap();
    assert!((norm(&st.q_cols()[0]) - 1.0).abs() < 1e-15);
    assert_eq!(st.q_cols()[0], st.p_cols()[0]);

    let mut r = rng(1);
    let (u1, u2) = (random_vec(&mut r, 9, true), random_vec(&mut r, 9, true));
    let st = init_state(&u1, &u2).unwrap();
    assert!((norm(&st.p_cols()[0]) - norm(&u2) / norm(&u1)).abs() < 1e-14);
}

#[test]
fn without_b_the_q_chain_is_arnoldi_on_a() {
    let mut r = rng(2);
    let n = 12;
    let mut m = random_dense(&mut r, n, true);
    for i in 0..n {
        m[(i, i)] += c(n as f64);
    }
    let cm = random_dense(&mut r, n, true);
    let prob = problem(&m, &cm, &zeros(n));
    let op = build_operator(&prob, Mode::Direct).unwrap();
    let u1 = random_vec(&mut r, n, true);
    let mut st = init_state(&u1, &vec![c(0.0); n]).unwrap();
    run_msoar(&mut st, &op, 6, 1e-12).unwrap();

    // A = top-left block of H
    let h = build_h(&op).unwrap();
    let a = DenseMatrix::from_fn(n, n, |i, j| h[(i, j)]);
    let reference = arnoldi_on_h(&a, &u1, 7);
    for (j, (got, want)) in st.q_cols().iter().zip(&reference).enumerate() {
        let ip: c64 = got.iter().zip(want).map(|(x, y)| x.conj() * y).sum();
        assert!((ip.norm() - 1.0).abs() < 1e-10, "q_{} differs: |cos| = {}", j + 1, ip.norm());
    }
    // p_{j+1} stays in the span of q_1 .. q_j
    for j in 1..st.p_cols().len() {
        let mut p = st.p_cols()[j].clone();
        for q in &st.q_cols()[..j] {
            let h: c64 = q.iter().zip(&p).map(|(x, y)| x.conj() * y).sum();
            p.iter_mut().zip(q).for_each(|(a, b)| *a -= h * b);
        }
        assert!(norm(&p) <= 1e-10 * (1.0 + norm(&st.p_cols()[j])));
    }
}

#[test]
fn zero_operator_deflates_then_breaks_down() {
    let n = 4;
    let prob = problem(&identity(n), &zeros(n), &zeros(n));
    let op = build_operator(&prob, Mode::Direct).unwrap();
    let mut r = rng(3);
    let mut st = init_state(&random_vec(&mut r, n, false), &vec![c(0.0); n]).unwrap();
    // H [q1; 0] = [0; q1] is a new direction, so step 1 deflates with
    // t_21 = 0 and the stacked space closes at step 2
    let out = msoar_step(&mut st, &op, 1e-10).unwrap();
    assert!(matches!(out, StepOutcome::Deflation { t_raw } if t_raw == 0.0), "{out:?}");
    assert_eq!(st.t_col(0)[1], c(1.0));
    let out = msoar_step(&mut st, &op, 1e-10).unwrap();
    assert!(matches!(out, StepOutcome::Breakdown { t_raw } if t_raw == 0.0), "{out:?}");
    assert_eq!(st.breakdown(), Some(1));
    assert!(arnoldi_remainder(&op, &st, 2) <= 1e-14);
    assert!(msoar_step(&mut st, &op, 1e-10).is_err());
}

#[test]
fn rank_one_b_first_stop_is_deflation() {
    let mut r = rng(4);
    let n = 8;
    let prob = problem(&identity(n), &zeros(n), &low_rank(&mut r, n, 1));
    let op = build_operator(&prob, Mode::Direct).unwrap();
    let u1 = random_vec(&mut r, n, false);
    let mut st = init_state(&u1, &u1).unwrap();
    let first = loop {
        match msoar_step(&mut st, &op, 1e-10).unwrap() {
            StepOutcome::Regular { .. } => continue,
            other => break other,
        }
    };
    assert!(matches!(first, StepOutcome::Deflation { .. }), "{first:?}");
}

#[test]
fn generic_dense_run() {
    let mut r = rng(5);
    let prob = random_problem(&mut r, 50, true);
    let op = build_operator(&prob, Mode::Direct).unwrap();
    let u1 = random_vec(&mut r, 50, false);
    let mut st = init_state(&u1, &u1).unwrap();
    let summary = run_msoar(&mut st, &op, 10, 1e-10).unwrap();
    assert_eq!(summary.steps, 10);
    assert_eq!(summary.deflations, 0);
    let (res, allowed) = decomposition_check(&st, &op, 1e-10);
    assert!(res <= allowed, "{res:e} > {allowed:e}");
    let q = nonzero_cols(st.q_cols());
    assert_eq!(q.len(), 11);
    assert!(orthonormality_error(&q) < 1e-10);
}

#[test]
fn mass_spring_run_has_no_deflation() {
    let prob = mass_spring(200, 5.0, 10.0).unwrap();
    let op = build_operator(&prob, Mode::ShiftInvert { sigma: c64::new(-13.0, 0.4) }).unwrap();
    let u1 = soarqep::driver::starting_vector(200, 0);
    let mut st = init_state(&u1, &u1).unwrap();
    let summary = run_msoar(&mut st, &op, 30, 1e-10).unwrap();
    assert_eq!(summary.steps, 30);
    assert!(st.deflation_steps().is_empty());
}

#[test]
fn estimate_ck_examples() {
    // k = 0, p_1 = 0, theta = 0, ||M|| = 1: sqrt(1) * 1 / 1
    let st = init_state(&[c(1.0), c(0.0)], &[c(0.0), c(0.0)]).unwrap();
    assert!((estimate_ck(&st, c(0.0), 1.0) - 1.0).abs() < 1e-15);

    let mut r = rng(6);
    let prob = random_problem(&mut r, 10, true);
    let op = build_operator(&prob, Mode::Direct).unwrap();
    let u1 = random_vec(&mut r, 10, true);
    let mut st = init_state(&u1, &random_vec(&mut r, 10, true)).unwrap();
    run_msoar(&mut st, &op, 5, 1e-10).unwrap();
    let theta = c64::new(0.3, -1.2);
    let norms: Vec<f64> = st.p_cols().iter().map(|p| norm(p).powi(2)).collect();
    let mean = norms[..5].iter().sum::<f64>() / 5.0;
    let nm = prob.norms1()[0];
    let want = (theta.norm_sqr() + 1.0).sqrt() * (nm * nm + norms[5]).sqrt() / (1.0 + mean).sqrt();
    assert!((estimate_ck(&st, theta, nm) - want).abs() <= 1e-14 * want);
}

/// Start vectors in the span of `d` eigenvectors `[lambda x; x]` of `H`.
fn invariant_start(rng: &mut ChaCha8Rng, prob: &QepProblem, d: usize) -> (Vec<c64>, Vec<c64>) {
    let n = prob.dim();
    let spectrum = dense_qep_spectrum(prob).unwrap();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < d {
        let i = rng.random_range(0..spectrum.values.len());
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    let mut u1 = vec![c(0.0); n];
    let mut u2 = vec![c(0.0); n];
    for &i in &chosen {
        let x = spectrum.vector(i);
        let coef = c64::new(rng.random::<f64>() + 0.5, rng.random::<f64>() - 0.5);
        for r in 0..n {
            u1[r] += coef * spectrum.values[i] * x[r];
            u2[r] += coef * x[r];
        }
    }
    (u1, u2)
}

/// Problems whose Krylov sequence stops early: low-rank `A` and `B`.
fn low_rank_problem(rng: &mut ChaCha8Rng, n: usize) -> QepProblem {
    if rng.random::<bool>() {
        let rank = rng.random_range(1..=2);
        problem(&identity(n), &zeros(n), &low_rank(rng, n, rank))
    } else {
        let mut m = random_dense(rng, n, false);
        for i in 0..n {
            m[(i, i)] += c(n as f64);
        }
        let r1 = rng.random_range(1..=2);
        let r2 = rng.random_range(0..=2);
        problem(&m, &low_rank(rng, n, r1), &low_rank(rng, n, r2))
    }
}

/// Norm of the Arnoldi remainder on `H` after `k` steps from `[q_1; p_1]`.
fn arnoldi_remainder(op: &OperatorPair, st: &soarqep::msoar::SoarState, k: usize) -> f64 {
    let h = build_h(op).unwrap();
    let n2 = h.nrows();
    let start = stacked(st, 1).remove(0);
    let basis = arnoldi_on_h(&h, &start, k);
    if basis.len() < k {
        return 0.0;
    }
    let last = &basis[k - 1];
    let mut w: Vec<c64> = (0..n2).map(|i| (0..n2).map(|l| h[(i, l)] * last[l]).sum()).collect();
    for _ in 0..2 {
        for b in &basis {
            let ip: c64 = b.iter().zip(&w).map(|(x, y)| x.conj() * y).sum();
            w.iter_mut().zip(b).for_each(|(a, v)| *a -= ip * v);
        }
    }
    norm(&w)
}

fn counted_run(st: &mut soarqep::msoar::SoarState, op: &OperatorPair, k: usize, tol: f64) -> soarqep::msoar::RunSummary {
    let before = op.apply_count();
    let summary = run_msoar(st, op, k, tol).unwrap();
    assert_eq!(op.apply_count() - before, summary.steps, "one apply_ab per step");
    summary
}

proptest! {
    #![proptest_config(prop_config(48))]

    #[test]
    fn decomposition_holds_with_and_without_deflation(seed in any::<u64>(), n in 3usize..14, extra in 0usize..10, complex in any::<bool>()) {
        let mut r = rng(seed);
        let prob = random_problem(&mut r, n, complex);
        let op = build_operator(&prob, Mode::Direct).unwrap();
        let k = (n - 1 + extra).min(2 * n - 1);
        let u1 = random_vec(&mut r, n, complex);
        let u2 = random_vec(&mut r, n, complex);
        let mut st = init_state(&u1, &u2).unwrap();
        counted_run(&mut st, &op, k, 1e-10);
        let (res, allowed) = decomposition_check(&st, &op, 1e-10);
        prop_assert!(res <= allowed, "residual {:e} > {:e}", res, allowed);
        let q = nonzero_cols(&st.q_cols()[..=st.k()]);
        prop_assert!(orthonormality_error(&q) <= 1e-10);
        for i in st.deflation_steps() {
            prop_assert!(i > 0);
            prop_assert_eq!(st.t_col(i - 1)[i], c(1.0));
            prop_assert!(norm(&st.q_cols()[i]) == 0.0);
        }
    }

    #[test]
    fn stacked_basis_spans_the_krylov_space(seed in any::<u64>(), n in 4usize..60, k in 2usize..13) {
        let mut r = rng(seed);
        let k = k.min(n - 1);
        let prob = random_problem(&mut r, n, true);
        let op = build_operator(&prob, Mode::Direct).unwrap();
        let u1 = random_vec(&mut r, n, true);
        let u2 = random_vec(&mut r, n, true);
        let mut st = init_state(&u1, &u2).unwrap();
        let summary = counted_run(&mut st, &op, k, 1e-10);
        prop_assume!(summary.deflations == 0 && !summary.breakdown);
        let start: Vec<c64> = stacked(&st, 1).remove(0);
        let krylov = arnoldi_on_h(&build_h(&op).unwrap(), &start, k);
        prop_assert!(max_principal_angle(&krylov, &stacked(&st, k)) <= 1e-8);
    }

    #[test]
    fn breakdown_matches_arnoldi_breakdown(seed in any::<u64>(), n in 4usize..12, exact in any::<bool>()) {
        let mut r = rng(seed);
        let (prob, u1, u2, d) = if exact {
            let (prob, pairs) = unitary_diagonal_problem(&mut r, n);
            let d = r.random_range(1..=n / 2);
            let (u1, u2) = combine_pairs(&mut r, &pairs[..d]);
            (prob, u1, u2, d)
        } else {
            let prob = random_problem(&mut r, n, seed % 2 == 0);
            let d = r.random_range(1..=n / 2);
            let (u1, u2) = invariant_start(&mut r, &prob, d);
            (prob, u1, u2, d)
        };
        let op = build_operator(&prob, Mode::Direct).unwrap();
        let mut st = init_state(&u1, &u2).unwrap();
        let summary = counted_run(&mut st, &op, n, 1e-13);
        if exact {
            // eigenvectors exact to rounding: the run must stop at d
            prop_assert!(summary.breakdown && st.k() == d, "k = {} for d = {}", st.k(), d);
        }
        prop_assume!(summary.breakdown);
        let k = st.k();
        prop_assert!(arnoldi_remainder(&op, &st, k) <= 1e-10);
    }

    #[test]
    fn first_premature_stop_is_deflation(seed in any::<u64>(), n in 6usize..20, same in any::<bool>()) {
        let mut r = rng(seed);
        let prob = low_rank_problem(&mut r, n);
        let op = build_operator(&prob, Mode::Direct).unwrap();
        let u1 = random_vec(&mut r, n, false);
        let u2 = if same { u1.clone() } else { random_vec(&mut r, n, false) };
        let mut st = init_state(&u1, &u2).unwrap();
        let target = 12.min(2 * n - 1);
        while st.k() < target {
            let out = msoar_step(&mut st, &op, 1e-10).unwrap();
            if !matches!(out, StepOutcome::Regular { .. }) {
                prop_assert!(matches!(out, StepOutcome::Deflation { .. }), "first stop was {:?}", out);
                break;
            }
        }
    }
}
