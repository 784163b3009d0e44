mod common;

use common::{combine_pairs, multiset_distance, prop_config, random_problem, random_vec, rng, unitary_diagonal_problem};
use proptest::prelude::*;
use soarqep::c64;
use soarqep::driver::{
    check_convergence, solve, solve_observed, solve_with_start, Outcome, SolverConfig, Variant,
};
use soarqep::extraction::{RitzPair, RitzSet};
use soarqep::operator::{build_operator, Mode};
use soarqep::oracles::dense_qep_eigenvalues;

fn ritz_with(residuals: &[f64]) -> RitzSet {
    let pairs = residuals
        .iter()
        .enumerate()
        .map(|(i, &r)| RitzPair {
            theta: c64::new(i as f64 + 1.0, 0.0),
            lambda: c64::new(i as f64 + 1.0, 0.0),
            g: vec![c64::new(1.0, 0.0)],
            y: vec![c64::new(1.0, 0.0)],
            rel_residual: r,
            infinite: false,
        })
        .collect();
    RitzSet {
        pairs,
        selection: (0..residuals.len()).collect(),
        refined: None,
    }
}

#[test]
fn full_space_run_breaks_down_with_every_eigenpair() {
    let mut r = rng(1);
    let prob = random_problem(&mut r, 3, false);
    let mut cfg = SolverConfig::new(Mode::Direct, 2, 6, 1, Variant::Imsoar);
    cfg.seed = 11;
    let report = solve(&prob, &cfg).unwrap();
    assert_eq!(report.outcome, Outcome::Breakdown);
    assert_eq!(report.restarts_used, 0);
    assert_eq!(report.wanted.len(), 6);
    let got: Vec<c64> = report.wanted.iter().map(|p| p.lambda).collect();
    let want = dense_qep_eigenvalues(&prob).unwrap();
    assert!(multiset_distance(&want, &got) <= 1e-10, "{:e}", multiset_distance(&want, &got));
    assert!(report.wanted.iter().all(|p| p.rel_residual <= 1e-10));
    assert_eq!(report.converged.len(), 6);
}

#[test]
fn minimal_split_runs() {
    let mut r = rng(2);
    let prob = random_problem(&mut r, 30, true);
    let mut cfg = SolverConfig::new(Mode::Direct, 2, 8, 1, Variant::Irsoar);
    cfg.max_restarts = 5;
    assert_eq!(cfg.retained() + cfg.p, cfg.k);
    let report = solve(&prob, &cfg).unwrap();
    assert_eq!(report.history.len(), report.restarts_used + 1);
    assert!(report.restarts_used <= 5);
    assert_eq!(report.wanted.len(), 2);
}

#[test]
fn convergence_test_examples() {
    assert_eq!(check_convergence(&ritz_with(&[0.0, 0.0, 0.0]), 3, 1e-10, false), (0.0, true));
    let (worst, done) = check_convergence(&ritz_with(&[1e-12, 2e-10, 0.0]), 3, 1e-10, false);
    assert!(!done);
    assert_eq!(worst, 2e-10);
    // the unwanted tail is ignored
    assert_eq!(check_convergence(&ritz_with(&[0.0, 1.0]), 1, 1e-10, false), (0.0, true));
    // too few wanted values
    let (worst, done) = check_convergence(&ritz_with(&[0.0]), 2, 1e-10, false);
    assert!(!done && worst.is_infinite());
}

#[test]
fn refined_cycle_is_no_worse_than_ritz_cycle() {
    let mut r = rng(3);
    let prob = random_problem(&mut r, 60, true);
    let op = build_operator(&prob, Mode::ShiftInvert { sigma: c64::new(0.2, 0.1) }).unwrap();
    let u = random_vec(&mut r, 60, true);
    let mut cfg = SolverConfig::new(op.mode(), 4, 16, 8, Variant::Irsoar);
    cfg.max_restarts = 1;
    let mut pair = None;
    solve_observed(&op, &cfg, &u, &u, &mut |view| {
        if view.restart > 0 {
            return;
        }
        pair = Some((check_convergence(view.ritz, 4, 1.0, true).0, check_convergence(view.ritz, 4, 1.0, false).0));
    })
    .unwrap();
    let (refined, ritz) = pair.unwrap();
    assert!(refined <= ritz * (1.0 + 1e-10), "{refined:e} > {ritz:e}");
}

#[test]
fn histories_are_deterministic() {
    let mut r = rng(4);
    let prob = random_problem(&mut r, 40, false);
    let mut cfg = SolverConfig::new(Mode::ShiftInvert { sigma: c64::new(0.5, 0.5) }, 3, 12, 6, Variant::Irsoar);
    cfg.max_restarts = 8;
    cfg.seed = 99;
    let a = solve(&prob, &cfg).unwrap();
    let b = solve(&prob, &cfg).unwrap();
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.max_rel_residual.to_bits(), y.max_rel_residual.to_bits());
        assert_eq!(x.deflations, y.deflations);
    }
}

#[test]
fn invalid_configurations_fail_eagerly() {
    let mut r = rng(5);
    let prob = random_problem(&mut r, 10, false);
    for (nev, k, p) in [(1, 10, 10), (1, 10, 0), (5, 10, 8), (1, 30, 5), (0, 10, 5)] {
        let cfg = SolverConfig::new(Mode::Direct, nev, k, p, Variant::Imsoar);
        assert!(solve(&prob, &cfg).is_err(), "nev {nev}, k {k}, p {p}");
    }
}

proptest! {
    #![proptest_config(prop_config(24))]

    #[test]
    fn refined_residuals_dominate_in_every_cycle(seed in any::<u64>(), n in 10usize..40, shifted in any::<bool>()) {
        let mut r = rng(seed);
        let prob = random_problem(&mut r, n, seed % 2 == 0);
        let mode = if shifted { Mode::ShiftInvert { sigma: c64::new(-0.3, 0.4) } } else { Mode::Direct };
        let op = build_operator(&prob, mode).unwrap();
        let u = random_vec(&mut r, n, true);
        let mut cfg = SolverConfig::new(mode, 2, 8.min(2 * n), 4, Variant::Irsoar);
        cfg.max_restarts = 3;
        let mut worst: f64 = 0.0;
        solve_observed(&op, &cfg, &u, &u, &mut |view| {
            let refined = view.ritz.residuals(2, true);
            let ritz = view.ritz.residuals(2, false);
            for (a, b) in refined.iter().zip(&ritz) {
                worst = worst.max(a - b * (1.0 + 1e-10) - 1e-15);
            }
        })
        .unwrap();
        prop_assert!(worst <= 0.0, "refined exceeded Ritz by {:e}", worst);
    }

    #[test]
    fn breakdown_pairs_respect_the_bound(seed in any::<u64>(), n in 4usize..10, d in 2usize..4) {
        let mut r = rng(seed);
        let (prob, pairs) = unitary_diagonal_problem(&mut r, n);
        let (u1, u2) = combine_pairs(&mut r, &pairs[..d]);
        let mut cfg = SolverConfig::new(Mode::Direct, 1, d + 2, 1, Variant::Imsoar);
        cfg.dtol = 1e-10;
        cfg.ctol = 1e-10;
        let report = solve_with_start(&prob, &cfg, &u1, &u2).unwrap();
        prop_assert_eq!(report.outcome, Outcome::Breakdown);
        prop_assert_eq!(report.bounds.len(), report.wanted.len());
        for b in &report.bounds {
            if b.assumption_holds {
                prop_assert!(b.rel_residual <= b.bound, "{:e} > {:e}", b.rel_residual, b.bound);
            } else {
                prop_assert!(b.rel_residual <= cfg.ctol);
            }
        }
        let got: Vec<c64> = report.wanted.iter().map(|p| p.lambda).collect();
        let want: Vec<c64> = pairs[..d].iter().map(|p| p.0).collect();
        prop_assert!(multiset_distance(&want, &got) <= 1e-8);
    }

    #[test]
    fn solves_are_reproducible(seed in any::<u64>(), n in 8usize..25) {
        let mut r = rng(seed);
        let prob = random_problem(&mut r, n, true);
        let mut cfg = SolverConfig::new(Mode::Direct, 2, 8, 5, Variant::Imsoar);
        cfg.max_restarts = 4;
        cfg.seed = seed;
        let a = solve(&prob, &cfg).unwrap();
        let b = solve(&prob, &cfg).unwrap();
        let bits = |h: &[soarqep::driver::CycleRecord]| h.iter().map(|c| (c.max_rel_residual.to_bits(), c.deflations)).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.history), bits(&b.history));
    }
}
