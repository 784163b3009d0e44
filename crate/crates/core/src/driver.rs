//! Restarted solver loop: expand, project, extract, test, restart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::c64;
use crate::error::{Result, SoarError};
use crate::extraction::{
    breakdown_bound, extract_refined, extract_ritz, invariant_pairs, petrov_residual, project,
    ritz_linear_residual, ProjectedQep, RitzSet,
};
use crate::msoar::{init_state, run_msoar, SoarState};
use crate::operator::{build_operator, Mode, OperatorPair, QepProblem};
use crate::restart::{contract, select_shifts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Ritz vectors drive convergence and shifts.
    Imsoar,
    /// Refined Ritz vectors drive convergence and shifts.
    Irsoar,
}

/// Second starting vector.
#[derive(Debug, Clone, PartialEq)]
pub enum SecondStart {
    SameAsFirst,
    Zero,
    Given(Vec<c64>),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub mode: Mode,
    /// Number of wanted eigenpairs.
    pub nev: usize,
    /// Subspace dimension reached before each restart.
    pub k: usize,
    /// Shifts applied per restart; `k - p` columns are retained.
    pub p: usize,
    pub variant: Variant,
    /// Convergence tolerance on relative residuals.
    pub ctol: f64,
    /// Deflation tolerance on `t_{j+1,j} / (||M||_1+||C||_1+||K||_1)`.
    pub dtol: f64,
    pub max_restarts: usize,
    pub seed: u64,
    pub u2: SecondStart,
}

impl SolverConfig {
    pub fn new(mode: Mode, nev: usize, k: usize, p: usize, variant: Variant) -> Self {
        Self {
            mode,
            nev,
            k,
            p,
            variant,
            ctol: 1e-10,
            dtol: 1e-10,
            max_restarts: 100,
            seed: 0,
            u2: SecondStart::SameAsFirst,
        }
    }

    /// Retained dimension `m = k - p`.
    pub fn retained(&self) -> usize {
        self.k.saturating_sub(self.p)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(SoarError::InvalidConfig(msg));
        if self.k < 2 {
            return bad(format!("subspace dimension k = {} must be at least 2", self.k));
        }
        if self.p == 0 || self.p >= self.k {
            return bad(format!("shift count p = {} must satisfy 0 < p < k = {}", self.p, self.k));
        }
        if self.nev == 0 || self.nev > self.retained() {
            return bad(format!(
                "wanted count {} must satisfy 0 < nev <= k - p = {}",
                self.nev,
                self.retained()
            ));
        }
        if self.k > 2 * n {
            return bad(format!("k = {} exceeds 2n = {}", self.k, 2 * n));
        }
        if self.max_restarts == 0 {
            return bad("max_restarts must be at least 1".into());
        }
        if !(self.ctol > 0.0) || !(self.dtol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ConvergedPair {
    pub lambda: c64,
    pub x: Vec<c64>,
    pub rel_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleRecord {
    pub restart: usize,
    pub max_rel_residual: f64,
    pub deflations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    Breakdown,
    MaxRestarts,
}

/// Bound reported for one pair at breakdown: `c_k |e_k* s| tol`.
#[derive(Debug, Clone, Copy)]
pub struct BoundDiagnostic {
    pub lambda: c64,
    pub rel_residual: f64,
    pub bound: f64,
    /// The Ritz pair's linearization residual is no larger than that of its
    /// Petrov pair; the bound is guaranteed only then.
    pub assumption_holds: bool,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub outcome: Outcome,
    /// Wanted pairs whose residual passed `ctol`.
    pub converged: Vec<ConvergedPair>,
    /// Current approximations of all wanted pairs, best first; at breakdown
    /// the pairs carried by the invariant subspace.
    pub wanted: Vec<ConvergedPair>,
    pub restarts_used: usize,
    pub history: Vec<CycleRecord>,
    pub bounds: Vec<BoundDiagnostic>,
}

impl SolverReport {
    pub fn fully_converged(&self) -> bool {
        self.outcome != Outcome::MaxRestarts
    }
}

/// Seeded starting vector with entries uniform in `[0, 1)`.
pub fn starting_vector(n: usize, seed: u64) -> Vec<c64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| c64::new(rng.random::<f64>(), 0.0)).collect()
}

pub fn solve(problem: &QepProblem, config: &SolverConfig) -> Result<SolverReport> {
    let u1 = starting_vector(problem.dim(), config.seed);
    let u2 = match &config.u2 {
        SecondStart::SameAsFirst => u1.clone(),
        SecondStart::Zero => vec![c64::new(0.0, 0.0); u1.len()],
        SecondStart::Given(v) => v.clone(),
    };
    solve_with_start(problem, config, &u1, &u2)
}

pub fn solve_with_start(
    problem: &QepProblem,
    config: &SolverConfig,
    u1: &[c64],
    u2: &[c64],
) -> Result<SolverReport> {
    config.validate(problem.dim())?;
    let op = build_operator(problem, config.mode)?;
    solve_with_operator(&op, config, u1, u2)
}

/// Largest wanted residual and whether it is within `ctol`.
pub fn check_convergence(ritz: &RitzSet, nev: usize, ctol: f64, refined: bool) -> (f64, bool) {
    let res = ritz.residuals(nev, refined);
    if res.len() < nev {
        return (f64::INFINITY, false);
    }
    let worst = res.iter().copied().fold(0.0, f64::max);
    (worst, worst <= ctol)
}

/// What an observer sees once per cycle, after extraction.
pub struct CycleView<'a> {
    pub restart: usize,
    pub state: &'a SoarState,
    pub projection: &'a ProjectedQep,
    pub ritz: &'a RitzSet,
}

pub fn solve_with_operator(
    op: &OperatorPair,
    config: &SolverConfig,
    u1: &[c64],
    u2: &[c64],
) -> Result<SolverReport> {
    solve_observed(op, config, u1, u2, &mut |_| {})
}

/// The restart loop, calling `observer` after every extraction.
pub fn solve_observed(
    op: &OperatorPair,
    config: &SolverConfig,
    u1: &[c64],
    u2: &[c64],
    observer: &mut dyn FnMut(&CycleView<'_>),
) -> Result<SolverReport> {
    config.validate(op.dim())?;
    let refined = config.variant == Variant::Irsoar;
    let m = config.retained();
    let norm_sum = op.problem().norm_sum();
    let mut state = init_state(u1, u2)?;
    run_msoar(&mut state, op, config.k, config.dtol)?;
    let mut history = Vec::new();
    let mut restart = 0;
    loop {
        let proj = project(&state, op)?;
        let mut ritz = extract_ritz(&proj, op, m)?;
        if refined {
            extract_refined(&proj, op, &mut ritz)?;
        }
        observer(&CycleView {
            restart,
            state: &state,
            projection: &proj,
            ritz: &ritz,
        });
        let (worst, done) = check_convergence(&ritz, config.nev, config.ctol, refined);
        history.push(CycleRecord {
            restart,
            max_rel_residual: worst,
            deflations: state.deflation_count(),
        });
        let wanted = wanted_pairs(&ritz, config.nev, refined);
        if state.breakdown().is_some() {
            // the subspace is invariant: report the pairs it carries
            let all = extract_ritz(&proj, op, usize::MAX)?;
            let (delivered, bounds) = breakdown_pairs(&state, op, &proj, &all, config.dtol)?;
            let converged = delivered.iter().filter(|p| p.rel_residual <= config.ctol).cloned().collect();
            return Ok(SolverReport {
                outcome: Outcome::Breakdown,
                converged,
                wanted: delivered,
                restarts_used: restart,
                history,
                bounds,
            });
        }
        if done {
            return Ok(SolverReport {
                outcome: Outcome::Converged,
                converged: wanted.clone(),
                wanted,
                restarts_used: restart,
                history,
                bounds: Vec::new(),
            });
        }
        if restart == config.max_restarts {
            let converged = wanted.iter().filter(|p| p.rel_residual <= config.ctol).cloned().collect();
            return Ok(SolverReport {
                outcome: Outcome::MaxRestarts,
                converged,
                wanted,
                restarts_used: restart,
                history,
                bounds: Vec::new(),
            });
        }
        let thetas: Vec<c64> = ritz.selected().map(|p| p.theta).collect();
        let vectors: Vec<Vec<c64>> = match (&ritz.refined, refined) {
            (Some(r), true) => r.iter().map(|x| x.z.clone()).collect(),
            _ => ritz.selected().map(|p| p.g.clone()).collect(),
        };
        let real_data = op.problem().is_real() && op.mode() == Mode::Direct;
        let shifts = select_shifts(&proj, &vectors, &thetas, config.p, config.mode, real_data)?;
        let (next, _) = contract(&state, &shifts.shifts, m, config.dtol, norm_sum)?;
        state = next;
        if state.breakdown().is_none() {
            run_msoar(&mut state, op, config.k, config.dtol)?;
        }
        restart += 1;
    }
}

fn wanted_pairs(ritz: &RitzSet, count: usize, refined: bool) -> Vec<ConvergedPair> {
    let res = ritz.residuals(count, refined);
    ritz.selection
        .iter()
        .take(count)
        .enumerate()
        .map(|(s, &i)| {
            let pair = &ritz.pairs[i];
            let x = match (&ritz.refined, refined) {
                (Some(r), true) => r[s].u.clone(),
                _ => pair.y.clone(),
            };
            ConvergedPair {
                lambda: pair.lambda,
                x,
                rel_residual: res[s],
            }
        })
        .collect()
}

/// Ritz pairs matched to the eigenvalues of `T_k` at breakdown, with the
/// bound `c_k |e_k* s| tol` for each.
pub fn breakdown_pairs(
    state: &SoarState,
    op: &OperatorPair,
    proj: &ProjectedQep,
    all: &RitzSet,
    tol: f64,
) -> Result<(Vec<ConvergedPair>, Vec<BoundDiagnostic>)> {
    let norm_m = op.working_mass_norm1();
    let mut pairs = Vec::new();
    let mut bounds = Vec::new();
    for (i, nu, s) in invariant_pairs(state, all)? {
        let pair = &all.pairs[i];
        pairs.push(ConvergedPair {
            lambda: pair.lambda,
            x: pair.y.clone(),
            rel_residual: pair.rel_residual,
        });
        bounds.push(BoundDiagnostic {
            lambda: pair.lambda,
            rel_residual: pair.rel_residual,
            bound: breakdown_bound(state, pair.theta, &s, norm_m, tol),
            assumption_holds: ritz_linear_residual(pair.theta, proj.residual_norm(pair.theta, &pair.g))
                <= petrov_residual(state, op, nu, &s),
        });
    }
    Ok((pairs, bounds))
}
