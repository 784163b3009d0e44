//! Run records as JSON or as a CSV convergence history.

use serde::Serialize;

use crate::c64;
use crate::driver::{CycleRecord, Outcome, SolverConfig, SolverReport, Variant};
use crate::error::{Result, SoarError};
use crate::operator::Mode;

/// Complex number as `{"re": .., "im": ..}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

impl From<c64> for ComplexValue {
    fn from(z: c64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub problem: String,
    pub n: usize,
    pub sigma: Option<ComplexValue>,
    pub nev: usize,
    pub k: usize,
    pub p: usize,
    pub variant: Variant,
    pub ctol: f64,
    pub dtol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl ConfigEcho {
    pub fn new(problem: impl Into<String>, n: usize, config: &SolverConfig) -> Self {
        Self {
            problem: problem.into(),
            n,
            sigma: match config.mode {
                Mode::Direct => None,
                Mode::ShiftInvert { sigma } => Some(sigma.into()),
            },
            nev: config.nev,
            k: config.k,
            p: config.p,
            variant: config.variant,
            ctol: config.ctol,
            dtol: config.dtol,
            max_restarts: config.max_restarts,
            seed: config.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenEntry {
    pub lambda: ComplexValue,
    pub rel_residual: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<ComplexValue>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundEntry {
    pub lambda: ComplexValue,
    pub rel_residual: f64,
    pub bound: f64,
    pub assumption_holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub config: ConfigEcho,
    pub outcome: Outcome,
    pub restarts_used: usize,
    pub history: Vec<CycleRecord>,
    pub eigenpairs: Vec<EigenEntry>,
    pub bounds: Vec<BoundEntry>,
}

impl RunRecord {
    pub fn new(config: ConfigEcho, report: &SolverReport, with_vectors: bool) -> Self {
        let pairs = &report.wanted;
        let ctol = config.ctol;
        Self {
            eigenpairs: pairs
                .iter()
                .map(|p| EigenEntry {
                    lambda: p.lambda.into(),
                    rel_residual: p.rel_residual,
                    converged: p.rel_residual <= ctol,
                    vector: with_vectors.then(|| p.x.iter().map(|&z| z.into()).collect()),
                })
                .collect(),
            bounds: report
                .bounds
                .iter()
                .map(|b| BoundEntry {
                    lambda: b.lambda.into(),
                    rel_residual: b.rel_residual,
                    bound: b.bound,
                    assumption_holds: b.assumption_holds,
                })
                .collect(),
            config,
            outcome: report.outcome,
            restarts_used: report.restarts_used,
            history: report.history.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| SoarError::Io {
            file: "<json>".into(),
            message: e.to_string(),
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        history_csv(&self.history)
    }
}

/// `restart,max_rel_residual,deflations`, one row per cycle.
pub fn history_csv(history: &[CycleRecord]) -> Result<String> {
    let io_err = |e: String| SoarError::Io { file: "<csv>".into(), message: e };
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in history {
        w.serialize(row).map_err(|e| io_err(e.to_string()))?;
    }
    if history.is_empty() {
        w.write_record(["restart", "max_rel_residual", "deflations"])
            .map_err(|e| io_err(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| io_err(e.to_string()))
}
