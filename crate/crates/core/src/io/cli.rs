//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::c64;
use crate::driver::{solve, Outcome, SolverConfig, SolverReport, Variant};
use crate::error::{Result, SoarError};
use crate::io::generators::{mass_spring, string_damping};
use crate::io::matrix_market::{load_problem, write_matrix_market};
use crate::io::report::{ConfigEcho, RunRecord};
use crate::operator::{Mode, QepProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemKind {
    MassSpring,
    StringDamping,
    MatrixMarket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Imsoar,
    Irsoar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Implicitly restarted second-order Arnoldi solver for (l^2 M + l C + K) x = 0.
#[derive(Debug, Parser)]
#[command(name = "soarqep", version)]
pub struct Args {
    /// Problem source.
    #[arg(value_enum)]
    pub problem: ProblemKind,
    /// Order of a generated problem.
    #[arg(long)]
    pub n: Option<usize>,
    /// Mass-spring stiffness scale.
    #[arg(long, default_value_t = 5.0)]
    pub kappa: f64,
    /// Mass-spring damping scale.
    #[arg(long, default_value_t = 10.0)]
    pub tau: f64,
    /// String damping scale.
    #[arg(long, default_value_t = 0.6)]
    pub epsilon: f64,
    /// Matrix Market file for M.
    #[arg(long)]
    pub mass: Option<PathBuf>,
    /// Matrix Market file for C.
    #[arg(long)]
    pub damping: Option<PathBuf>,
    /// Matrix Market file for K.
    #[arg(long)]
    pub stiffness: Option<PathBuf>,
    /// Shift for shift-invert mode, e.g. -13+0.4i. Omit for the direct mode.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_complex)]
    pub sigma: Option<c64>,
    /// Number of wanted eigenpairs.
    #[arg(long)]
    pub num_eigs: usize,
    /// Subspace dimension k reached before each restart.
    #[arg(long)]
    pub dim: usize,
    /// Shifts p per restart; k - p directions are retained.
    #[arg(long)]
    pub shifts: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::Imsoar)]
    pub variant: VariantArg,
    /// Convergence tolerance on relative residuals.
    #[arg(long, default_value_t = 1e-10)]
    pub ctol: f64,
    /// Deflation tolerance, defaults to ctol.
    #[arg(long)]
    pub dtol: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub max_restarts: usize,
    /// Seed of the starting vector.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Include eigenvectors in JSON output.
    #[arg(long)]
    pub vectors: bool,
    /// Also write M, C and K as Matrix Market files into this directory.
    #[arg(long)]
    pub export_dir: Option<PathBuf>,
}

/// Parses `a`, `bi`, `a+bi` or `a-bi`.
pub fn parse_complex(text: &str) -> std::result::Result<c64, String> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || format!("cannot parse '{text}' as a complex number like -13+0.4i");
    let Some(body) = s.strip_suffix(['i', 'j']) else {
        return s.parse::<f64>().map(|re| c64::new(re, 0.0)).map_err(|_| bad());
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    let imag = |t: &str| -> std::result::Result<f64, String> {
        match t {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => t.parse::<f64>().map_err(|_| bad()),
        }
    };
    match split {
        Some(i) => {
            let re = body[..i].parse::<f64>().map_err(|_| bad())?;
            Ok(c64::new(re, imag(&body[i..])?))
        }
        None => Ok(c64::new(0.0, imag(body)?)),
    }
}

/// Runs the command line and returns the process exit code:
/// 0 when every wanted pair converged, 2 on a partial result, 1 on error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run_cli_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
            } else {
                let _ = write!(out, "{}", e.render());
            }
            return code;
        }
    };
    match execute(&args, out, err) {
        Ok(report) if report.outcome == Outcome::MaxRestarts => 2,
        Ok(_) => 0,
        Err(e) => {
            let prefix = if matches!(e, SoarError::InvalidConfig(_)) { "usage error" } else { "error" };
            let _ = writeln!(err, "{prefix}: {e}");
            1
        }
    }
}

fn build_problem(args: &Args) -> Result<(String, QepProblem)> {
    let need_n = || {
        args.n
            .ok_or_else(|| SoarError::InvalidConfig("generated problems need --n".into()))
    };
    match args.problem {
        ProblemKind::MassSpring => {
            let n = need_n()?;
            if n < 2 {
                return Err(SoarError::InvalidConfig("mass-spring needs --n >= 2".into()));
            }
            Ok((format!("mass-spring(n={n}, kappa={}, tau={})", args.kappa, args.tau), mass_spring(n, args.kappa, args.tau)?))
        }
        ProblemKind::StringDamping => {
            let n = need_n()?;
            Ok((format!("string-damping(n={n}, epsilon={})", args.epsilon), string_damping(n, args.epsilon)?))
        }
        ProblemKind::MatrixMarket => {
            let (Some(m), Some(c), Some(k)) = (&args.mass, &args.damping, &args.stiffness) else {
                return Err(SoarError::InvalidConfig(
                    "matrix-market needs --mass, --damping and --stiffness".into(),
                ));
            };
            Ok((format!("matrix-market({}, {}, {})", m.display(), c.display(), k.display()), load_problem(m, c, k)?))
        }
    }
}

fn execute(args: &Args, out: &mut dyn Write, err: &mut dyn Write) -> Result<SolverReport> {
    let (label, problem) = build_problem(args)?;
    if let Some(dir) = &args.export_dir {
        write_matrix_market(&dir.join("M.mtx"), problem.mass())?;
        write_matrix_market(&dir.join("C.mtx"), problem.damping())?;
        write_matrix_market(&dir.join("K.mtx"), problem.stiffness())?;
    }
    let mode = match args.sigma {
        Some(sigma) => Mode::ShiftInvert { sigma },
        None => Mode::Direct,
    };
    let variant = match args.variant {
        VariantArg::Imsoar => Variant::Imsoar,
        VariantArg::Irsoar => Variant::Irsoar,
    };
    let mut config = SolverConfig::new(mode, args.num_eigs, args.dim, args.shifts, variant);
    config.ctol = args.ctol;
    config.dtol = args.dtol.unwrap_or(args.ctol);
    config.max_restarts = args.max_restarts;
    config.seed = args.seed;
    config.validate(problem.dim())?;

    let report = solve(&problem, &config)?;
    let record = RunRecord::new(ConfigEcho::new(label, problem.dim(), &config), &report, args.vectors);
    let text = match args.format {
        Format::Csv => record.to_csv()?,
        Format::Json => record.to_json()? + "\n",
    };
    let io_err = |file: String, e: std::io::Error| SoarError::Io { file, message: e.to_string() };
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_err(path.display().to_string(), e))?,
        None => out.write_all(text.as_bytes()).map_err(|e| io_err("<stdout>".into(), e))?,
    }
    let final_residual = report.history.last().map_or(f64::NAN, |r| r.max_rel_residual);
    let _ = writeln!(
        err,
        "{:?}: {} converged of {} wanted, {} restarts, final max relative residual {:.3e}",
        report.outcome,
        report.converged.len(),
        config.nev,
        report.restarts_used,
        final_residual
    );
    Ok(report)
}
