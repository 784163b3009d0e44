//! Matrix Market coordinate format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::c64;
use crate::error::{Result, SoarError};
use crate::operator::QepProblem;
use crate::sparse::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Integer,
    Complex,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    Hermitian,
    Skew,
}

pub fn read_matrix_market(path: &Path) -> Result<CscMatrix> {
    let text = fs::read_to_string(path).map_err(|e| SoarError::Io {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_matrix_market(&text, &path.display().to_string())
}

/// Parses coordinate data; `name` labels errors.
pub fn parse_matrix_market(text: &str, name: &str) -> Result<CscMatrix> {
    let err = |line: usize, message: String| SoarError::Parse {
        file: name.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(err(hline, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'".into()));
    }
    if tokens[2] != "coordinate" {
        return Err(err(hline, format!("unsupported format '{}'", tokens[2])));
    }
    let field = match tokens[3].as_str() {
        "real" => Field::Real,
        "integer" => Field::Integer,
        "complex" => Field::Complex,
        "pattern" => Field::Pattern,
        other => return Err(err(hline, format!("unsupported field '{other}'"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "hermitian" => Symmetry::Hermitian,
        "skew-symmetric" => Symmetry::Skew,
        other => return Err(err(hline, format!("unsupported symmetry '{other}'"))),
    };

    let mut data = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (sline, size) = data.next().ok_or_else(|| err(hline + 1, "missing size line".into()))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(sline, format!("bad size line: {e}")))?;
    let [nrows, ncols, nnz] = dims[..] else {
        return Err(err(sline, "size line needs rows, columns and entry count".into()));
    };
    if symmetry != Symmetry::General && nrows != ncols {
        return Err(err(sline, "symmetric storage requires a square matrix".into()));
    }

    let per_entry = match field {
        Field::Pattern => 2,
        Field::Complex => 4,
        _ => 3,
    };
    let mut triplets = Vec::with_capacity(nnz * 2);
    let mut seen = 0;
    for (lno, line) in data {
        if seen == nnz {
            return Err(err(lno, format!("more than the declared {nnz} entries")));
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != per_entry {
            return Err(err(lno, format!("expected {per_entry} values, found {}", tok.len())));
        }
        let index = |t: &str, bound: usize| -> Result<usize> {
            let v: usize = t.parse().map_err(|_| err(lno, format!("bad index '{t}'")))?;
            if v == 0 || v > bound {
                return Err(err(lno, format!("index {v} outside 1..={bound}")));
            }
            Ok(v - 1)
        };
        let number = |t: &str| -> Result<f64> {
            let v: f64 = t.parse().map_err(|_| err(lno, format!("bad number '{t}'")))?;
            if !v.is_finite() {
                return Err(err(lno, format!("non-finite value '{t}'")));
            }
            Ok(v)
        };
        let i = index(tok[0], nrows)?;
        let j = index(tok[1], ncols)?;
        let v = match field {
            Field::Pattern => c64::new(1.0, 0.0),
            Field::Complex => c64::new(number(tok[2])?, number(tok[3])?),
            Field::Integer => {
                let n: i64 = tok[2].parse().map_err(|_| err(lno, format!("bad integer '{}'", tok[2])))?;
                c64::new(n as f64, 0.0)
            }
            Field::Real => c64::new(number(tok[2])?, 0.0),
        };
        triplets.push((i, j, v));
        if i != j {
            match symmetry {
                Symmetry::General => {}
                Symmetry::Symmetric => triplets.push((j, i, v)),
                Symmetry::Hermitian => triplets.push((j, i, v.conj())),
                Symmetry::Skew => triplets.push((j, i, -v)),
            }
        } else if symmetry == Symmetry::Skew && v != c64::new(0.0, 0.0) {
            return Err(err(lno, "nonzero diagonal in a skew-symmetric matrix".into()));
        }
        seen += 1;
    }
    if seen != nnz {
        return Err(err(text.lines().count(), format!("declared {nnz} entries, found {seen}")));
    }
    CscMatrix::from_triplets(nrows, ncols, &triplets)
}

/// Serializes as `coordinate general`, real when every entry is real.
/// Values use the shortest decimal form that reads back to the same `f64`.
pub fn format_matrix_market(a: &CscMatrix) -> String {
    let real = a.is_real();
    let trip = a.triplets();
    let mut out = String::new();
    let field = if real { "real" } else { "complex" };
    let _ = writeln!(out, "%%MatrixMarket matrix coordinate {field} general");
    let _ = writeln!(out, "{} {} {}", a.nrows(), a.ncols(), trip.len());
    for (i, j, v) in trip {
        if real {
            let _ = writeln!(out, "{} {} {:e}", i + 1, j + 1, v.re);
        } else {
            let _ = writeln!(out, "{} {} {:e} {:e}", i + 1, j + 1, v.re, v.im);
        }
    }
    out
}

pub fn write_matrix_market(path: &Path, a: &CscMatrix) -> Result<()> {
    fs::write(path, format_matrix_market(a)).map_err(|e| SoarError::Io {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads `M`, `C`, `K` and checks that all three are square of one order.
pub fn load_problem(mass: &Path, damping: &Path, stiffness: &Path) -> Result<QepProblem> {
    let m = read_matrix_market(mass)?;
    let n = m.nrows();
    check_square(mass, &m, n)?;
    let c = read_matrix_market(damping)?;
    check_square(damping, &c, n)?;
    let k = read_matrix_market(stiffness)?;
    check_square(stiffness, &k, n)?;
    QepProblem::new(m, c, k)
}

fn check_square(path: &Path, a: &CscMatrix, n: usize) -> Result<()> {
    if a.nrows() != n || a.ncols() != n {
        return Err(SoarError::DimensionMismatch {
            what: path.display().to_string(),
            expected: n,
            found: if a.nrows() != n { a.nrows() } else { a.ncols() },
        });
    }
    Ok(())
}
