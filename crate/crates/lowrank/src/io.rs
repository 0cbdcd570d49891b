//! On-disk matrix formats: MatrixMarket and CSV for dense data, plus a flat
//! serializable form for factored matrices so run artifacts can embed them.
//!
//! Floating-point values are written with Rust's shortest round-trip
//! formatting, so write-then-read reproduces matrices bit for bit.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FactorError, FormatError};
use crate::factored::FactoredMatrix;
use crate::{to_f64, Scalar};

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Writes `z` in MatrixMarket dense array format (`array real general`).
pub fn write_matrix_market<T: Scalar>(
    path: impl AsRef<Path>,
    z: &DMatrix<T>,
) -> Result<(), FormatError> {
    let path = path.as_ref();
    let (m, n) = z.shape();
    let mut out = String::with_capacity(32 + 24 * m * n);
    out.push_str("%%MatrixMarket matrix array real general\n");
    out.push_str(&format!("{m} {n}\n"));
    for j in 0..n {
        for i in 0..m {
            out.push_str(&format!("{}\n", to_f64(z[(i, j)])));
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Writes a boolean mask in MatrixMarket `coordinate pattern general`
/// format, one 1-based `i j` pair per set entry.
pub fn write_matrix_market_pattern(
    path: impl AsRef<Path>,
    mask: &DMatrix<bool>,
) -> Result<(), FormatError> {
    let path = path.as_ref();
    let (m, n) = mask.shape();
    let nnz = mask.iter().filter(|&&b| b).count();
    let mut out = String::with_capacity(48 + 12 * nnz);
    out.push_str("%%MatrixMarket matrix coordinate pattern general\n");
    out.push_str(&format!("{m} {n} {nnz}\n"));
    for j in 0..n {
        for i in 0..m {
            if mask[(i, j)] {
                out.push_str(&format!("{} {}\n", i + 1, j + 1));
            }
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a MatrixMarket file into a dense matrix.
///
/// Handles `array` and `coordinate` formats with `real` or `integer`
/// fields, plus `coordinate pattern` (set entries become 1.0). Only
/// `general` symmetry is accepted; duplicate coordinate entries are summed,
/// following the assembled-matrix convention.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<DMatrix<f64>, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_matrix_market(&text, path)
}

fn parse_matrix_market(text: &str, path: &Path) -> Result<DMatrix<f64>, FormatError> {
    let banner = text
        .lines()
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let b: Vec<&str> = banner.split_whitespace().collect();
    if b.len() < 5
        || !b[0].eq_ignore_ascii_case("%%MatrixMarket")
        || !b[1].eq_ignore_ascii_case("matrix")
    {
        return Err(parse_err(path, 1, format!("not a MatrixMarket banner: {banner:?}")));
    }
    let format = b[2].to_ascii_lowercase();
    let field = b[3].to_ascii_lowercase();
    let symmetry = b[4].to_ascii_lowercase();
    if symmetry != "general" {
        return Err(parse_err(
            path,
            1,
            format!("unsupported symmetry {symmetry:?}; only \"general\" is handled"),
        ));
    }
    if !matches!(field.as_str(), "real" | "integer" | "pattern") {
        return Err(parse_err(path, 1, format!("unsupported field {field:?}")));
    }

    // Token stream with line numbers; layout within lines is free-form.
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim_start().starts_with('%') {
            continue;
        }
        for tok in line.split_whitespace() {
            tokens.push((idx + 1, tok));
        }
    }
    let mut cur = Cursor {
        tokens,
        pos: 0,
        path,
        eof_line: text.lines().count(),
    };

    let m = cur.take_usize("row count")?;
    let n = cur.take_usize("column count")?;

    let z = match format.as_str() {
        "array" => {
            if field == "pattern" {
                return Err(parse_err(path, 1, "array format cannot carry a pattern field"));
            }
            let mut z = DMatrix::zeros(m, n);
            for j in 0..n {
                for i in 0..m {
                    z[(i, j)] = cur.take_f64("matrix entry")?;
                }
            }
            z
        }
        "coordinate" => {
            let nnz = cur.take_usize("entry count")?;
            let mut z = DMatrix::zeros(m, n);
            for _ in 0..nnz {
                let i = cur.take_usize("row index")?;
                let j = cur.take_usize("column index")?;
                if i == 0 || i > m || j == 0 || j > n {
                    return Err(parse_err(
                        path,
                        cur.last_line(),
                        format!("entry ({i}, {j}) outside a {m}x{n} matrix"),
                    ));
                }
                let value = if field == "pattern" {
                    1.0
                } else {
                    cur.take_f64("entry value")?
                };
                z[(i - 1, j - 1)] += value;
            }
            z
        }
        other => {
            return Err(parse_err(path, 1, format!("unsupported format {other:?}")));
        }
    };

    if let Some(&(line, tok)) = cur.tokens.get(cur.pos) {
        return Err(parse_err(path, line, format!("trailing data starting at {tok:?}")));
    }
    Ok(z)
}

struct Cursor<'a> {
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
    path: &'a Path,
    eof_line: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, what: &str) -> Result<(usize, &'a str), FormatError> {
        let t = self.tokens.get(self.pos).copied().ok_or_else(|| {
            parse_err(self.path, self.eof_line, format!("missing {what}"))
        })?;
        self.pos += 1;
        Ok(t)
    }

    fn take_usize(&mut self, what: &str) -> Result<usize, FormatError> {
        let (line, tok) = self.take(what)?;
        tok.parse::<usize>()
            .map_err(|_| parse_err(self.path, line, format!("expected {what}, got {tok:?}")))
    }

    fn take_f64(&mut self, what: &str) -> Result<f64, FormatError> {
        let (line, tok) = self.take(what)?;
        tok.parse::<f64>()
            .map_err(|_| parse_err(self.path, line, format!("expected a number, got {tok:?}")))
    }

    fn last_line(&self) -> usize {
        if self.pos == 0 {
            self.eof_line
        } else {
            self.tokens[self.pos - 1].0
        }
    }
}

/// Writes `z` as comma-separated rows, one matrix row per line.
pub fn write_csv<T: Scalar>(path: impl AsRef<Path>, z: &DMatrix<T>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let (m, n) = z.shape();
    let mut out = String::with_capacity(24 * m * n);
    for i in 0..m {
        for j in 0..n {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", to_f64(z[(i, j)])));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a headerless numeric CSV file. Blank lines are skipped; every data
/// row must have the same number of fields. An empty file reads as 0x0.
pub fn read_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let field = field.trim();
            row.push(field.parse::<f64>().map_err(|_| {
                parse_err(path, idx + 1, format!("expected a number, got {field:?}"))
            })?);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(
                    path,
                    idx + 1,
                    format!("row has {} fields, previous rows have {w}", row.len()),
                ));
            }
            Some(_) => {}
        }
        rows.push(row);
    }
    let m = rows.len();
    let n = width.unwrap_or(0);
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

/// Flat, serializable form of a factored matrix.
///
/// Factor data is stored column-major. Deserialized parts only become a
/// [`FactoredMatrix`] through the validating constructor, so corrupt or
/// hand-edited files are rejected rather than smuggled past the invariants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactoredParts {
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    /// Column-major, `m * rank` entries.
    pub u: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Column-major, `n * rank` entries.
    pub v: Vec<f64>,
}

impl<T: Scalar> From<&FactoredMatrix<T>> for FactoredParts {
    fn from(x: &FactoredMatrix<T>) -> Self {
        Self {
            m: x.nrows(),
            n: x.ncols(),
            rank: x.rank(),
            u: x.u().iter().map(|&e| to_f64(e)).collect(),
            sigma: x.sigma().iter().map(|&e| to_f64(e)).collect(),
            v: x.v().iter().map(|&e| to_f64(e)).collect(),
        }
    }
}

impl TryFrom<FactoredParts> for FactoredMatrix<f64> {
    type Error = FactorError;

    fn try_from(p: FactoredParts) -> Result<Self, FactorError> {
        if p.u.len() != p.m * p.rank || p.v.len() != p.n * p.rank || p.sigma.len() != p.rank {
            return Err(FactorError::DimensionMismatch {
                u_rows: p.m,
                u_cols: if p.m == 0 { 0 } else { p.u.len() / p.m },
                sigma_len: p.sigma.len(),
                v_rows: p.n,
                v_cols: if p.n == 0 { 0 } else { p.v.len() / p.n },
            });
        }
        let u = DMatrix::from_vec(p.m, p.rank, p.u);
        let sigma = DVector::from_vec(p.sigma);
        let v = DMatrix::from_vec(p.n, p.rank, p.v);
        FactoredMatrix::new(u, sigma, v)
    }
}

/// Writes a factored matrix as pretty-printed JSON.
pub fn write_factored_json<T: Scalar>(
    path: impl AsRef<Path>,
    x: &FactoredMatrix<T>,
) -> Result<(), FormatError> {
    let path = path.as_ref();
    let parts = FactoredParts::from(x);
    let text = serde_json::to_string_pretty(&parts)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Reads a factored matrix written by [`write_factored_json`], revalidating
/// every invariant on the way in.
pub fn read_factored_json(path: impl AsRef<Path>) -> Result<FactoredMatrix<f64>, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let parts: FactoredParts = serde_json::from_str(&text)
        .map_err(|e| parse_err(path, e.line(), e.to_string()))?;
    Ok(FactoredMatrix::try_from(parts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::generators;
    use rand::SeedableRng;
    use std::path::PathBuf;

    fn temp_path(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("lowrank-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn matrix_market_array_round_trips_bitwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let z = generators::gaussian::<f64>(5, 3, &mut rng);
        let path = temp_path("array.mtx");
        write_matrix_market(&path, &z).unwrap();
        let back = read_matrix_market(&path).unwrap();
        assert_eq!(z, back);
    }

    #[test]
    fn matrix_market_coordinate_sums_duplicates() {
        let path = temp_path("coord.mtx");
        std::fs::write(
            &path,
            "%%MatrixMarket matrix coordinate real general\n\
             % comment\n\
             2 3 3\n\
             1 1 0.5\n\
             1 1 0.25\n\
             2 3 -1\n",
        )
        .unwrap();
        let z = read_matrix_market(&path).unwrap();
        assert_eq!(z.shape(), (2, 3));
        assert_eq!(z[(0, 0)], 0.75);
        assert_eq!(z[(1, 2)], -1.0);
        assert_eq!(z[(0, 1)], 0.0);
    }

    #[test]
    fn pattern_mask_round_trips_as_indicator() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mask = generators::mask(6, 4, 0.4, &mut rng);
        let path = temp_path("mask.mtx");
        write_matrix_market_pattern(&path, &mask).unwrap();
        let z = read_matrix_market(&path).unwrap();
        assert_eq!(z.shape(), (6, 4));
        for i in 0..6 {
            for j in 0..4 {
                assert_eq!(z[(i, j)], if mask[(i, j)] { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn malformed_matrix_market_is_reported_with_position() {
        let path = temp_path("bad.mtx");
        std::fs::write(&path, "%%MatrixMarket matrix array real general\n2 2\n1\n2\nx\n4\n")
            .unwrap();
        let err = read_matrix_market(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":5:"), "{msg}");
        assert!(msg.contains("\"x\""), "{msg}");

        std::fs::write(&path, "%%MatrixMarket matrix array real symmetric\n2 2\n").unwrap();
        assert!(read_matrix_market(&path).is_err());
    }

    #[test]
    fn csv_round_trips_bitwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let z = generators::gaussian::<f64>(4, 6, &mut rng);
        let path = temp_path("dense.csv");
        write_csv(&path, &z).unwrap();
        assert_eq!(read_csv(&path).unwrap(), z);

        std::fs::write(&path, "1,2\n3\n").unwrap();
        assert!(read_csv(&path).is_err());
        std::fs::write(&path, "").unwrap();
        assert_eq!(read_csv(&path).unwrap().shape(), (0, 0));
    }

    #[test]
    fn factored_json_round_trips_and_validates() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let x = generators::in_variety::<f64>(6, 4, 2, &mut rng);
        let path = temp_path("factored.json");
        write_factored_json(&path, &x).unwrap();
        let back = read_factored_json(&path).unwrap();
        assert_eq!(x.u(), back.u());
        assert_eq!(x.sigma(), back.sigma());
        assert_eq!(x.v(), back.v());

        // Zero matrix keeps its canonical empty-factor form.
        let zero = FactoredMatrix::<f64>::zero(3, 5);
        write_factored_json(&path, &zero).unwrap();
        assert_eq!(read_factored_json(&path).unwrap().rank(), 0);

        // Corrupt sigma ordering must be rejected by the constructor.
        let mut parts = FactoredParts::from(&x);
        parts.sigma.reverse();
        let err = FactoredMatrix::try_from(parts).unwrap_err();
        assert!(matches!(err, FactorError::InvalidSigma { .. }));
    }
}
