//! Plain-text matrix format shared by every serialized object.
//!
//! A matrix is written as a `rows cols` line followed by one line per row,
//! each holding `re im` pairs in row-major order with 17 significant digits.
//! Objects wrap one or more matrix blocks behind a header line such as
//! `MMAP 2` or `BIPARTITE 2 3`.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::ComplexMatrix;

/// Line cursor that remembers the 1-based line number for error messages.
/// Blank lines and lines starting with `#` are skipped.
pub struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    pub fn new(text: &'a str) -> Self {
        LineReader {
            lines: text.lines().enumerate(),
            line_no: 0,
        }
    }

    pub fn line_no(&self) -> usize {
        self.line_no
    }

    pub fn next_line(&mut self) -> Option<&'a str> {
        for (i, line) in self.lines.by_ref() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            self.line_no = i + 1;
            return Some(trimmed);
        }
        None
    }

    pub fn expect_line(&mut self, what: &str) -> Result<&'a str> {
        let line_no = self.line_no;
        self.next_line().ok_or_else(|| Error::Parse {
            line: line_no + 1,
            msg: format!("unexpected end of input, expected {what}"),
        })
    }

    pub fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line_no,
            msg: msg.into(),
        }
    }

    /// Reads a header line `KEYWORD n1 n2 ...` and returns the counts.
    pub fn expect_header(&mut self, keyword: &str, n_fields: usize) -> Result<Vec<usize>> {
        let line = self.expect_line(keyword)?;
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some(keyword) {
            return Err(self.error(format!("expected header `{keyword}`, found `{line}`")));
        }
        let values = tokens
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| self.error(format!("bad count `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != n_fields {
            return Err(self.error(format!(
                "header `{keyword}` takes {n_fields} values, found {}",
                values.len()
            )));
        }
        Ok(values)
    }

    /// Reads a `key value` line and returns the value token.
    pub fn expect_key(&mut self, key: &str) -> Result<&'a str> {
        let line = self.expect_line(key)?;
        let mut tokens = line.split_whitespace();
        match (tokens.next(), tokens.next(), tokens.next()) {
            (Some(k), Some(v), None) if k == key => Ok(v),
            _ => Err(self.error(format!("expected `{key} <value>`, found `{line}`"))),
        }
    }

    pub fn read_matrix(&mut self) -> Result<ComplexMatrix> {
        let line = self.expect_line("matrix shape")?;
        let dims: Vec<usize> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| self.error(format!("bad matrix shape `{line}`")))
            })
            .collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(self.error(format!("matrix shape line needs 2 values, found `{line}`")));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.expect_line("matrix row")?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| self.error(format!("bad number `{t}`")))
                })
                .collect::<Result<_>>()?;
            if values.len() != 2 * cols {
                return Err(self.error(format!(
                    "matrix row needs {} numbers, found {}",
                    2 * cols,
                    values.len()
                )));
            }
            data.extend(values.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])));
        }
        ComplexMatrix::from_vec(rows, cols, data)
    }

    pub fn expect_end(&mut self) -> Result<()> {
        match self.next_line() {
            None => Ok(()),
            Some(line) => Err(self.error(format!("trailing content `{line}`"))),
        }
    }
}

/// Formats a float with 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_matrix(out: &mut String, m: &ComplexMatrix) {
    let _ = writeln!(out, "{} {}", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = (0..m.cols())
            .map(|j| {
                let z = m[(i, j)];
                format!("{} {}", fmt_f64(z.re), fmt_f64(z.im))
            })
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let m = ComplexMatrix::from_fn(2, 3, |i, j| {
            Complex64::new(
                1.0 / (i as f64 + 3.0),
                -(j as f64).sqrt() * std::f64::consts::PI,
            )
        });
        let mut text = String::new();
        write_matrix(&mut text, &m);
        assert!(text.starts_with("2 3\n"));
        let back = LineReader::new(&text).read_matrix().unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn short_row_is_reported_with_line_number() {
        let err = LineReader::new("2 2\n1 0 0 0\n1 0\n")
            .read_matrix()
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn header_keyword_is_checked() {
        let mut r = LineReader::new("KMAT 2\n");
        assert!(r.expect_header("MMAP", 1).is_err());
        let mut r = LineReader::new("# comment\nMMAP 3\n");
        assert_eq!(r.expect_header("MMAP", 1).unwrap(), vec![3]);
    }
}
