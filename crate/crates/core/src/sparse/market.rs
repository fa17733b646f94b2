//! Matrix Market (`.mtx`) reader for real matrices.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::SparseCsr;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Layout {
    Coordinate,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SparseCsr> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    parse_matrix_market(file, &path.display().to_string())
}

/// Parses Matrix Market text. `name` is only used in error messages.
///
/// Symmetric storage is expanded, duplicate coordinates are summed.
pub fn parse_matrix_market(input: impl Read, name: &str) -> Result<SparseCsr> {
    let err = |line: usize, msg: String| Error::Parse { path: name.to_string(), line, msg };
    let mut lines = BufReader::new(input).lines().enumerate().map(|(i, l)| (i + 1, l));

    let (lno, header) = match lines.next() {
        Some((lno, l)) => (lno, l?),
        None => return Err(err(1, "empty file".into())),
    };
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(err(lno, format!("bad header `{header}`")));
    }
    let layout = match tokens[2].as_str() {
        "coordinate" => Layout::Coordinate,
        "array" => Layout::Array,
        other => return Err(err(lno, format!("unsupported format `{other}`"))),
    };
    match tokens[3].as_str() {
        "real" | "integer" | "double" => {}
        "pattern" => return Err(err(lno, "pattern matrices carry no values".into())),
        "complex" => return Err(err(lno, "complex matrices are not supported".into())),
        other => return Err(err(lno, format!("unsupported field `{other}`"))),
    }
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        other => return Err(err(lno, format!("unsupported symmetry `{other}`"))),
    };

    let mut data = lines.filter_map(|(lno, l)| match l {
        Ok(s) => {
            let t = s.trim();
            if t.is_empty() || t.starts_with('%') {
                None
            } else {
                Some(Ok((lno, t.to_string())))
            }
        }
        Err(e) => Some(Err(e)),
    });

    let (size_lno, size_line) = match data.next() {
        Some(r) => r?,
        None => return Err(err(lno, "missing size line".into())),
    };
    let sizes: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(size_lno, format!("bad size line: {e}")))?;
    let want = if layout == Layout::Coordinate { 3 } else { 2 };
    if sizes.len() != want {
        return Err(err(size_lno, format!("size line needs {want} integers")));
    }
    let (rows, cols) = (sizes[0], sizes[1]);
    if symmetry != Symmetry::General && rows != cols {
        return Err(err(size_lno, "symmetric storage requires a square matrix".into()));
    }

    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut push = |i: usize, j: usize, v: f64| {
        trip.push((i, j, v));
        if i != j {
            match symmetry {
                Symmetry::General => {}
                Symmetry::Symmetric => trip.push((j, i, v)),
                Symmetry::SkewSymmetric => trip.push((j, i, -v)),
            }
        }
    };

    match layout {
        Layout::Coordinate => {
            let nnz = sizes[2];
            let mut seen = 0;
            for item in data {
                let (lno, line) = item?;
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(err(lno, format!("expected `row col value`, got `{line}`")));
                }
                let i: usize = parts[0].parse().map_err(|e| err(lno, format!("bad row index: {e}")))?;
                let j: usize = parts[1].parse().map_err(|e| err(lno, format!("bad column index: {e}")))?;
                let v: f64 = parts[2].parse().map_err(|e| err(lno, format!("bad value: {e}")))?;
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(err(lno, format!("index ({i}, {j}) outside {rows}x{cols}")));
                }
                if !v.is_finite() {
                    return Err(err(lno, "non-finite value".into()));
                }
                if symmetry != Symmetry::General && j > i {
                    return Err(err(lno, "symmetric storage must hold the lower triangle".into()));
                }
                seen += 1;
                if seen > nnz {
                    return Err(err(lno, format!("more than the declared {nnz} entries")));
                }
                push(i - 1, j - 1, v);
            }
            if seen != nnz {
                return Err(err(size_lno, format!("declared {nnz} entries, found {seen}")));
            }
        }
        Layout::Array => {
            // column-major; symmetric variants store the lower triangle only
            let mut slots = Vec::new();
            for j in 0..cols {
                let start = match symmetry {
                    Symmetry::General => 0,
                    Symmetry::Symmetric => j,
                    Symmetry::SkewSymmetric => j + 1,
                };
                for i in start..rows {
                    slots.push((i, j));
                }
            }
            let mut it = slots.into_iter();
            for item in data {
                let (lno, line) = item?;
                let v: f64 = line.parse().map_err(|e| err(lno, format!("bad value: {e}")))?;
                if !v.is_finite() {
                    return Err(err(lno, "non-finite value".into()));
                }
                let (i, j) = it
                    .next()
                    .ok_or_else(|| err(lno, "more values than the matrix holds".into()))?;
                if v != 0.0 {
                    push(i, j, v);
                }
            }
            if it.next().is_some() {
                return Err(err(size_lno, "fewer values than the matrix holds".into()));
            }
        }
    }
    SparseCsr::from_triplets(rows, cols, &trip)
}
