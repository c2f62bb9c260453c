//! Matrix files: a `# rows cols` header line followed by comma-separated rows.

use std::fs;
use std::path::Path;

use centroid_core::Matrix;

use crate::error::{CliError, CliResult};

fn parse_err(path: &Path, msg: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Rows of a matrix file; the header, when present, must match the data.
pub fn read_rows(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let header = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .filter(|l| l.starts_with('#'))
        .map(|l| {
            let dims: Vec<usize> = l[1..]
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| parse_err(path, format!("bad header {l:?}")))?;
            match dims[..] {
                [r, c] => Ok((r, c)),
                _ => Err(parse_err(path, format!("header must be `# rows cols`, got {l:?}"))),
            }
        })
        .transpose()?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, format!("row {i}: {e}")))?;
        if row.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(path, format!("row {i}: non-finite entry")));
        }
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                return Err(parse_err(path, format!("row {i} has {} columns, expected {first}", row.len())));
            }
        }
        rows.push(row);
    }
    if let Some((r, c)) = header {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.len() != r || cols != c {
            return Err(parse_err(path, format!("header says {r}×{c}, data is {}×{cols}", rows.len())));
        }
    }
    Ok(rows)
}

pub fn read_matrix(path: &Path) -> CliResult<Matrix> {
    let rows = read_rows(path)?;
    if rows.is_empty() {
        return Err(parse_err(path, "empty matrix"));
    }
    Ok(Matrix::from_rows(&rows)?)
}

pub fn format_rows(rows: &[Vec<f64>]) -> String {
    let cols = rows.first().map_or(0, Vec::len);
    let mut s = format!("# {} {}\n", rows.len(), cols);
    for r in rows {
        let line: Vec<String> = r.iter().map(|x| x.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn write_rows(path: &Path, rows: &[Vec<f64>]) -> CliResult<()> {
    fs::write(path, format_rows(rows)).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let rows = vec![vec![0.1, -2.5e-17, 1.0 / 3.0], vec![4.0, 5.0, 6.0]];
        write_rows(&p, &rows).unwrap();
        assert_eq!(read_rows(&p).unwrap(), rows);
    }

    #[test]
    fn header_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "# 2 2\n1,2\n").unwrap();
        assert!(matches!(read_rows(&p), Err(CliError::Parse { .. })));
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_rows(&p).is_err());
        fs::write(&p, "1, 2\n\n3,4\n").unwrap();
        assert_eq!(read_rows(&p).unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }
}
