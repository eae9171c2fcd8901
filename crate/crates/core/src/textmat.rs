//! Whitespace-separated square matrices, one row per line.
//!
//! Blank lines and lines starting with `#` are skipped. Errors report the
//! 1-based line number of the offending row.

use crate::error::{Error, Result};

pub(crate) fn parse_square<T>(
    text: &str,
    mut token: impl FnMut(&str) -> std::result::Result<T, String>,
) -> Result<Vec<Vec<T>>> {
    let mut rows: Vec<(usize, Vec<T>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let mut row = Vec::new();
        for (col, tok) in line.split_whitespace().enumerate() {
            let v = token(tok).map_err(|m| Error::Parse {
                row: lineno,
                message: format!("column {}: {m}", col + 1),
            })?;
            row.push(v);
        }
        rows.push((lineno, row));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 0,
            message: "matrix has no rows".into(),
        });
    }
    let n = rows.len();
    for (lineno, row) in &rows {
        if row.len() != n {
            return Err(Error::Parse {
                row: *lineno,
                message: format!("expected {n} entries (square matrix), found {}", row.len()),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub(crate) fn format_rows<T>(rows: impl Iterator<Item = Vec<T>>, fmt: impl Fn(&T) -> String) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(&fmt).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_the_offending_row() {
        let err = parse_square("1 0\n# c\n0\n", |t| t.parse::<u8>().map_err(|e| e.to_string()))
            .unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            e => panic!("unexpected {e}"),
        }
    }
}
