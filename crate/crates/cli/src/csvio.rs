//! CSV emission with lossless float formatting.
//!
//! Reals are written with 17 significant digits so a parse-reserialize
//! round trip reproduces the file byte for byte; any non-finite value aborts
//! the write with a diagnostic.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

/// A CSV cell: text or a checked real.
#[derive(Debug, Clone)]
pub enum Cell {
    Text(String),
    Real(f64),
    Int(i64),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Canonical float formatting: 17 significant digits, scientific.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes one table; fails on any non-finite real.
pub fn render(header: &[&str], rows: &[Vec<Cell>]) -> io::Result<String> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("row {i} has {} cells, header has {}", row.len(), header.len()),
            ));
        }
        let mut first = true;
        for cell in row {
            if !first {
                out.push(',');
            }
            first = false;
            match cell {
                Cell::Text(s) => out.push_str(s),
                Cell::Int(v) => {
                    let _ = write!(out, "{v}");
                }
                Cell::Real(v) => {
                    if !v.is_finite() {
                        return Err(io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("non-finite value in row {i}: {v}"),
                        ));
                    }
                    out.push_str(&format_real(*v));
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes one table to `dir/name`.
pub fn write_table(dir: &Path, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> io::Result<()> {
    let text = render(header, rows)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)
}

/// Parses a rendered table back into header and float-or-text cells; used
/// by the round-trip checks.
pub fn parse(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines
        .next()
        .map(|h| h.split(',').map(|s| s.to_string()).collect())
        .unwrap_or_default();
    let rows = lines
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect();
    (header, rows)
}
