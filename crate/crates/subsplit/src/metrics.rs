//! Per-epoch metrics rows and the CSV files they land in.
//!
//! The value columns (losses, accuracies, residual, objective) are written
//! with Rust's shortest-roundtrip float formatting, so equal runs produce
//! byte-equal columns and a parse restores the exact bits. Timing columns
//! are wall-clock measurements and are excluded from equality checks.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,wall_s,train_loss,train_acc,test_acc,residual,objective,\
phase_w_s,phase_p_s,phase_q_s,phase_u_s";

/// Column positions of the run-deterministic fields: epoch plus the five
/// value columns.
const NUMERIC_COLUMNS: [usize; 6] = [0, 2, 3, 4, 5, 6];
const COLUMN_COUNT: usize = 11;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub wall_s: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub residual: f64,
    pub objective: f64,
    pub phase_w_s: f64,
    pub phase_p_s: f64,
    pub phase_q_s: f64,
    pub phase_u_s: f64,
}

impl fmt::Display for MetricsRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{:.6},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.epoch,
            self.wall_s,
            self.train_loss,
            self.train_acc,
            self.test_acc,
            self.residual,
            self.objective,
            self.phase_w_s,
            self.phase_p_s,
            self.phase_q_s,
            self.phase_u_s,
        )
    }
}

/// Writes the header on creation and appends one line per row, insisting
/// on strictly increasing epochs.
pub struct CsvLogger {
    out: BufWriter<File>,
    last_epoch: Option<usize>,
}

impl CsvLogger {
    pub fn create(path: &Path) -> Result<CsvLogger> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{CSV_HEADER}")?;
        Ok(CsvLogger {
            out,
            last_epoch: None,
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        if let Some(last) = self.last_epoch {
            if row.epoch <= last {
                return Err(Error::Contract(format!(
                    "metrics epochs must increase strictly: {} after {}",
                    row.epoch, last
                )));
            }
        }
        writeln!(self.out, "{row}")?;
        self.last_epoch = Some(row.epoch);
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

fn format_err(path: &Path, msg: String) -> Error {
    Error::Format {
        path: PathBuf::from(path),
        msg,
    }
}

fn split_line<'a>(path: &Path, number: usize, line: &'a str) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != COLUMN_COUNT {
        return Err(format_err(
            path,
            format!(
                "line {number}: expected {COLUMN_COUNT} columns, found {}",
                fields.len()
            ),
        ));
    }
    Ok(fields)
}

fn check_header(path: &Path, header: Option<&str>) -> Result<()> {
    match header {
        Some(h) if h == CSV_HEADER => Ok(()),
        Some(h) => Err(format_err(path, format!("unexpected header: {h}"))),
        None => Err(format_err(path, "empty metrics file".to_string())),
    }
}

/// Parses a metrics file back into rows, validating the header and the
/// column count of every line.
pub fn read_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    check_header(path, lines.next())?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields = split_line(path, i + 2, line)?;
        let int = |k: usize| -> Result<usize> {
            fields[k]
                .parse()
                .map_err(|_| format_err(path, format!("line {}: bad integer {}", i + 2, fields[k])))
        };
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse()
                .map_err(|_| format_err(path, format!("line {}: bad number {}", i + 2, fields[k])))
        };
        rows.push(MetricsRow {
            epoch: int(0)?,
            wall_s: num(1)?,
            train_loss: num(2)?,
            train_acc: num(3)?,
            test_acc: num(4)?,
            residual: num(5)?,
            objective: num(6)?,
            phase_w_s: num(7)?,
            phase_p_s: num(8)?,
            phase_q_s: num(9)?,
            phase_u_s: num(10)?,
        });
    }
    Ok(rows)
}

/// True when two metrics files agree byte for byte on the epoch column and
/// the five value columns of every row. Timing columns are ignored; row
/// count and header must match.
pub fn numeric_columns_match(a: &Path, b: &Path) -> Result<bool> {
    let text_a = std::fs::read_to_string(a)?;
    let text_b = std::fs::read_to_string(b)?;
    let mut lines_a = text_a.lines();
    let mut lines_b = text_b.lines();
    check_header(a, lines_a.next())?;
    check_header(b, lines_b.next())?;
    let mut rows_a: Vec<&str> = lines_a.collect();
    let mut rows_b: Vec<&str> = lines_b.collect();
    if rows_a.len() != rows_b.len() {
        return Ok(false);
    }
    for (i, (la, lb)) in rows_a.drain(..).zip(rows_b.drain(..)).enumerate() {
        let fa = split_line(a, i + 2, la)?;
        let fb = split_line(b, i + 2, lb)?;
        if NUMERIC_COLUMNS.iter().any(|&k| fa[k] != fb[k]) {
            return Ok(false);
        }
    }
    Ok(true)
}
