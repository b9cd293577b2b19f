//! Numeric CSV tables with a header row.

use std::path::Path;

use crate::error::{Error, Result};

/// Column-named numeric table. Empty cells read as NaN, booleans as 0/1.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Shortest round-trip text for `v`; NaN is written as an empty cell.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v == 0.0 || (v.abs() >= 1e-4 && v.abs() < 1e15) || v.is_infinite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse_cell(s: &str, line: u64) -> Result<f64> {
    let s = s.trim();
    match s {
        "" => Ok(f64::NAN),
        "true" => Ok(1.0),
        "false" => Ok(0.0),
        _ => s.parse::<f64>().map_err(|_| Error::Parse {
            line,
            message: format!("`{s}` is not a number"),
        }),
    }
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            if rec.len() != headers.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("{} fields, header has {}", rec.len(), headers.len()),
                });
            }
            rows.push(rec.iter().map(|c| parse_cell(c, line)).collect::<Result<Vec<_>>>()?);
        }
        Ok(Self { headers, rows })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| format_value(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.index_of(name)?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }
}
