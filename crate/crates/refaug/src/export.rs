//! Epoch records as CSV (`metrics.csv`) and JSON lines (`metrics.jsonl`).
//!
//! Both use the field names of [`RECORD_FIELDS`] in that order. Floats are
//! written in shortest round-trip form, so reading a file back gives the
//! exact values that were written.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use refaug_core::metrics::{EpochRecord, RECORD_FIELDS};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

pub fn export_records(records: &[EpochRecord], path: &Path, format: Format) -> CliResult<()> {
    if records.is_empty() {
        return Err(CliError::Input("no records to export".into()));
    }
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(file);
            for r in records {
                w.serialize(r)
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            }
            w.flush().map_err(|e| CliError::io(path, e))
        }
        Format::Jsonl => {
            let mut w = BufWriter::new(file);
            for r in records {
                let line = serde_json::to_string(r).expect("records serialize");
                writeln!(w, "{line}").map_err(|e| CliError::io(path, e))?;
            }
            w.flush().map_err(|e| CliError::io(path, e))
        }
    }
}

pub fn import_records(path: &Path, format: Format) -> CliResult<Vec<EpochRecord>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let bad = |e: &dyn std::fmt::Display| CliError::Input(format!("{}: {e}", path.display()));
    match format {
        Format::Csv => {
            let mut r = csv::Reader::from_reader(file);
            let header: Vec<String> = r
                .headers()
                .map_err(|e| bad(&e))?
                .iter()
                .map(String::from)
                .collect();
            if header != RECORD_FIELDS {
                return Err(bad(&format!("unexpected header {}", header.join(","))));
            }
            r.deserialize()
                .map(|row| row.map_err(|e| bad(&e)))
                .collect()
        }
        Format::Jsonl => BufReader::new(file)
            .lines()
            .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
            .map(|l| {
                let l = l.map_err(|e| CliError::io(path, e))?;
                serde_json::from_str(&l).map_err(|e| bad(&e))
            })
            .collect(),
    }
}
