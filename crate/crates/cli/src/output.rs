//! CSV and JSON writers. Floats are printed with 17 significant digits so
//! that identical runs give byte-identical files.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::CliError;

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Destination for the main data product: a file, or standard output.
pub fn open(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| CliError::Failed(format!("cannot create {}: {e}", p.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

pub struct CsvWriter {
    out: Box<dyn Write>,
    columns: usize,
}

impl CsvWriter {
    pub fn new(mut out: Box<dyn Write>, header: &[String]) -> Result<Self, CliError> {
        writeln!(out, "{}", header.join(",")).map_err(io_err)?;
        Ok(Self { out, columns: header.len() })
    }

    pub fn row(&mut self, values: &[f64]) -> Result<(), CliError> {
        debug_assert_eq!(values.len(), self.columns);
        let line: Vec<String> = values.iter().map(|&v| float(v)).collect();
        writeln!(self.out, "{}", line.join(",")).map_err(io_err)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(io_err)
    }
}

pub fn write_json<T: Serialize>(out: Box<dyn Write>, value: &T) -> Result<(), CliError> {
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Failed(e.to_string()))?;
    writeln!(out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

fn io_err(e: io::Error) -> CliError {
    CliError::Failed(format!("write failed: {e}"))
}
