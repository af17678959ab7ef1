use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use crate::error::SimError;
use crate::types::Measurement;

/// First line of a measurement log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub scenario: Scenario,
    pub seed: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a header line followed by one JSON measurement per line.
pub fn write_log(path: &Path, header: &LogHeader, measurements: &[Measurement]) -> Result<(), SimError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    for m in measurements {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_log(path: &Path) -> Result<(LogHeader, Vec<Measurement>), SimError> {
    let r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| SimError::InvalidScenario(format!("{} is empty", path.display())))?
        .map_err(io_err(path))?;
    let header: LogHeader = serde_json::from_str(&first)?;
    let mut out = Vec::new();
    for line in lines {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok((header, out))
}
