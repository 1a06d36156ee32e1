use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::commands::CliError;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("cannot parse {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))
}

/// In-memory CSV table with a header row, written out in one go.
pub struct Csv {
    wtr: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(header).expect("in-memory write");
        Self { wtr }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.wtr.write_record(cells).expect("in-memory write");
    }

    pub fn write(self, path: &Path) -> Result<(), CliError> {
        let bytes = self
            .wtr
            .into_inner()
            .map_err(|e| CliError::Internal(e.to_string()))?;
        fs::write(path, bytes)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
    }
}

/// Parses "1-100", "20,40,100" or mixtures like "1-20,30,40".
pub fn parse_grid(spec: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Config(format!("invalid grid '{spec}'"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() || out.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad());
    }
    Ok(out)
}
