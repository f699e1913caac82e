use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
pub const RUN_REPORT: &str = "run.json";

/// Sidecar written next to every command's CSV output. The only file that
/// carries wall time, so the CSVs stay byte-identical across seeded reruns.
#[derive(Serialize)]
pub struct RunReport<'a, C: Serialize, M: Serialize> {
    pub format_version: u32,
    pub command: &'a str,
    pub seed: u64,
    pub config: C,
    pub metrics: M,
    pub wall_time_s: f64,
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numeric(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Core(multiplex_forge::Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    })
}

pub fn finite(what: &str, x: f64) -> CliResult<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(CliError::Numeric(format!("{what} is {x}")))
    }
}

pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<Self> {
        let writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut out = Self {
            path: path.to_path_buf(),
            writer,
        };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    pub fn row(&mut self, fields: impl IntoIterator<Item = String>) -> CliResult<()> {
        let fields: Vec<String> = fields.into_iter().collect();
        self.writer.write_record(&fields).map_err(|e| csv_error(&self.path, e))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.writer.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e))
}
