//! Report envelope shared by all commands, plus the stream writers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::CliError;

/// A single JSON document per command invocation.
///
/// Apart from `wall_time_seconds`, the serialized report is a deterministic
/// function of the config and seed.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub config: ExperimentConfig,
    pub pass: bool,
    pub results: Value,
    /// Unit of each numeric result, keyed by result name.
    pub units: BTreeMap<String, String>,
    pub wall_time_seconds: f64,
    pub versions: BTreeMap<String, String>,
}

impl Report {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("morrey-sde-cli".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("report-format".into(), "1".into());
        Self {
            command: command.into(),
            config: config.clone(),
            pass: false,
            results: Value::Null,
            units: BTreeMap::new(),
            wall_time_seconds: 0.0,
            versions,
        }
    }

    pub fn unit(&mut self, name: &str, unit: &str) {
        self.units.insert(name.into(), unit.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Output directory handle; all writers are no-ops when no directory is set.
pub struct OutputDir {
    dir: Option<PathBuf>,
}

impl OutputDir {
    pub fn new(dir: Option<PathBuf>) -> Result<Self, CliError> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| {
                CliError::Io(format!(
                    "cannot create output directory {}: {e}",
                    d.display()
                ))
            })?;
        }
        Ok(Self { dir })
    }

    pub fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
        File::create(path)
            .map(BufWriter::new)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }

    /// Writes one JSON object per line.
    pub fn jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let Some(path) = self.path(name) else {
            return Ok(());
        };
        let mut w = Self::create(&path)?;
        for r in rows {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))
    }

    /// Writes a CSV table with a header row.
    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let Some(path) = self.path(name) else {
            return Ok(());
        };
        let mut w = Self::create(&path)?;
        let io = |e: std::io::Error| CliError::Io(e.to_string());
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for r in rows {
            writeln!(w, "{}", r.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Hands a buffered writer to `f`.
    pub fn with_writer(
        &self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> morrey_sde::Result<()>,
    ) -> Result<(), CliError> {
        let Some(path) = self.path(name) else {
            return Ok(());
        };
        let mut w = Self::create(&path)?;
        f(&mut w)?;
        w.flush().map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn report(&self, report: &Report) -> Result<(), CliError> {
        let Some(path) = self.path(&format!("{}.json", report.command)) else {
            return Ok(());
        };
        std::fs::write(&path, report.to_json() + "\n")
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }
}
