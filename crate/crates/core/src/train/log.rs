use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f32,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_f1: Option<f64>,
}

/// One JSON object per line: the run configuration, then one record per
/// epoch.
#[derive(Debug)]
pub struct RunLog {
    path: PathBuf,
    file: File,
    records: Vec<EpochRecord>,
}

#[derive(Serialize)]
struct ConfigLine<'a> {
    config: &'a TrainConfig,
}

impl RunLog {
    pub fn create(path: &Path, config: &TrainConfig) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut log = RunLog {
            path: path.to_path_buf(),
            file,
            records: Vec::new(),
        };
        let line = serde_json::to_string(&ConfigLine { config }).expect("config serializes");
        log.write_line(&line)?;
        Ok(log)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, record: EpochRecord) -> Result<()> {
        let line = serde_json::to_string(&record).expect("record serializes");
        self.write_line(&line)?;
        self.records.push(record);
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    /// Reads the epoch records back from a log file.
    pub fn read_records(path: &Path) -> Result<Vec<EpochRecord>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.starts_with("{\"config\""))
            .map(|l| {
                serde_json::from_str(l).map_err(|e| Error::Json {
                    path: path.to_path_buf(),
                    source: e,
                })
            })
            .collect()
    }
}
