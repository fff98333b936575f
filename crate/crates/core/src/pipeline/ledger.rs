use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Succeeded,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub wall_time_s: f64,
    /// Relative to the run directory.
    pub artifacts: Vec<PathBuf>,
    /// Cache key of the stage inputs.
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-run record of stage outcomes, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub run_id: String,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
}

impl RunLedger {
    pub fn new(run_id: impl Into<String>, config_hash: impl Into<String>) -> Self {
        RunLedger {
            run_id: run_id.into(),
            config_hash: config_hash.into(),
            stages: Vec::new(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn count(&self, status: StageStatus) -> usize {
        self.stages.iter().filter(|s| s.status == status).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_and_counts() {
        let mut l = RunLedger::new("abc", "abcdef");
        for (name, status) in [("acquire", StageStatus::Skipped), ("ingest", StageStatus::Failed)] {
            l.stages.push(StageRecord {
                name: name.into(),
                status,
                wall_time_s: 0.5,
                artifacts: vec![PathBuf::from(name).join("x.json")],
                key: "k".into(),
                error: (status == StageStatus::Failed).then(|| "boom".into()),
            });
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ledger.json");
        l.save(&p).unwrap();
        let back = RunLedger::load(&p).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.count(StageStatus::Skipped), 1);
        assert_eq!(back.stage("ingest").unwrap().error.as_deref(), Some("boom"));
        assert!(std::fs::read_to_string(&p).unwrap().contains("\"failed\""));
    }
}
