use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Ok,
    Failed,
}

/// Everything needed to reproduce a run: the subcommand and its fully
/// resolved config. Timing fields are informational only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub master_seed: u64,
    pub version: String,
    /// Files written by the run, relative to the run directory.
    pub outputs: Vec<String>,
    pub status: Status,
    pub started_unix_secs: f64,
    pub wall_clock_secs: Option<f64>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn begin(subcommand: &str, config: Value, master_seed: u64) -> Self {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        Self {
            subcommand: subcommand.to_string(),
            config,
            master_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
            status: Status::Running,
            started_unix_secs: now.as_secs_f64(),
            wall_clock_secs: None,
            error: None,
        }
    }

    pub fn finish(&mut self, outputs: Vec<String>, elapsed: Duration, error: Option<String>) {
        self.outputs = outputs;
        self.wall_clock_secs = Some(elapsed.as_secs_f64());
        self.status = if error.is_some() { Status::Failed } else { Status::Ok };
        self.error = error;
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}
