use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use artss::lab::experiments::{run as run_experiment, Experiment, LabConfig};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::job::Outcome;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub experiment: Experiment,
    pub lab: LabConfig,
}

/// Monte-Carlo checks of semi-supervised degradation.
#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// lemma, corollary1, corollary2 or bias-variance.
    #[arg(long)]
    pub experiment: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target-domain shift of the second mixture component.
    #[arg(long, allow_negative_numbers = true)]
    pub shift: Option<f64>,
    /// JSON config: `{"experiment": ..., "lab": {...}}`. Flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

impl SimulateArgs {
    pub fn resolve(&self) -> Result<SimulateConfig> {
        let file = self.config.as_deref().map(config::read_file).transpose()?;
        config::check_keys(file.as_ref(), &["experiment", "lab"])?;
        let from_file = file.as_ref().and_then(|f| f.get("experiment")).and_then(|v| v.as_str());
        let experiment: Experiment = match (self.experiment.as_deref(), from_file) {
            (Some(e), _) | (None, Some(e)) => e.parse()?,
            (None, None) => bail!("--experiment is required (lemma, corollary1, corollary2 or bias-variance)"),
        };
        let mut lab = config::layered(&LabConfig::defaults_for(experiment), file.as_ref(), Some("lab"))?;
        if let Some(t) = self.trials {
            lab.trials = t;
        }
        if let Some(s) = self.seed {
            lab.seed = s;
        }
        if let Some(s) = self.shift {
            lab.shift = s;
        }
        lab.validate(experiment)?;
        Ok(SimulateConfig { experiment, lab })
    }
}

pub fn run(c: &SimulateConfig, out: &Path) -> Result<Outcome> {
    let report = run_experiment(c.experiment, &c.lab)?;
    let files = vec!["report.json".to_string(), "trials.csv".to_string()];
    report.save_json(&out.join(&files[0]))?;
    report.table.save_csv(&out.join(&files[1]))?;
    Ok(Outcome {
        files,
        summary: format!(
            "simulate {}: {} trials, seed {} -> {}",
            c.experiment.name(),
            c.lab.trials,
            c.lab.seed,
            out.display()
        ),
    })
}
