use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use artss::latent::{load_samples, save_samples, Format};
use artss::rejection::{filter_unlabeled, save_decisions, DEFAULT_M_NN};
use artss::Pool;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::job::Outcome;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RejectConfig {
    pub labeled: PathBuf,
    pub unlabeled: PathBuf,
    pub m_nn: usize,
    /// Format of both inputs and of the accepted/rejected outputs. When
    /// unset each input is read by its extension and the outputs follow the
    /// unlabeled file.
    pub format: Option<Format>,
    /// Epoch stamped on the threshold and the decisions.
    pub epoch: u64,
}

impl Default for RejectConfig {
    fn default() -> Self {
        Self {
            labeled: PathBuf::new(),
            unlabeled: PathBuf::new(),
            m_nn: DEFAULT_M_NN,
            format: None,
            epoch: 0,
        }
    }
}

/// Split an unlabeled pool into accepted and rejected samples.
#[derive(Debug, Args)]
pub struct RejectArgs {
    /// Labeled samples (`id,z_1..z_d,sigma` CSV or JSONL).
    pub labeled: Option<PathBuf>,
    /// Unlabeled samples, same layout.
    pub unlabeled: Option<PathBuf>,
    #[arg(long)]
    pub m_nn: Option<usize>,
    /// csv or jsonl; inferred from each file's extension by default.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub epoch: Option<u64>,
    /// JSON config file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

impl RejectArgs {
    pub fn resolve(&self) -> Result<RejectConfig> {
        let file = self.config.as_deref().map(config::read_file).transpose()?;
        let mut c = config::layered(&RejectConfig::default(), file.as_ref(), None)?;
        if let Some(p) = &self.labeled {
            c.labeled = p.clone();
        }
        if let Some(p) = &self.unlabeled {
            c.unlabeled = p.clone();
        }
        if let Some(m) = self.m_nn {
            c.m_nn = m;
        }
        if let Some(e) = self.epoch {
            c.epoch = e;
        }
        if let Some(f) = &self.format {
            c.format = Some(f.parse()?);
        }
        if c.labeled.as_os_str().is_empty() || c.unlabeled.as_os_str().is_empty() {
            bail!("both a labeled and an unlabeled sample file are required");
        }
        // Absolute paths keep the manifest replayable from any directory.
        c.labeled = std::path::absolute(&c.labeled)?;
        c.unlabeled = std::path::absolute(&c.unlabeled)?;
        Ok(c)
    }
}

fn infer_format(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "ndjson") => Format::Jsonl,
        _ => Format::Csv,
    }
}

pub fn run(c: &RejectConfig, out: &Path) -> Result<Outcome> {
    let labeled_format = c.format.unwrap_or_else(|| infer_format(&c.labeled));
    let format = c.format.unwrap_or_else(|| infer_format(&c.unlabeled));
    let labeled = load_samples(&c.labeled, labeled_format, Pool::Labeled).with_context(|| format!("loading {}", c.labeled.display()))?;
    let unlabeled =
        load_samples(&c.unlabeled, format, Pool::Unlabeled).with_context(|| format!("loading {}", c.unlabeled.display()))?;
    let outcome = filter_unlabeled(&unlabeled, &labeled, c.m_nn, c.epoch)?;

    let ext = format.extension();
    let files = vec![
        "decisions.csv".to_string(),
        format!("accepted.{ext}"),
        format!("rejected.{ext}"),
        "threshold.json".to_string(),
    ];
    save_decisions(&outcome.decisions, &out.join(&files[0]))?;
    save_samples(&outcome.accepted, &out.join(&files[1]), format)?;
    save_samples(&outcome.rejected, &out.join(&files[2]), format)?;
    outcome.state.write_json(&out.join(&files[3]))?;
    Ok(Outcome {
        files,
        summary: format!(
            "reject: {} accepted, {} rejected, T = {:.6}, m_nn = {} -> {}",
            outcome.accepted.len(),
            outcome.rejected.len(),
            outcome.state.t,
            outcome.state.m_nn,
            out.display()
        ),
    })
}
