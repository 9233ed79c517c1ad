//! A fully resolved run and its execution inside a run directory.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::{reject, report, simulate, toytrain};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "subcommand", content = "config", rename_all = "lowercase")]
pub enum Job {
    Reject(reject::RejectConfig),
    Simulate(simulate::SimulateConfig),
    Toytrain(toytrain::ToyConfig),
    Report(report::ReportConfig),
}

/// What a finished run leaves behind.
pub struct Outcome {
    /// Written files, relative to the run directory.
    pub files: Vec<String>,
    /// The single line printed on stdout.
    pub summary: String,
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Reject(_) => "reject",
            Job::Simulate(_) => "simulate",
            Job::Toytrain(_) => "toytrain",
            Job::Report(_) => "report",
        }
    }

    pub fn master_seed(&self) -> u64 {
        match self {
            Job::Reject(_) | Job::Report(_) => 0,
            Job::Simulate(c) => c.lab.seed,
            Job::Toytrain(c) => c.seeds.first().copied().unwrap_or(0),
        }
    }

    fn run(&self, out: &Path) -> Result<Outcome> {
        match self {
            Job::Reject(c) => reject::run(c, out),
            Job::Simulate(c) => simulate::run(c, out),
            Job::Toytrain(c) => toytrain::run(c, out),
            Job::Report(c) => report::run(c, out),
        }
    }

    /// Rebuilds a job from a manifest's subcommand and config.
    pub fn from_manifest(m: &RunManifest) -> Result<Self> {
        let v = serde_json::json!({ "subcommand": m.subcommand, "config": m.config });
        serde_json::from_value(v).context("manifest does not describe a known run")
    }
}

/// Writes the manifest, runs the job, then finalizes the manifest whether or
/// not the run succeeded.
pub fn execute(job: &Job, out: &Path) -> Result<String> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let config = match serde_json::to_value(job)? {
        serde_json::Value::Object(mut m) => m.remove("config").unwrap_or_default(),
        _ => unreachable!("jobs serialize to objects"),
    };
    let mut manifest = RunManifest::begin(job.name(), config, job.master_seed());
    manifest.save(out)?;
    let start = Instant::now();
    let result = job.run(out);
    match &result {
        Ok(o) => manifest.finish(o.files.clone(), start.elapsed(), None),
        Err(e) => manifest.finish(Vec::new(), start.elapsed(), Some(format!("{e:#}"))),
    }
    manifest.save(out)?;
    result.map(|o| o.summary)
}
