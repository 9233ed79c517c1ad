use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use artss::report::RunReport;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::job::Outcome;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub runs: Vec<PathBuf>,
}

/// Merge the reports of several run directories into one CSV.
#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories, each holding a report.json.
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

impl ReportArgs {
    pub fn resolve(&self) -> Result<ReportConfig> {
        if self.runs.is_empty() {
            bail!("no run directories given");
        }
        let runs = self.runs.iter().map(std::path::absolute).collect::<std::io::Result<_>>()?;
        Ok(ReportConfig { runs })
    }
}

/// Run ids from directory names; repeats get `-2`, `-3`, ... appended.
pub fn run_ids(dirs: &[PathBuf]) -> Vec<String> {
    let mut taken = HashSet::new();
    dirs.iter()
        .map(|d| {
            let base = d
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".to_string());
            let mut id = base.clone();
            let mut k = 2;
            while !taken.insert(id.clone()) {
                id = format!("{base}-{k}");
                k += 1;
            }
            id
        })
        .collect()
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn run(c: &ReportConfig, out: &Path) -> Result<Outcome> {
    if c.runs.is_empty() {
        bail!("no run directories given");
    }
    let mut reports = Vec::with_capacity(c.runs.len());
    for d in &c.runs {
        let path = d.join("report.json");
        reports.push(RunReport::load_json(&path).with_context(|| format!("loading {}", path.display()))?);
    }
    let ids = run_ids(&c.runs);
    let keys: BTreeSet<&String> = reports.iter().flat_map(|r| r.summary.keys()).collect();

    let file = "comparison.csv".to_string();
    let path = out.join(&file);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["run_id", "kind", "version", "master_seed"];
    header.extend(keys.iter().map(|k| k.as_str()));
    w.write_record(&header)?;
    for (id, r) in ids.iter().zip(&reports) {
        let mut row = vec![id.clone(), r.kind.clone(), r.version.clone(), r.master_seed.to_string()];
        row.extend(keys.iter().map(|k| r.summary.get(*k).map(cell).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(Outcome {
        files: vec![file],
        summary: format!("report: merged {} runs into {}", reports.len(), path.display()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_names_get_suffixes() {
        let dirs: Vec<PathBuf> = ["a/x", "b/x", "c/y", "d/x", "e/x-2"].iter().map(PathBuf::from).collect();
        assert_eq!(run_ids(&dirs), ["x", "x-2", "y", "x-3", "x-2-2"]);
    }
}
