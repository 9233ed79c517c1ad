use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use artss::rejection::save_decisions;
use artss::toy::ablation::{run_ablation, run_toy, MIN_ABLATION_SEEDS};
use artss::toy::{Arm, TaskConfig, TrainConfig};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::job::Outcome;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub task: TaskConfig,
    pub train: TrainConfig,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    /// Also write one decisions CSV per gated (arm, seed) cell.
    pub decisions: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            train: TrainConfig::default(),
            arms: vec![Arm::Artss],
            seeds: vec![0],
            decisions: false,
        }
    }
}

/// Train the toy restoration model under one or more rejection arms.
#[derive(Debug, Args)]
pub struct ToytrainArgs {
    /// nossd, nr, rs, psi, artss or all; comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    pub arm: Vec<String>,
    /// Shifted share of the unlabeled pool.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Number of seeds, counting up from --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs of the unlabeled phase.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub labeled_epochs: Option<usize>,
    /// Take a labeled step after every unlabeled batch (true or false).
    #[arg(long, action = clap::ArgAction::Set)]
    pub interleave_labeled: Option<bool>,
    /// Subset size for the rs arm.
    #[arg(long)]
    pub rs_size: Option<usize>,
    #[arg(long)]
    pub m_nn: Option<usize>,
    #[arg(long)]
    pub decisions: bool,
    /// JSON config: `{"task": {...}, "train": {...}, "arms": [...], "seeds": [...]}`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_arms(values: &[String]) -> Result<Vec<Arm>> {
    let mut arms = Vec::new();
    for v in values {
        if v.eq_ignore_ascii_case("all") {
            arms.extend(Arm::ALL);
        } else {
            arms.push(v.parse::<Arm>()?);
        }
    }
    arms.sort();
    arms.dedup();
    Ok(arms)
}

impl ToytrainArgs {
    pub fn resolve(&self) -> Result<ToyConfig> {
        let file = self.config.as_deref().map(config::read_file).transpose()?;
        config::check_keys(file.as_ref(), &["task", "train", "arms", "seeds", "decisions"])?;
        let mut c = config::layered(&ToyConfig::default(), file.as_ref(), None)?;
        if !self.arm.is_empty() {
            c.arms = parse_arms(&self.arm)?;
        }
        if self.seeds.is_some() || self.seed.is_some() {
            let start = self.seed.unwrap_or(0);
            let n = self.seeds.unwrap_or(1) as u64;
            c.seeds = (start..start + n).collect();
        }
        if let Some(r) = self.rho {
            c.task.rho = r;
        }
        if let Some(e) = self.epochs {
            c.train.epochs = e;
        }
        if let Some(e) = self.labeled_epochs {
            c.train.labeled_epochs = e;
        }
        if let Some(i) = self.interleave_labeled {
            c.train.interleave_labeled = i;
        }
        if let Some(n) = self.rs_size {
            c.train.rs_size = Some(n);
        }
        if let Some(m) = self.m_nn {
            c.train.m_nn = m;
        }
        c.decisions |= self.decisions;

        if c.arms.is_empty() || c.seeds.is_empty() {
            bail!("need at least one arm and one seed");
        }
        if c.arms.iter().all(|a| !a.uses_unlabeled()) {
            let ignored: Vec<&str> = [
                ("--rho", self.rho.is_some()),
                ("--rs-size", self.rs_size.is_some()),
                ("--m-nn", self.m_nn.is_some()),
                ("--decisions", self.decisions),
            ]
            .into_iter()
            .filter_map(|(f, set)| set.then_some(f))
            .collect();
            if !ignored.is_empty() {
                eprintln!("warning: the nossd arm never reads the unlabeled pool; ignoring {}", ignored.join(", "));
            }
        }
        c.task.validate()?;
        c.train.validate(c.task.n_unlabeled)?;
        Ok(c)
    }
}

pub fn run(c: &ToyConfig, out: &Path) -> Result<Outcome> {
    let full = c.arms.len() == Arm::ALL.len() && c.seeds.len() >= MIN_ABLATION_SEEDS;
    let result = if full {
        run_ablation(&c.task, &c.train, &c.seeds)?
    } else {
        run_toy(&c.task, &c.train, &c.seeds, &c.arms)?
    };

    let mut files = vec!["report.json".to_string(), "runs.csv".to_string(), "metrics.csv".to_string()];
    result.report.save_json(&out.join(&files[0]))?;
    result.report.table.save_csv(&out.join(&files[1]))?;
    result.metrics.save_csv(&out.join(&files[2]))?;
    if c.decisions {
        std::fs::create_dir_all(out.join("decisions"))?;
        for r in result.runs.iter().filter(|r| r.arm.uses_unlabeled()) {
            let name = format!("decisions/{}-seed{}.csv", r.arm, r.seed);
            save_decisions(&r.decisions, &out.join(&name))?;
            files.push(name);
        }
    }

    let medians: Vec<String> = c
        .arms
        .iter()
        .filter_map(|a| result.report.get_f64(&format!("median_mse_{a}")).map(|m| format!("{a}={m:.5}")))
        .collect();
    let mut summary = format!(
        "toytrain: {} arm(s) x {} seed(s), rho {}, median test MSE {}",
        c.arms.len(),
        c.seeds.len(),
        c.task.rho,
        medians.join(" ")
    );
    if let Some(ok) = result.report.get_bool("ordering_holds") {
        summary.push_str(&format!(", ordering {}", if ok { "holds" } else { "broken" }));
    }
    summary.push_str(&format!(" -> {}", out.display()));
    Ok(Outcome { files, summary })
}
