//! All arms across seeds, each (arm, seed) cell trained independently from
//! the seed's shared initialization.

use std::collections::BTreeMap;

use serde::Serialize;

use super::task::{make_toy_task, TaskConfig, ToyTask};
use super::train::{metrics_table, train_arm, Arm, ArmRun, TrainConfig};
use crate::error::{Error, Result};
use crate::lab::metrics::{iqr, median};
use crate::par::try_map;
use crate::report::{Cell, RunReport, Table};

pub const MIN_ABLATION_SEEDS: usize = 5;

#[derive(Debug, Clone, Serialize)]
struct ToyRunConfig<'a> {
    task: &'a TaskConfig,
    train: &'a TrainConfig,
    seeds: &'a [u64],
    arms: Vec<&'static str>,
}

pub struct AblationOutcome {
    /// Summary plus one row per (seed, arm) with final metrics.
    pub report: RunReport,
    /// Per-epoch metrics of every cell.
    pub metrics: Table,
    pub runs: Vec<ArmRun>,
}

/// The task for `seed`: the base task config with its seed replaced.
pub fn task_for_seed(task: &TaskConfig, seed: u64) -> Result<ToyTask> {
    make_toy_task(&TaskConfig { seed, ..task.clone() })
}

/// Trains `arms` on every seed. Cells run in parallel and are reduced in
/// (seed, arm) order.
pub fn run_toy(task: &TaskConfig, base: &TrainConfig, seeds: &[u64], arms: &[Arm]) -> Result<AblationOutcome> {
    if seeds.is_empty() || arms.is_empty() {
        return Err(Error::InvalidConfig("need at least one seed and one arm".into()));
    }
    task.validate()?;
    base.validate(task.n_unlabeled)?;
    let tasks = try_map(seeds, |&s| task_for_seed(task, s))?;
    let cells: Vec<(usize, Arm)> = (0..seeds.len()).flat_map(|i| arms.iter().map(move |&a| (i, a))).collect();
    let runs = try_map(&cells, |&(i, arm)| {
        let cfg = TrainConfig { arm, seed: seeds[i], ..base.clone() };
        train_arm(&tasks[i], &cfg)
    })?;

    let mut table = Table::new(&[
        "seed", "arm", "test_mse", "psnr", "unsup_updates", "accepted_source", "accepted_interference", "accepted_gain",
    ]);
    for r in &runs {
        table.push(vec![
            Cell::Text(r.seed.to_string()),
            r.arm.name().into(),
            r.evaluation.mse.into(),
            r.evaluation.psnr.into(),
            r.unsup_updates.into(),
            r.accepted_by_kind[0].into(),
            r.accepted_by_kind[1].into(),
            r.accepted_by_kind[2].into(),
        ]);
    }
    let config = ToyRunConfig {
        task,
        train: base,
        seeds,
        arms: arms.iter().map(|a| a.name()).collect(),
    };
    let mut report = RunReport::new("toytrain", seeds[0], &config, table)?;
    let mut med_mse = BTreeMap::new();
    let mut psnr_iqr = BTreeMap::new();
    let mut med_psnr = BTreeMap::new();
    for &arm in arms {
        let cell: Vec<&ArmRun> = runs.iter().filter(|r| r.arm == arm).collect();
        let mse: Vec<f64> = cell.iter().map(|r| r.evaluation.mse).collect();
        let psnr: Vec<f64> = cell.iter().map(|r| r.evaluation.psnr).collect();
        let a = arm.name();
        report.set(&format!("median_mse_{a}"), median(&mse));
        report.set(&format!("iqr_mse_{a}"), iqr(&mse));
        report.set(&format!("median_psnr_{a}"), median(&psnr));
        report.set(&format!("iqr_psnr_{a}"), iqr(&psnr));
        let kinds = cell.iter().fold([0usize; 3], |mut acc, r| {
            for (t, v) in acc.iter_mut().zip(r.accepted_by_kind) {
                *t += v;
            }
            acc
        });
        report.set(&format!("accepted_source_{a}"), kinds[0]);
        report.set(&format!("accepted_shifted_{a}"), kinds[1] + kinds[2]);
        med_mse.insert(arm, median(&mse));
        med_psnr.insert(arm, median(&psnr));
        psnr_iqr.insert(arm, iqr(&psnr));
    }
    if Arm::ALL.iter().all(|a| med_mse.contains_key(a)) {
        let m = |a: Arm| med_mse[&a];
        report.set(
            "ordering_holds",
            m(Arm::NoSsd) >= m(Arm::Nr) && m(Arm::Nr) >= m(Arm::Rs) && m(Arm::Rs) >= m(Arm::Psi) && m(Arm::Psi) >= m(Arm::Artss),
        );
        report.set("artss_gain_over_nr", 1.0 - m(Arm::Artss) / m(Arm::Nr));
    }
    if med_psnr.contains_key(&Arm::Nr) && med_psnr.contains_key(&Arm::Artss) {
        report.set("psnr_gap_artss_nr", med_psnr[&Arm::Artss] - med_psnr[&Arm::Nr]);
    }
    let mut metrics_rows = Vec::new();
    for r in &runs {
        metrics_rows.extend(r.epochs.iter().cloned());
    }
    Ok(AblationOutcome {
        report,
        metrics: metrics_table(&metrics_rows),
        runs,
    })
}

/// The five-arm comparison; needs at least [`MIN_ABLATION_SEEDS`] seeds.
pub fn run_ablation(task: &TaskConfig, base: &TrainConfig, seeds: &[u64]) -> Result<AblationOutcome> {
    if seeds.len() < MIN_ABLATION_SEEDS {
        return Err(Error::InvalidConfig(format!(
            "an ablation needs at least {MIN_ABLATION_SEEDS} seeds, got {}",
            seeds.len()
        )));
    }
    let mut out = run_toy(task, base, seeds, &Arm::ALL)?;
    out.report.kind = "ablation".into();
    Ok(out)
}
