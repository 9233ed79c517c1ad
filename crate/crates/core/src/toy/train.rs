//! Two-phase training: supervised epochs on the labeled pairs, then epochs
//! over the unlabeled pool where each batch passes through the arm's gate
//! before the pseudo-label loss is applied.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::model::{labeled_loss, pseudo_label_loss, Forward, ToyModel};
use super::task::{DrawKind, ToyTask};
use crate::error::{Error, Result};
use crate::latent::{nearest_neighbors, LatentVector, Pool, SampleRecord, SampleSet};
use crate::rejection::{compute_threshold, should_reject, RejectionDecision, ThresholdState};
use crate::report::{Cell, Table};
use crate::seed::{self, Rng};

/// Reported instead of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// Labeled data only.
    NoSsd,
    /// No rejection: every unlabeled sample is used.
    Nr,
    /// A fixed random subset of the pool.
    Rs,
    /// Reject when ψ falls below the mean labeled ψ; σ is ignored.
    Psi,
    /// The σ-weighted rejection rule.
    Artss,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::NoSsd, Arm::Nr, Arm::Rs, Arm::Psi, Arm::Artss];

    pub fn name(self) -> &'static str {
        match self {
            Arm::NoSsd => "nossd",
            Arm::Nr => "nr",
            Arm::Rs => "rs",
            Arm::Psi => "psi",
            Arm::Artss => "artss",
        }
    }

    pub fn uses_unlabeled(self) -> bool {
        self != Arm::NoSsd
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown arm `{s}` (expected nossd, nr, rs, psi or artss)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arm: Arm,
    pub labeled_epochs: usize,
    /// Epochs of the unlabeled phase.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub m_nn: usize,
    pub seed: u64,
    pub latent_dim: usize,
    /// Residual output, see [`ToyModel::residual`].
    pub residual: bool,
    /// Weight of the heteroscedastic term in the labeled loss.
    pub hetero_weight: f64,
    /// Take one labeled step after every unlabeled batch.
    pub interleave_labeled: bool,
    /// Subset size for the random-sampling arm; half the pool when unset.
    pub rs_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arm: Arm::Artss,
            labeled_epochs: 300,
            epochs: 40,
            batch_size: 10,
            learning_rate: 0.1,
            m_nn: 3,
            seed: 0,
            latent_dim: 16,
            residual: true,
            hetero_weight: 0.1,
            interleave_labeled: true,
            rs_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_unlabeled: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 || self.latent_dim == 0 || self.m_nn == 0 {
            return bad("batch size, latent dimension and m_nn must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive".into());
        }
        if !(self.hetero_weight >= 0.0 && self.hetero_weight.is_finite()) {
            return bad("heteroscedastic weight must be non-negative".into());
        }
        if let Some(n) = self.rs_size {
            if n > n_unlabeled {
                return bad(format!("rs subset of {n} exceeds the pool of {n_unlabeled}"));
            }
        }
        Ok(())
    }

    pub fn rs_size_for(&self, n_unlabeled: usize) -> usize {
        self.rs_size.unwrap_or(n_unlabeled / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mse: f64,
    pub psnr: f64,
}

pub fn psnr(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

/// Test MSE of an arbitrary predictor on the held-out split.
pub fn evaluate_with(task: &ToyTask, predict: impl Fn(&[f64]) -> Vec<f64>) -> Evaluation {
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in task.test_x.iter().zip(&task.test_y) {
        let p = predict(x);
        total += p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += y.len();
    }
    let mse = total / count as f64;
    Evaluation { mse, psnr: psnr(mse, task.peak()) }
}

pub fn evaluate(model: &ToyModel, task: &ToyTask) -> Evaluation {
    evaluate_with(task, |x| model.predict(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub arm: Arm,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub accepted_count: usize,
    pub rejected_count: usize,
    pub threshold: f64,
    pub test_mse: f64,
    pub psnr: f64,
}

pub const METRICS_COLUMNS: [&str; 9] =
    ["arm", "seed", "epoch", "train_loss", "accepted_count", "rejected_count", "T", "test_mse", "psnr"];

pub fn metrics_table(rows: &[EpochMetrics]) -> Table {
    let mut t = Table::new(&METRICS_COLUMNS);
    for r in rows {
        t.push(vec![
            r.arm.name().into(),
            Cell::Text(r.seed.to_string()),
            r.epoch.into(),
            r.train_loss.into(),
            r.accepted_count.into(),
            r.rejected_count.into(),
            r.threshold.into(),
            r.test_mse.into(),
            r.psnr.into(),
        ]);
    }
    t
}

/// Labeled latents, σ and outputs under the current model.
pub struct LabeledView {
    pub set: SampleSet,
    pub outputs: Vec<Vec<f64>>,
}

pub fn labeled_view(model: &ToyModel, task: &ToyTask) -> Result<LabeledView> {
    let mut records = Vec::with_capacity(task.labeled_x.len());
    let mut outputs = Vec::with_capacity(task.labeled_x.len());
    for (i, x) in task.labeled_x.iter().enumerate() {
        let f = model.forward(x);
        records.push(record(format!("l{i:05}"), &f, Pool::Labeled)?);
        outputs.push(f.y_hat);
    }
    Ok(LabeledView { set: SampleSet::new(records)?, outputs })
}

fn record(id: String, f: &Forward, pool: Pool) -> Result<SampleRecord> {
    let z = LatentVector::new(f.z.clone()).map_err(|_| Error::ZeroVector(id.clone()))?;
    SampleRecord::new(id, z, f.sigma(), pool)
}

/// Threshold for `epoch` from the labeled latents and σ of the current model.
pub fn threshold_state(model: &ToyModel, task: &ToyTask, m_nn: usize, epoch: u64) -> Result<ThresholdState> {
    compute_threshold(&labeled_view(model, task)?.set, m_nn, epoch)
}

/// Mean combined labeled loss over the whole labeled split.
pub fn labeled_objective(model: &ToyModel, task: &ToyTask, config: &TrainConfig) -> f64 {
    let xs: Vec<&[f64]> = task.labeled_x.iter().map(|v| v.as_slice()).collect();
    let ys: Vec<&[f64]> = task.labeled_y.iter().map(|v| v.as_slice()).collect();
    labeled_loss(model, &xs, &ys, config.hetero_weight, xs.len() as f64, None)
}

fn labeled_step(model: &mut ToyModel, task: &ToyTask, idx: &[usize], config: &TrainConfig) -> Result<f64> {
    let xs: Vec<&[f64]> = idx.iter().map(|&i| task.labeled_x[i].as_slice()).collect();
    let ys: Vec<&[f64]> = idx.iter().map(|&i| task.labeled_y[i].as_slice()).collect();
    let mut grad = vec![0.0; model.n_params()];
    let loss = labeled_loss(model, &xs, &ys, config.hetero_weight, idx.len() as f64, Some(&mut grad));
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(model.step));
    }
    model.apply_step(&grad, config.learning_rate)?;
    Ok(loss)
}

/// Supervised epochs, then the labeled statistics and threshold the
/// unlabeled phase starts from.
pub fn train_labeled_phase(mut model: ToyModel, task: &ToyTask, config: &TrainConfig) -> Result<(ToyModel, ThresholdState)> {
    if task.labeled_x.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut rng = seed::stream(config.seed, "toy.labeled-order");
    let mut order: Vec<usize> = (0..task.labeled_x.len()).collect();
    for _ in 0..config.labeled_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            labeled_step(&mut model, task, batch, config)?;
        }
        model.epoch += 1;
    }
    let state = threshold_state(&model, task, config.m_nn, 0)?;
    Ok((model, state))
}

/// Cycles through shuffled labeled indices, reshuffling at each wrap.
struct LabeledCycle {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl LabeledCycle {
    fn new(n: usize, rng: Rng) -> Self {
        Self { order: (0..n).collect(), pos: n, rng }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct UnlabeledOutcome {
    pub model: ToyModel,
    pub epochs: Vec<EpochMetrics>,
    /// One decision per (sample, iteration), in iteration order.
    pub decisions: Vec<RejectionDecision>,
    /// Accepted (sample, iteration) pairs, i.e. per-sample pseudo-label
    /// gradient contributions.
    pub unsup_updates: usize,
    /// Accepted pairs by draw kind: source, interference, gain.
    pub accepted_by_kind: [usize; 3],
}

pub fn train_unlabeled_phase(
    mut model: ToyModel,
    task: &ToyTask,
    config: &TrainConfig,
    state: ThresholdState,
) -> Result<UnlabeledOutcome> {
    let n_u = task.unlabeled_x.len();
    config.validate(n_u)?;
    let mut order_rng = seed::stream(config.seed, "toy.unlabeled-order");
    let mut cycle = LabeledCycle::new(task.labeled_x.len(), seed::stream(config.seed, "toy.interleave"));
    let rs_member = {
        let mut m = vec![false; n_u];
        if config.arm == Arm::Rs {
            let k = config.rs_size_for(n_u);
            for i in index::sample(&mut seed::stream(config.seed, "toy.rs"), n_u, k) {
                m[i] = true;
            }
        }
        m
    };

    let mut state = state;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut decisions = Vec::new();
    let mut unsup_updates = 0;
    let mut accepted_by_kind = [0usize; 3];
    let mut order: Vec<usize> = (0..n_u).collect();

    for epoch in 1..=config.epochs {
        if epoch > 1 {
            state = threshold_state(&model, task, config.m_nn, epoch as u64)?;
        } else {
            state.epoch = 1;
        }
        let mean_psi = state.mean_psi();
        let (mut accepted_count, mut rejected_count) = (0, 0);
        order.shuffle(&mut order_rng);
        for batch in order.chunks(config.batch_size) {
            let view = labeled_view(&model, task)?;
            let sigma_l: Vec<f64> = view.set.iter().map(|r| r.sigma).collect();
            let mut xs: Vec<&[f64]> = Vec::new();
            let mut targets: Vec<Vec<f64>> = Vec::new();
            for &i in batch {
                let x = task.unlabeled_x[i].as_slice();
                let f = model.forward(x);
                let id = format!("u{i:05}");
                let z = LatentVector::new(f.z.clone()).map_err(|_| Error::ZeroVector(id.clone()))?;
                let neighbors = nearest_neighbors(&z, &view.set, state.m_nn, None)?;
                let psi = (neighbors.iter().map(|n| n.similarity).sum::<f64>() / neighbors.len() as f64).clamp(-1.0, 1.0);
                let sigma = f.sigma();
                let mut d = should_reject(&id, psi, sigma, &state);
                match config.arm {
                    Arm::NoSsd => d.accepted = false,
                    Arm::Nr => d.accepted = true,
                    Arm::Rs => d.accepted = rs_member[i],
                    Arm::Psi => {
                        d.score = psi;
                        d.threshold = mean_psi;
                        d.accepted = psi >= mean_psi;
                    }
                    Arm::Artss => {}
                }
                if d.accepted {
                    accepted_count += 1;
                    accepted_by_kind[kind_index(task.unlabeled_kind[i])] += 1;
                    targets.push(pseudo_target(&view.outputs, &sigma_l, neighbors.iter().map(|n| n.index)));
                    xs.push(x);
                } else {
                    rejected_count += 1;
                }
                decisions.push(d);
            }
            if !xs.is_empty() {
                let t: Vec<&[f64]> = targets.iter().map(|v| v.as_slice()).collect();
                let mut grad = vec![0.0; model.n_params()];
                let loss = pseudo_label_loss(&model, &xs, &t, config.batch_size as f64, Some(&mut grad));
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss(model.step));
                }
                model.apply_step(&grad, config.learning_rate)?;
                unsup_updates += xs.len();
            }
            if config.interleave_labeled {
                let idx = cycle.next_batch(config.batch_size);
                labeled_step(&mut model, task, &idx, config)?;
            }
        }
        model.epoch += 1;
        let eval = evaluate(&model, task);
        epochs.push(EpochMetrics {
            arm: config.arm,
            seed: config.seed,
            epoch,
            train_loss: labeled_objective(&model, task, config),
            accepted_count,
            rejected_count,
            threshold: if config.arm == Arm::Psi { mean_psi } else { state.t },
            test_mse: eval.mse,
            psnr: eval.psnr,
        });
    }
    Ok(UnlabeledOutcome {
        model,
        epochs,
        decisions,
        unsup_updates,
        accepted_by_kind,
    })
}

fn kind_index(k: DrawKind) -> usize {
    match k {
        DrawKind::Source => 0,
        DrawKind::Interference => 1,
        DrawKind::Gain => 2,
    }
}

/// σ-weighted mean of the labeled outputs at `neighbors`, weights `1/σ`.
pub fn pseudo_target(outputs: &[Vec<f64>], sigma: &[f64], neighbors: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut acc = vec![0.0; outputs.first().map_or(0, Vec::len)];
    let mut total = 0.0;
    for k in neighbors {
        let w = 1.0 / sigma[k];
        total += w;
        for (a, v) in acc.iter_mut().zip(&outputs[k]) {
            *a += w * v;
        }
    }
    if total > 0.0 {
        for a in acc.iter_mut() {
            *a /= total;
        }
    }
    acc
}

/// Pseudo-label loss of `xs` against targets from their nearest labeled
/// neighbors under the current model. Zero for an empty batch.
pub fn unsup_loss(model: &ToyModel, task: &ToyTask, xs: &[Vec<f64>], m_nn: usize) -> Result<f64> {
    if xs.is_empty() {
        return Ok(0.0);
    }
    let view = labeled_view(model, task)?;
    let sigma_l: Vec<f64> = view.set.iter().map(|r| r.sigma).collect();
    let mut targets = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        let f = model.forward(x);
        let z = LatentVector::new(f.z).map_err(|_| Error::ZeroVector(format!("batch[{i}]")))?;
        let neighbors = nearest_neighbors(&z, &view.set, m_nn.min(view.set.len()), None)?;
        targets.push(pseudo_target(&view.outputs, &sigma_l, neighbors.iter().map(|n| n.index)));
    }
    let xr: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
    let tr: Vec<&[f64]> = targets.iter().map(|v| v.as_slice()).collect();
    Ok(pseudo_label_loss(model, &xr, &tr, xs.len() as f64, None))
}

#[derive(Debug, Clone)]
pub struct ArmRun {
    pub arm: Arm,
    pub seed: u64,
    pub model: ToyModel,
    /// Epoch 0 is the end of the labeled phase.
    pub epochs: Vec<EpochMetrics>,
    pub decisions: Vec<RejectionDecision>,
    pub unsup_updates: usize,
    pub accepted_by_kind: [usize; 3],
    pub evaluation: Evaluation,
}

/// Both phases for one arm from the seed's shared initialization.
pub fn train_arm(task: &ToyTask, config: &TrainConfig) -> Result<ArmRun> {
    config.validate(task.unlabeled_x.len())?;
    let init = ToyModel::init(task.signal_dim(), config.latent_dim, config.residual, &mut seed::stream(config.seed, "toy.init"));
    let (model, state) = train_labeled_phase(init, task, config)?;
    let eval0 = evaluate(&model, task);
    let mut epochs = vec![EpochMetrics {
        arm: config.arm,
        seed: config.seed,
        epoch: 0,
        train_loss: labeled_objective(&model, task, config),
        accepted_count: 0,
        rejected_count: 0,
        threshold: state.t,
        test_mse: eval0.mse,
        psnr: eval0.psnr,
    }];
    let out = train_unlabeled_phase(model, task, config, state)?;
    epochs.extend(out.epochs);
    let evaluation = evaluate(&out.model, task);
    Ok(ArmRun {
        arm: config.arm,
        seed: config.seed,
        model: out.model,
        epochs,
        decisions: out.decisions,
        unsup_updates: out.unsup_updates,
        accepted_by_kind: out.accepted_by_kind,
        evaluation,
    })
}
