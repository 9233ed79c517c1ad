//! Expectation-maximization for the mixture of linear regressions under the
//! convex-combination likelihood
//! `λ·E_l[log f(x, y)] + (1 - λ)·E_u[log f(x)]`, `λ = N_l / (N_l + N_u)`.
//!
//! With that λ every observation carries the same weight `1/N`, so the
//! objective is the mean log-likelihood over labeled joint and unlabeled
//! marginal terms. Supervised and unsupervised fits are its two endpoints.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::generator::{normal_log_pdf, Component, LabeledPoint};
use super::model::{FittedModel, ModelSpec, Regime};
use crate::error::{Error, Result};
use crate::seed;

/// Variances below this count as a collapsed component.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// A component's regression block is only refit when its labeled
/// responsibilities amount to at least this many effective points.
/// Fewer would let a line pass exactly through two points and drive the
/// noise variance to zero.
pub const MIN_REGRESSION_ESS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative objective change that counts as converged.
    pub tol: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iter: 500,
            tol: 1e-10,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

pub fn supervised_mle(labeled: &[LabeledPoint], spec: &ModelSpec, config: &EmConfig) -> Result<FittedModel> {
    if labeled.len() < spec.joint_params() {
        return Err(Error::InvalidConfig(format!(
            "{} labeled points cannot identify {} free parameters",
            labeled.len(),
            spec.joint_params()
        )));
    }
    semi_supervised_mle(labeled, &[], spec, config)
}

pub fn unsupervised_mle(unlabeled: &[f64], spec: &ModelSpec, config: &EmConfig) -> Result<FittedModel> {
    if unlabeled.len() < spec.marginal_params() {
        return Err(Error::InvalidConfig(format!(
            "{} unlabeled points cannot identify {} free parameters",
            unlabeled.len(),
            spec.marginal_params()
        )));
    }
    semi_supervised_mle(&[], unlabeled, spec, config)
}

pub fn semi_supervised_mle(
    labeled: &[LabeledPoint],
    unlabeled: &[f64],
    spec: &ModelSpec,
    config: &EmConfig,
) -> Result<FittedModel> {
    let n = labeled.len() + unlabeled.len();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if labeled.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) || unlabeled.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("non-finite observation".into()));
    }
    let lambda = labeled.len() as f64 / n as f64;
    let regime = if unlabeled.is_empty() {
        Regime::Supervised
    } else if labeled.is_empty() {
        Regime::Unsupervised
    } else {
        Regime::SemiSupervised { lambda }
    };

    // Sorting makes every accumulation order independent of the input order.
    let mut lab = labeled.to_vec();
    lab.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let mut unl = unlabeled.to_vec();
    unl.sort_by(f64::total_cmp);
    let data = Data { lab, unl };

    let restarts = if spec.components == 1 { 1 } else { config.restarts.max(1) };
    let mut best: Option<(Vec<Component>, Vec<f64>)> = None;
    for r in 0..restarts {
        let mut rng = seed::stream(seed::derive(config.seed, "em.restart", r as u64), "em.init");
        let Some(init) = initialize(&data, spec.components, &mut rng) else {
            continue;
        };
        let Ok((comps, trace)) = run_em(&data, init, config) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((_, t)) => trace.last() > t.last(),
        };
        if better {
            best = Some((comps, trace));
        }
    }
    let (comps, trace) = best.ok_or(Error::DegenerateComponent)?;
    Ok(FittedModel::from_components(comps, regime, trace))
}

struct Data {
    lab: Vec<LabeledPoint>,
    unl: Vec<f64>,
}

impl Data {
    fn n(&self) -> usize {
        self.lab.len() + self.unl.len()
    }

    fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        self.lab.iter().map(|p| p.x).chain(self.unl.iter().copied())
    }
}

/// k-means++ seeding and Lloyd refinement on all inputs, then per-cluster
/// moments and least squares. `None` when a cluster ends up degenerate.
fn initialize(data: &Data, k: usize, rng: &mut seed::Rng) -> Option<Vec<Component>> {
    let xs: Vec<f64> = data.xs().collect();
    let n = xs.len();
    let mut centers = vec![xs[rng.random_range(0..n)]];
    while centers.len() < k {
        let d2: Vec<f64> = xs
            .iter()
            .map(|x| centers.iter().map(|c| (x - c).powi(2)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, d) in d2.iter().enumerate() {
            if u < *d {
                pick = i;
                break;
            }
            u -= d;
        }
        centers.push(xs[pick]);
    }
    let mut assign = vec![0usize; n];
    for _ in 0..50 {
        let mut changed = false;
        for (i, x) in xs.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| (x - centers[a]).abs().total_cmp(&(x - centers[b]).abs()))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<f64> = xs.iter().zip(&assign).filter(|(_, a)| **a == j).map(|(x, _)| *x).collect();
            if !members.is_empty() {
                *c = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }

    let global_line = (data.lab.len() >= 2).then(|| line_fit(&data.lab, &vec![1.0; data.lab.len()])).flatten();
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let members: Vec<f64> = xs.iter().zip(&assign).filter(|(_, a)| **a == j).map(|(x, _)| *x).collect();
        if members.len() < 2 {
            return None;
        }
        let m = members.len() as f64;
        let x_mean = members.iter().sum::<f64>() / m;
        let x_var = members.iter().map(|x| (x - x_mean).powi(2)).sum::<f64>() / m;
        if x_var < VARIANCE_FLOOR {
            return None;
        }
        let lab_w: Vec<f64> = assign[..data.lab.len()].iter().map(|a| if *a == j { 1.0 } else { 0.0 }).collect();
        let (intercept, slope, noise_var) = match line_fit(&data.lab, &lab_w).filter(|_| ess(&lab_w) >= MIN_REGRESSION_ESS) {
            Some(fit) => fit,
            None => global_line.unwrap_or((0.0, 0.0, 1.0)),
        };
        comps.push(Component {
            weight: m / n as f64,
            x_mean,
            x_var,
            intercept,
            slope,
            noise_var: noise_var.max(1e-6),
        });
    }
    Some(comps)
}

/// Kish effective sample size of a weight vector.
fn ess(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Weighted least-squares line with its weighted residual variance.
fn line_fit(points: &[LabeledPoint], w: &[f64]) -> Option<(f64, f64, f64)> {
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        return None;
    }
    let mx = points.iter().zip(w).map(|(p, w)| w * p.x).sum::<f64>() / sw;
    let my = points.iter().zip(w).map(|(p, w)| w * p.y).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(w).map(|(p, w)| w * (p.x - mx).powi(2)).sum();
    let sxy: f64 = points.iter().zip(w).map(|(p, w)| w * (p.x - mx) * (p.y - my)).sum();
    if sxx <= 1e-12 * sw {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let var = points
        .iter()
        .zip(w)
        .map(|(p, w)| w * (p.y - intercept - slope * p.x).powi(2))
        .sum::<f64>()
        / sw;
    Some((intercept, slope, var))
}

/// Runs EM from `comps`, returning the final parameters and the objective
/// trace whose last entry belongs to those parameters.
fn run_em(data: &Data, mut comps: Vec<Component>, config: &EmConfig) -> Result<(Vec<Component>, Vec<f64>)> {
    let k = comps.len();
    let n_lab = data.lab.len();
    let w = 1.0 / data.n() as f64;
    let mut resp = vec![0.0; data.n() * k];
    let mut trace: Vec<f64> = Vec::new();
    let mut logs = vec![0.0; k];
    for _ in 0..=config.max_iter {
        // E-step.
        let consts: Vec<(f64, f64, f64)> = comps
            .iter()
            .map(|c| (c.weight.ln(), c.x_var, c.noise_var))
            .collect();
        let mut objective = 0.0;
        for (i, x) in data.xs().enumerate() {
            for (j, c) in comps.iter().enumerate() {
                let (lw, xv, nv) = consts[j];
                logs[j] = lw + normal_log_pdf(x, c.x_mean, xv);
                if i < n_lab {
                    logs[j] += normal_log_pdf(data.lab[i].y, c.predict(x), nv);
                }
            }
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
            let lse = max + sum.ln();
            objective += w * lse;
            for j in 0..k {
                resp[i * k + j] = (logs[j] - lse).exp();
            }
        }
        if !objective.is_finite() {
            return Err(Error::NonFiniteLoss(trace.len()));
        }
        if let Some(prev) = trace.last() {
            if objective - prev < config.tol * prev.abs().max(1.0) {
                trace.push(objective);
                break;
            }
        }
        trace.push(objective);
        if trace.len() > config.max_iter {
            break;
        }

        // M-step.
        for (j, c) in comps.iter_mut().enumerate() {
            let r = |i: usize| resp[i * k + j];
            let nk: f64 = (0..data.n()).map(|i| w * r(i)).sum();
            if nk < 1e-12 {
                return Err(Error::DegenerateComponent);
            }
            let x_mean = data.xs().enumerate().map(|(i, x)| w * r(i) * x).sum::<f64>() / nk;
            let x_var = data.xs().enumerate().map(|(i, x)| w * r(i) * (x - x_mean).powi(2)).sum::<f64>() / nk;
            if x_var < VARIANCE_FLOOR {
                return Err(Error::DegenerateComponent);
            }
            c.weight = nk;
            c.x_mean = x_mean;
            c.x_var = x_var;
            if n_lab > 0 {
                let lw: Vec<f64> = (0..n_lab).map(r).collect();
                if ess(&lw) >= MIN_REGRESSION_ESS {
                    if let Some((a, b, v)) = line_fit(&data.lab, &lw) {
                        if v < VARIANCE_FLOOR {
                            return Err(Error::DegenerateComponent);
                        }
                        c.intercept = a;
                        c.slope = b;
                        c.noise_var = v;
                    }
                }
            }
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        for c in &mut comps {
            c.weight /= total;
        }
    }
    Ok((comps, trace))
}
