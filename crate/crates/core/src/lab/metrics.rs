//! Errors, divergences and summary statistics for fitted models.

use serde::{Deserialize, Serialize};

use super::generator::{Domain, Generator};
use super::model::{FittedModel, ParamView};
use crate::error::{Error, Result};
use crate::seed;

/// Monte-Carlo mean squared prediction error on fresh source-law draws.
pub fn regression_error(model: &FittedModel, generator: &Generator, n_eval: usize, eval_seed: u64) -> f64 {
    let points = generator.sample(Domain::Source, n_eval, &mut seed::stream(eval_seed, "lab.eval"));
    squared_error(model, &points)
}

pub fn squared_error(model: &FittedModel, points: &[super::generator::LabeledPoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().map(|p| (p.y - model.predict(p.x)).powi(2)).sum::<f64>() / points.len() as f64
}

/// The lowest achievable squared error under the source law,
/// `E[Var(y | x)]`, by quadrature over x.
pub fn irreducible_error(generator: &Generator) -> f64 {
    let comps = &generator.components;
    let lo = comps.iter().map(|c| c.x_mean - 12.0 * c.x_var.sqrt()).fold(f64::INFINITY, f64::min);
    let hi = comps.iter().map(|c| c.x_mean + 12.0 * c.x_var.sqrt()).fold(f64::NEG_INFINITY, f64::max);
    let steps = 200_000;
    let h = (hi - lo) / steps as f64;
    let mut total = 0.0;
    for i in 0..=steps {
        let x = lo + i as f64 * h;
        let dens: Vec<f64> = comps
            .iter()
            .map(|c| c.weight * super::generator::normal_pdf(x, c.x_mean, c.x_var))
            .collect();
        let px: f64 = dens.iter().sum();
        if px <= 0.0 {
            continue;
        }
        let mean: f64 = comps.iter().zip(&dens).map(|(c, d)| d * c.predict(x)).sum::<f64>() / px;
        let second: f64 = comps
            .iter()
            .zip(&dens)
            .map(|(c, d)| d * (c.noise_var + c.predict(x).powi(2)))
            .sum::<f64>()
            / px;
        let edge = if i == 0 || i == steps { 0.5 } else { 1.0 };
        total += edge * h * px * (second - mean * mean);
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub value: f64,
    /// Zero for closed-form values.
    pub std_error: f64,
}

/// `KL(p ‖ q)` between joint densities over (x, y). Single-component pairs
/// use the closed form; mixtures a seeded Monte-Carlo average of
/// `log p - log q` over `n_mc` draws from `p`.
pub fn kl_divergence(p: &FittedModel, q: &FittedModel, n_mc: usize, mc_seed: u64) -> KlEstimate {
    if p.k() == 1 && q.k() == 1 {
        return KlEstimate {
            value: gaussian_joint_kl(p, q),
            std_error: 0.0,
        };
    }
    if p == q || n_mc == 0 {
        return KlEstimate { value: 0.0, std_error: 0.0 };
    }
    let sampler = Generator {
        components: p.components.clone(),
        shift: 0.0,
        shifted_component: 0,
    };
    let draws = sampler.sample(Domain::Source, n_mc, &mut seed::stream(mc_seed, "lab.kl"));
    let terms: Vec<f64> = draws.iter().map(|d| p.log_joint(d.x, d.y) - q.log_joint(d.x, d.y)).collect();
    let n = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    KlEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    }
}

/// Closed form for single-component models: the x-marginal KL plus the
/// expected conditional KL of y given x under p.
fn gaussian_joint_kl(p: &FittedModel, q: &FittedModel) -> f64 {
    let (a, b) = (p.components[0], q.components[0]);
    let gauss = |var_p: f64, var_q: f64| {
        let r = var_p / var_q;
        0.5 * (r - 1.0 - r.ln())
    };
    let kl_x = gauss(a.x_var, b.x_var) + (a.x_mean - b.x_mean).powi(2) / (2.0 * b.x_var);
    // E_p[((Δβ0) + (Δβ1) x)²] = (Δβ0 + Δβ1 μ)² + Δβ1² v.
    let d0 = a.intercept - b.intercept;
    let d1 = a.slope - b.slope;
    let mean_sq = (d0 + d1 * a.x_mean).powi(2) + d1 * d1 * a.x_var;
    kl_x + gauss(a.noise_var, b.noise_var) + mean_sq / (2.0 * b.noise_var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseDecomposition {
    pub bias_sq: f64,
    pub variance: f64,
    pub mse: f64,
}

/// Squared bias and variance of the canonical parameter vector across fits
/// against `theta_ref`. Variance uses the population (1/n) normalization so
/// that `bias_sq + variance` equals the mean squared error.
pub fn mse_decomposition(fits: &[FittedModel], theta_ref: &[f64], view: ParamView) -> Result<MseDecomposition> {
    if fits.len() < 2 {
        return Err(Error::TooFewFits(fits.len()));
    }
    let vectors: Vec<Vec<f64>> = fits.iter().map(|f| f.canonical_vector(view)).collect();
    decompose(&vectors, theta_ref)
}

pub fn decompose(vectors: &[Vec<f64>], theta_ref: &[f64]) -> Result<MseDecomposition> {
    if vectors.len() < 2 {
        return Err(Error::TooFewFits(vectors.len()));
    }
    let d = theta_ref.len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            line: None,
            expected: d,
            found: v.len(),
        });
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n;
        }
    }
    let bias_sq: f64 = mean.iter().zip(theta_ref).map(|(m, t)| (m - t).powi(2)).sum();
    let variance: f64 = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    let mse: f64 = vectors
        .iter()
        .map(|v| v.iter().zip(theta_ref).map(|(x, t)| (x - t).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    Ok(MseDecomposition { bias_sq, variance, mse })
}

/// Wilson score interval at 95% for `successes` out of `n`.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let denom = 1.0 + z * z / n_f;
    let center = (p + z * z / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Linear-interpolated quantile of unsorted data (`q` in [0, 1]).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn iqr(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
