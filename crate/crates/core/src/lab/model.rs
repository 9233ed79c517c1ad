//! Fitted mixture-of-regressions models and their canonical parameter view.

use serde::{Deserialize, Serialize};

use super::generator::{normal_log_pdf, Component, Generator};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    GaussianRegressionMixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub components: usize,
    /// Whether the fitted family is smaller than the law generating the data.
    pub misspecified: bool,
}

impl ModelSpec {
    pub fn new(components: usize, misspecified: bool) -> Result<Self> {
        if components == 0 {
            return Err(Error::InvalidConfig("a model needs at least one component".into()));
        }
        Ok(Self {
            family: Family::GaussianRegressionMixture,
            components,
            misspecified,
        })
    }

    /// Free parameters of the joint model: weights on the simplex plus five
    /// per component.
    pub fn joint_params(&self) -> usize {
        6 * self.components - 1
    }

    pub fn marginal_params(&self) -> usize {
        3 * self.components - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    Supervised,
    Unsupervised,
    SemiSupervised { lambda: f64 },
}

/// Which coordinates of the canonical vector take part in a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamView {
    /// `[π, μ, ln v, β0, β1, ln τ²]` per component.
    Full,
    /// `[π, μ, ln v]` per component. Unsupervised fits only identify these.
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// Components in ascending order of input mean.
    pub components: Vec<Component>,
    pub regime: Regime,
    pub loglik_trace: Vec<f64>,
}

impl FittedModel {
    pub fn from_components(mut components: Vec<Component>, regime: Regime, loglik_trace: Vec<f64>) -> Self {
        components.sort_by(|a, b| a.x_mean.total_cmp(&b.x_mean));
        Self {
            components,
            regime,
            loglik_trace,
        }
    }

    /// The generator's own source law viewed as a model.
    pub fn from_generator(generator: &Generator) -> Self {
        Self::from_components(generator.components.clone(), Regime::Supervised, Vec::new())
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn canonical_vector(&self, view: ParamView) -> Vec<f64> {
        let mut v = Vec::with_capacity(6 * self.k());
        for c in &self.components {
            v.extend([c.weight, c.x_mean, c.x_var.ln()]);
            if view == ParamView::Full {
                v.extend([c.intercept, c.slope, c.noise_var.ln()]);
            }
        }
        v
    }

    /// Posterior-mean prediction `Σ r_k(x) (β_k0 + β_k1 x)` with gate weights
    /// from the input law.
    pub fn predict(&self, x: f64) -> f64 {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + normal_log_pdf(x, c.x_mean, c.x_var))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (c, l) in self.components.iter().zip(&logs) {
            let w = (l - max).exp();
            num += w * c.predict(x);
            den += w;
        }
        num / den
    }

    pub fn log_marginal(&self, x: f64) -> f64 {
        log_sum_exp(self.components.iter().map(|c| c.weight.ln() + normal_log_pdf(x, c.x_mean, c.x_var)))
    }

    pub fn log_joint(&self, x: f64, y: f64) -> f64 {
        log_sum_exp(self.components.iter().map(|c| {
            c.weight.ln() + normal_log_pdf(x, c.x_mean, c.x_var) + normal_log_pdf(y, c.predict(x), c.noise_var)
        }))
    }
}

pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Euclidean distance between canonical vectors.
pub fn param_distance(a: &FittedModel, b: &FittedModel, view: ParamView) -> Result<f64> {
    if a.k() != b.k() {
        return Err(Error::InvalidConfig(format!(
            "cannot compare a {}-component model with a {}-component model",
            a.k(),
            b.k()
        )));
    }
    Ok(euclidean(&a.canonical_vector(view), &b.canonical_vector(view)))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
