//! Bottleneck denoiser: `z = tanh(W_e x + b_e)`, `ŷ = W_d z + b_d` (or
//! `ŷ = x - W_d z - b_d` in residual mode), and a σ head whose log-variance is affine in the log energy of what the model
//! removes from its input, `s = a·ln(|x - ŷ|²/n + ε) + c`.
//!
//! All parameters live in one flat vector so that SGD steps and finite
//! difference checks need no per-layer plumbing.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::uncertainty::{min_log_variance, sample_nll};

/// Keeps the log-energy feature finite on a perfect reconstruction.
pub const ENERGY_EPS: f64 = 1e-3;

const MAX_LOG_VARIANCE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub signal_dim: usize,
    pub latent_dim: usize,
    /// Output `x - decoder(z)`: the decoder predicts the degradation.
    pub residual: bool,
    pub params: Vec<f64>,
    pub epoch: usize,
    pub step: usize,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub z: Vec<f64>,
    pub y_hat: Vec<f64>,
    /// Log-energy feature fed to the σ head.
    pub energy: f64,
    /// Log-variance before clamping.
    pub raw_log_var: f64,
    pub log_var: f64,
}

impl Forward {
    pub fn sigma(&self) -> f64 {
        (0.5 * self.log_var).exp()
    }
}

impl ToyModel {
    /// Small random encoder and decoder, σ head at `s = 0`.
    pub fn init(signal_dim: usize, latent_dim: usize, residual: bool, rng: &mut Rng) -> Self {
        let mut m = Self {
            signal_dim,
            latent_dim,
            residual,
            params: vec![0.0; Self::n_params_for(signal_dim, latent_dim)],
            epoch: 0,
            step: 0,
        };
        let (n, d) = (signal_dim as f64, latent_dim as f64);
        let enc = 1.0 / n.sqrt();
        let dec = 0.1 / d.sqrt();
        let (a, b) = (m.off_we(), m.off_be());
        for v in m.params[a..b].iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v = enc * e;
        }
        let (a, b) = (m.off_wd(), m.off_bd());
        for v in m.params[a..b].iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v = dec * e;
        }
        m
    }

    pub fn n_params_for(n: usize, d: usize) -> usize {
        d * n + d + n * d + n + 2
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn off_we(&self) -> usize {
        0
    }
    fn off_be(&self) -> usize {
        self.latent_dim * self.signal_dim
    }
    fn off_wd(&self) -> usize {
        self.off_be() + self.latent_dim
    }
    fn off_bd(&self) -> usize {
        self.off_wd() + self.signal_dim * self.latent_dim
    }
    fn off_head(&self) -> usize {
        self.off_bd() + self.signal_dim
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        let (n, d) = (self.signal_dim, self.latent_dim);
        let p = &self.params;
        let (we, be, wd, bd) = (self.off_we(), self.off_be(), self.off_wd(), self.off_bd());
        let z: Vec<f64> = (0..d)
            .map(|k| {
                let row = &p[we + k * n..we + (k + 1) * n];
                (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[be + k]).tanh()
            })
            .collect();
        let y_hat: Vec<f64> = (0..n)
            .map(|j| {
                let row = &p[wd + j * d..wd + (j + 1) * d];
                let h = row.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + p[bd + j];
                if self.residual {
                    x[j] - h
                } else {
                    h
                }
            })
            .collect();
        let removed = x.iter().zip(&y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
        let energy = (removed + ENERGY_EPS).ln();
        let h = self.off_head();
        let raw_log_var = p[h] * energy + p[h + 1];
        Forward {
            log_var: raw_log_var.clamp(min_log_variance(), MAX_LOG_VARIANCE),
            z,
            y_hat,
            energy,
            raw_log_var,
        }
    }

    /// Accumulates into `grad` the gradient of a loss whose partials at this
    /// forward pass are `d_y_hat` (w.r.t. ŷ) and `d_log_var` (w.r.t. s).
    pub fn backward(&self, x: &[f64], f: &Forward, d_y_hat: &[f64], d_log_var: f64, grad: &mut [f64]) {
        let (n, d) = (self.signal_dim, self.latent_dim);
        let p = &self.params;
        let (we, be, wd, bd, h) = (self.off_we(), self.off_be(), self.off_wd(), self.off_bd(), self.off_head());

        let mut dy = d_y_hat.to_vec();
        let clamped = f.raw_log_var < min_log_variance() || f.raw_log_var > MAX_LOG_VARIANCE;
        if d_log_var != 0.0 && !clamped {
            grad[h] += d_log_var * f.energy;
            grad[h + 1] += d_log_var;
            // s depends on ŷ through the energy feature.
            let removed = (f.energy).exp();
            let k = d_log_var * p[h] / removed * (-2.0 / n as f64);
            for ((g, a), b) in dy.iter_mut().zip(x).zip(&f.y_hat) {
                *g += k * (a - b);
            }
        }

        if self.residual {
            for g in dy.iter_mut() {
                *g = -*g;
            }
        }
        let mut dz = vec![0.0; d];
        for j in 0..n {
            let g = dy[j];
            if g == 0.0 {
                continue;
            }
            grad[bd + j] += g;
            for k in 0..d {
                grad[wd + j * d + k] += g * f.z[k];
                dz[k] += g * p[wd + j * d + k];
            }
        }
        for k in 0..d {
            let dh = dz[k] * (1.0 - f.z[k] * f.z[k]);
            if dh == 0.0 {
                continue;
            }
            grad[be + k] += dh;
            for (g, v) in grad[we + k * n..we + (k + 1) * n].iter_mut().zip(x) {
                *g += dh * v;
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).y_hat
    }

    pub fn apply_step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        self.step += 1;
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteLoss(self.step))
        }
    }
}

/// Labeled loss per pair: `|ŷ - y|²/n + w·nll(|ŷ - y|², s)/n`, where `nll`
/// is the heteroscedastic term. Returns the batch mean and accumulates its
/// gradient (scaled by `1/scale`) into `grad`.
pub fn labeled_loss(
    model: &ToyModel,
    xs: &[&[f64]],
    ys: &[&[f64]],
    hetero_weight: f64,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let n = model.signal_dim;
    let nf = n as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for (x, y) in xs.iter().zip(ys) {
        let f = model.forward(x);
        let r2: f64 = f.y_hat.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let (nll, d_s) = sample_nll(r2, n, f.log_var);
        total += r2 / nf + hetero_weight * nll / nf;
        if let Some(g) = grad.as_deref_mut() {
            // d/dŷ of r2 is 2(ŷ - y); the NLL term carries 1/(2σ²) on r2.
            let coef = (1.0 + hetero_weight * 0.5 * (-f.log_var).exp()) * 2.0 / (nf * scale);
            let d_y: Vec<f64> = f.y_hat.iter().zip(y.iter()).map(|(a, b)| coef * (a - b)).collect();
            model.backward(x, &f, &d_y, hetero_weight * d_s / (nf * scale), g);
        }
    }
    total / scale
}

/// Pseudo-label loss: mean over samples of `|ŷ - target|²/n`, targets held
/// fixed. Gradient scaled by `1/scale` as in [`labeled_loss`].
pub fn pseudo_label_loss(
    model: &ToyModel,
    xs: &[&[f64]],
    targets: &[&[f64]],
    scale: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let nf = model.signal_dim as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for (x, t) in xs.iter().zip(targets) {
        let f = model.forward(x);
        total += f.y_hat.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / nf;
        if let Some(g) = grad.as_deref_mut() {
            let d_y: Vec<f64> = f.y_hat.iter().zip(t.iter()).map(|(a, b)| 2.0 * (a - b) / (nf * scale)).collect();
            model.backward(x, &f, &d_y, 0.0, g);
        }
    }
    total / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng as _;

    fn random_batch(n: usize, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..k).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    fn r(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|x| x.as_slice()).collect()
    }

    /// Combined loss: labeled term on one batch plus pseudo-label term on another.
    fn combined(m: &ToyModel, lx: &[Vec<f64>], ly: &[Vec<f64>], ux: &[Vec<f64>], ut: &[Vec<f64>], grad: Option<&mut [f64]>) -> f64 {
        match grad {
            Some(g) => {
                labeled_loss(m, &r(lx), &r(ly), 0.3, lx.len() as f64, Some(&mut *g))
                    + pseudo_label_loss(m, &r(ux), &r(ut), ux.len() as f64, Some(g))
            }
            None => {
                labeled_loss(m, &r(lx), &r(ly), 0.3, lx.len() as f64, None)
                    + pseudo_label_loss(m, &r(ux), &r(ut), ux.len() as f64, None)
            }
        }
    }

    #[test]
    fn combined_loss_gradient_matches_central_differences() {
        let (n, d) = (12, 5);
        let mut rng = seed::rng(11);
        for point in 0..10 {
            let mut m = ToyModel::init(n, d, point % 2 == 1, &mut rng);
            // Move the head off its initial point so every branch is live.
            let h = m.off_head();
            m.params[h] = rng.random_range(-1.0..1.0);
            m.params[h + 1] = rng.random_range(-1.0..1.0);
            let bd = m.off_bd();
            for v in m.params[bd..h].iter_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            let lx = random_batch(n, 4, &mut rng);
            let ly = random_batch(n, 4, &mut rng);
            let ux = random_batch(n, 3, &mut rng);
            let ut = random_batch(n, 3, &mut rng);
            let mut g = vec![0.0; m.n_params()];
            combined(&m, &lx, &ly, &ux, &ut, Some(&mut g));
            let mut diff = 0.0;
            let mut norm = 0.0;
            for (i, gi) in g.iter().enumerate() {
                let e = 1e-6;
                let mut plus = m.clone();
                plus.params[i] += e;
                let mut minus = m.clone();
                minus.params[i] -= e;
                let fd = (combined(&plus, &lx, &ly, &ux, &ut, None) - combined(&minus, &lx, &ly, &ux, &ut, None)) / (2.0 * e);
                diff += (fd - gi).powi(2);
                norm += gi * gi;
            }
            let rel = (diff / norm).sqrt();
            assert!(rel <= 1e-4, "point {point}: relative error {rel:e}");
        }
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let mut rng = seed::rng(3);
        let m = ToyModel::init(64, 16, false, &mut rng);
        let x: Vec<f64> = (0..64).map(|j| (j as f64 * 0.1).sin()).collect();
        let a = m.forward(&x);
        let b = m.forward(&x);
        assert_eq!(a.y_hat, b.y_hat);
        assert_eq!(a.z.len(), 16);
        assert!(a.z.iter().all(|v| v.abs() < 1.0));
        assert_eq!(a.sigma(), 1.0);
    }

    #[test]
    fn empty_pseudo_batch_contributes_nothing() {
        let mut rng = seed::rng(3);
        let m = ToyModel::init(8, 3, false, &mut rng);
        let mut g = vec![0.0; m.n_params()];
        assert_eq!(pseudo_label_loss(&m, &[], &[], 1.0, Some(&mut g)), 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }
}
