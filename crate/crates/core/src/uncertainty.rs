//! Aleatoric uncertainty from a heteroscedastic regression fit.
//!
//! A linear mean head and a linear log-variance head share the same
//! standardized features. Training minimizes the mean per-sample loss
//! `|y - ŷ|² / (2σ²) + (m/2)·log σ²` where `m` is the target dimension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{LatentVector, SampleSet, SIGMA_FLOOR};
use crate::linalg::weighted_least_squares;

/// σ values above this are kept but reported as suspect.
pub const SUSPECT_SIGMA: f64 = 1e6;

/// Lowest log-variance the heads can express, `ln(σ_floor²)`.
pub fn min_log_variance() -> f64 {
    2.0 * SIGMA_FLOOR.ln()
}

/// Predictions are capped here so that extrapolating far outside the
/// training inputs still yields a finite σ.
const MAX_LOG_VARIANCE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroscedasticFit {
    pub input_dim: usize,
    pub target_dim: usize,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// Mean head, `target_dim` rows of `input_dim + 1` weights (bias first).
    pub mean_weights: Vec<f64>,
    /// Log-variance head, `input_dim + 1` weights (bias first).
    pub logvar_weights: Vec<f64>,
    /// Training NLL, one entry per accepted iterate starting at initialization.
    pub nll_trace: Vec<f64>,
}

/// Per-sample heteroscedastic loss for squared residual norm `r2` over `m`
/// target coordinates at log-variance `s`, with its derivative in `s`.
#[inline]
pub fn sample_nll(r2: f64, m: usize, s: f64) -> (f64, f64) {
    let inv = (-s).exp();
    let m = m as f64;
    (0.5 * r2 * inv + 0.5 * m * s, 0.5 * m - 0.5 * r2 * inv)
}

/// The training objective on standardized features, exposed so its gradient
/// can be checked independently.
pub struct NllObjective<'a> {
    features: &'a [Vec<f64>],
    targets: &'a [Vec<f64>],
}

impl<'a> NllObjective<'a> {
    /// `features` already include the leading bias coordinate.
    pub fn new(features: &'a [Vec<f64>], targets: &'a [Vec<f64>]) -> Self {
        Self { features, targets }
    }

    pub fn n_params(&self) -> usize {
        let p = self.features[0].len();
        p * (self.targets[0].len() + 1)
    }

    /// Mean NLL and its gradient at `theta = [mean rows..., logvar]`.
    pub fn value_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let p = self.features[0].len();
        let m = self.targets[0].len();
        let n = self.features.len() as f64;
        let (w, a) = theta.split_at(m * p);
        let s_min = min_log_variance();
        let mut grad = vec![0.0; theta.len()];
        let mut total = 0.0;
        let mut resid = vec![0.0; m];
        for (phi, y) in self.features.iter().zip(self.targets) {
            let raw_s = dot(a, phi);
            let clamped = raw_s < s_min;
            let s = raw_s.max(s_min);
            let inv = (-s).exp();
            let mut r2 = 0.0;
            for j in 0..m {
                resid[j] = y[j] - dot(&w[j * p..(j + 1) * p], phi);
                r2 += resid[j] * resid[j];
            }
            let (loss, ds) = sample_nll(r2, m, s);
            total += loss;
            for j in 0..m {
                let g = -resid[j] * inv / n;
                for (k, f) in phi.iter().enumerate() {
                    grad[j * p + k] += g * f;
                }
            }
            if !clamped {
                for (k, f) in phi.iter().enumerate() {
                    grad[m * p + k] += ds / n * f;
                }
            }
        }
        (total / n, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn standardize(inputs: &[LatentVector]) -> (Vec<f64>, Vec<f64>) {
    let d = inputs[0].dim();
    let n = inputs.len() as f64;
    let mut mean = vec![0.0; d];
    for z in inputs {
        for (m, v) in mean.iter_mut().zip(z.values()) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; d];
    for z in inputs {
        for k in 0..d {
            scale[k] += (z.values()[k] - mean[k]).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-20 { s.sqrt() } else { 1.0 };
    }
    (mean, scale)
}

fn features(z: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    std::iter::once(1.0)
        .chain(z.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s))
        .collect()
}

pub fn fit_heteroscedastic(
    inputs: &[LatentVector],
    targets: &[Vec<f64>],
    config: &FitConfig,
) -> Result<HeteroscedasticFit> {
    if inputs.is_empty() || targets.is_empty() {
        return Err(Error::EmptyData);
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            line: None,
            expected: inputs.len(),
            found: targets.len(),
        });
    }
    let d = inputs[0].dim();
    let m = targets[0].len();
    for z in inputs {
        if z.dim() != d {
            return Err(Error::DimensionMismatch { line: None, expected: d, found: z.dim() });
        }
    }
    for y in targets {
        if y.len() != m || m == 0 {
            return Err(Error::DimensionMismatch { line: None, expected: m, found: y.len() });
        }
    }
    let (feature_mean, feature_scale) = standardize(inputs);
    let phis: Vec<Vec<f64>> = inputs
        .iter()
        .map(|z| features(z.values(), &feature_mean, &feature_scale))
        .collect();
    let p = d + 1;

    // Warm start: least-squares mean head, constant log-variance at the
    // residual level.
    let ones = vec![1.0; phis.len()];
    let mut theta = Vec::with_capacity(p * (m + 1));
    for j in 0..m {
        let yj: Vec<f64> = targets.iter().map(|y| y[j]).collect();
        let beta = weighted_least_squares(&phis, &yj, &ones, 0.0).unwrap_or_else(|| vec![0.0; p]);
        theta.extend(beta);
    }
    let mut r2 = 0.0;
    for (phi, y) in phis.iter().zip(targets) {
        for j in 0..m {
            r2 += (y[j] - dot(&theta[j * p..(j + 1) * p], phi)).powi(2);
        }
    }
    let init_var = r2 / (phis.len() * m) as f64;
    let mut logvar = vec![0.0; p];
    logvar[0] = init_var.max(SIGMA_FLOOR * SIGMA_FLOOR).ln();
    theta.extend(logvar);

    // The mean head's curvature scales with 1/σ²; rescaling its steps by the
    // initial variance keeps one step size workable for both heads.
    let precond = init_var.max(SIGMA_FLOOR * SIGMA_FLOOR);
    let objective = NllObjective::new(&phis, targets);
    let (mut value, mut grad) = objective.value_and_grad(&theta);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(0));
    }
    let mut trace = vec![value];
    let mut step = config.learning_rate;
    for iter in 1..=config.max_iter {
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(&grad)
                .enumerate()
                .map(|(k, (t, g))| t - step * g * if k < m * p { precond } else { 1.0 })
                .collect();
            let (v, g) = objective.value_and_grad(&candidate);
            if v.is_finite() && v <= value {
                theta = candidate;
                let improvement = value - v;
                value = v;
                grad = g;
                accepted = improvement > 1e-15 * value.abs().max(1.0);
                break;
            }
            step *= 0.5;
        }
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(iter));
        }
        if !accepted {
            break;
        }
        trace.push(value);
    }

    let logvar_weights = theta.split_off(m * p);
    Ok(HeteroscedasticFit {
        input_dim: d,
        target_dim: m,
        feature_mean,
        feature_scale,
        mean_weights: theta,
        logvar_weights,
        nll_trace: trace,
    })
}

impl HeteroscedasticFit {
    fn check(&self, z: &LatentVector) -> Result<Vec<f64>> {
        if z.dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                line: None,
                expected: self.input_dim,
                found: z.dim(),
            });
        }
        Ok(features(z.values(), &self.feature_mean, &self.feature_scale))
    }

    pub fn predict_mean(&self, z: &LatentVector) -> Result<Vec<f64>> {
        let phi = self.check(z)?;
        let p = phi.len();
        Ok((0..self.target_dim)
            .map(|j| dot(&self.mean_weights[j * p..(j + 1) * p], &phi))
            .collect())
    }

    pub fn predict_log_variance(&self, z: &LatentVector) -> Result<f64> {
        let phi = self.check(z)?;
        Ok(dot(&self.logvar_weights, &phi).clamp(min_log_variance(), MAX_LOG_VARIANCE))
    }

    pub fn predict_sigma(&self, z: &LatentVector) -> Result<f64> {
        Ok((0.5 * self.predict_log_variance(z)?).exp().max(SIGMA_FLOOR))
    }
}

pub fn predict_sigma(fit: &HeteroscedasticFit, z: &LatentVector) -> Result<f64> {
    fit.predict_sigma(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaWarning {
    pub id: String,
    pub sigma: f64,
    pub reason: String,
}

/// Clamps σ to the floor and lists values that were clamped or look suspect.
pub fn validate_external_sigma(set: SampleSet) -> (SampleSet, Vec<SigmaWarning>) {
    let mut warnings = Vec::new();
    let mut records = set.into_records();
    for r in &mut records {
        if r.sigma < SIGMA_FLOOR {
            warnings.push(SigmaWarning {
                id: r.id.clone(),
                sigma: r.sigma,
                reason: format!("below floor, clamped to {SIGMA_FLOOR}"),
            });
            r.sigma = SIGMA_FLOOR;
        } else if r.sigma > SUSPECT_SIGMA {
            warnings.push(SigmaWarning {
                id: r.id.clone(),
                sigma: r.sigma,
                reason: "suspiciously large".into(),
            });
        }
    }
    let set = SampleSet::new(records).expect("ids and dimensions were already validated");
    (set, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{Pool, SampleRecord};
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn lv(v: &[f64]) -> LatentVector {
        LatentVector::new(v.to_vec()).unwrap()
    }

    fn two_clusters(n: usize, s_a: f64, s_b: f64, seed: u64) -> (Vec<LatentVector>, Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = crate::seed::rng(seed);
        let mut zs = Vec::new();
        let mut ys = Vec::new();
        let mut is_b = Vec::new();
        for i in 0..n {
            let b = i % 2 == 1;
            let center = if b { [0.0, 1.0] } else { [1.0, 0.0] };
            let z: Vec<f64> = center
                .iter()
                .map(|c| c + 0.1 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let noise = if b { s_b } else { s_a };
            let y = 0.5 + z[0] - 2.0 * z[1] + noise * rng.sample::<f64, _>(StandardNormal);
            zs.push(lv(&z));
            ys.push(vec![y]);
            is_b.push(b);
        }
        (zs, ys, is_b)
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
    }

    #[test]
    fn noise_ratio_is_recovered() {
        let (s_a, s_b) = (0.1, 1.0);
        let (zs, ys, _) = two_clusters(500, s_a, s_b, 3);
        let fit = fit_heteroscedastic(&zs, &ys, &FitConfig::default()).unwrap();
        let (hz, _, hb) = two_clusters(400, s_a, s_b, 4);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (z, is_b) in hz.iter().zip(hb) {
            let s = fit.predict_sigma(z).unwrap();
            if is_b { b.push(s) } else { a.push(s) }
        }
        let ratio = median(b) / median(a);
        let want = s_b / s_a;
        assert!(ratio > 0.5 * want && ratio < 2.0 * want, "ratio {ratio}");
    }

    #[test]
    fn trace_is_monotone_and_improves() {
        let (zs, ys, _) = two_clusters(200, 0.2, 0.8, 8);
        let fit = fit_heteroscedastic(&zs, &ys, &FitConfig::default()).unwrap();
        assert!(fit.nll_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        assert!(fit.nll_trace.last().unwrap() <= &fit.nll_trace[0]);
    }

    #[test]
    fn zero_noise_hits_floor() {
        let zs: Vec<LatentVector> = (0..20).map(|i| lv(&[1.0 + i as f64, 2.0])).collect();
        let ys: Vec<Vec<f64>> = zs.iter().map(|z| vec![3.0 * z.values()[0] - 1.0]).collect();
        let fit = fit_heteroscedastic(&zs, &ys, &FitConfig::default()).unwrap();
        for z in &zs {
            let s = fit.predict_sigma(z).unwrap();
            assert!(s < 1e-5, "{s}");
            assert!(s >= SIGMA_FLOOR);
        }
    }

    #[test]
    fn constant_everything() {
        let zs = vec![lv(&[1.0, 1.0]); 10];
        let ys = vec![vec![2.0]; 10];
        let fit = fit_heteroscedastic(&zs, &ys, &FitConfig::default()).unwrap();
        assert!((fit.predict_mean(&zs[0]).unwrap()[0] - 2.0).abs() < 1e-9);
        assert!(fit.predict_sigma(&zs[0]).unwrap() < 1e-5);
    }

    #[test]
    fn constant_inputs_give_residual_std() {
        let mut rng = crate::seed::rng(1);
        let zs = vec![lv(&[0.3, -1.0]); 400];
        let ys: Vec<Vec<f64>> = (0..400).map(|_| vec![0.7 * rng.sample::<f64, _>(StandardNormal)]).collect();
        let mean = ys.iter().map(|y| y[0]).sum::<f64>() / 400.0;
        let std = (ys.iter().map(|y| (y[0] - mean).powi(2)).sum::<f64>() / 400.0).sqrt();
        let fit = fit_heteroscedastic(&zs, &ys, &FitConfig::default()).unwrap();
        assert!((fit.predict_sigma(&zs[0]).unwrap() - std).abs() < 1e-6);
    }

    #[test]
    fn prediction_is_deterministic_and_checked() {
        let (zs, ys, _) = two_clusters(50, 0.2, 0.4, 2);
        let fit = fit_heteroscedastic(&zs, &ys, &FitConfig::default()).unwrap();
        assert_eq!(fit.predict_sigma(&zs[0]).unwrap(), predict_sigma(&fit, &zs[0]).unwrap());
        assert!(matches!(fit.predict_sigma(&lv(&[1.0])), Err(Error::DimensionMismatch { .. })));
        assert_eq!(fit, fit_heteroscedastic(&zs, &ys, &FitConfig::default()).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(fit_heteroscedastic(&[], &[], &FitConfig::default()), Err(Error::EmptyData)));
        assert!(fit_heteroscedastic(&[lv(&[1.0])], &[vec![1.0], vec![2.0]], &FitConfig::default()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::seed::rng(77);
        let phis: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let mut f = vec![1.0];
                f.extend((0..3).map(|_| rng.sample::<f64, _>(StandardNormal)));
                f
            })
            .collect();
        let ys: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let obj = NllObjective::new(&phis, &ys);
        for _ in 0..10 {
            let theta: Vec<f64> = (0..obj.n_params()).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
            let (_, g) = obj.value_and_grad(&theta);
            let h = 1e-6;
            for k in 0..theta.len() {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (obj.value_and_grad(&up).0 - obj.value_and_grad(&dn).0) / (2.0 * h);
                let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-8);
                assert!(rel <= 1e-4, "param {k}: fd {fd} analytic {}", g[k]);
            }
        }
    }

    #[test]
    fn external_sigma_validation() {
        let mk = |id: &str, s: f64| SampleRecord {
            id: id.into(),
            z: lv(&[1.0]),
            sigma: s,
            pool: Pool::Unlabeled,
        };
        let set = SampleSet::new(vec![mk("a", 0.0), mk("b", 1.0), mk("c", 1e7)]).unwrap();
        let (out, warnings) = validate_external_sigma(set);
        assert_eq!(out.get("a").unwrap().sigma, SIGMA_FLOOR);
        assert_eq!(out.get("b").unwrap().sigma, 1.0);
        assert_eq!(out.get("c").unwrap().sigma, 1e7);
        let ids: Vec<&str> = warnings.iter().map(|w| w.id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
    }
}
