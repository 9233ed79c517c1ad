//! Synthetic 1-d restoration task. Clean signals are scaled copies of a few
//! smooth templates; the source degradation adds localized bumps and white
//! noise. The shifted degradation either mixes in a second template or
//! rescales the whole degraded signal.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDegradation {
    pub bumps: usize,
    pub bump_amplitude: (f64, f64),
    pub bump_width: f64,
    pub noise_std: f64,
}

impl Default for SourceDegradation {
    fn default() -> Self {
        Self {
            bumps: 3,
            bump_amplitude: (0.1, 0.8),
            bump_width: 1.5,
            noise_std: 0.1,
        }
    }
}

/// Shifted draws apply the source degradation and then one of two
/// distortions: a second template added at `interference` gain, or the
/// whole signal rescaled by `gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftedDegradation {
    pub interference: (f64, f64),
    pub gain: (f64, f64),
    /// Share of shifted draws that use the gain distortion.
    pub gain_share: f64,
}

impl Default for ShiftedDegradation {
    fn default() -> Self {
        Self {
            interference: (0.5, 1.0),
            gain: (1.2, 1.4),
            gain_share: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub seed: u64,
    /// Seeds the template family separately, so that task seeds vary the
    /// draws but not the signals being restored.
    pub template_seed: u64,
    pub signal_dim: usize,
    pub templates: usize,
    /// Clean amplitudes are drawn from `1 ± amplitude_jitter`.
    pub amplitude_jitter: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    /// Share of the unlabeled pool drawn with the shifted degradation.
    pub rho: f64,
    pub source: SourceDegradation,
    pub shifted: ShiftedDegradation,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            template_seed: 0,
            signal_dim: 64,
            templates: 3,
            amplitude_jitter: 0.1,
            n_labeled: 20,
            n_unlabeled: 600,
            n_test: 300,
            rho: 0.5,
            source: SourceDegradation::default(),
            shifted: ShiftedDegradation::default(),
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.shifted.gain_share) {
            return bad("gain share must lie in [0, 1]");
        }
        if self.signal_dim == 0 || self.templates < 2 {
            return bad("need a positive signal dimension and at least two templates");
        }
        if self.n_labeled < 2 || self.n_test == 0 {
            return bad("need at least two labeled pairs and one test pair");
        }
        for (lo, hi) in [self.source.bump_amplitude, self.shifted.interference, self.shifted.gain] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad("ranges must be finite with lo <= hi");
            }
        }
        if !(self.source.bump_width > 0.0 && self.source.noise_std >= 0.0 && self.amplitude_jitter >= 0.0) {
            return bad("bump width must be positive, noise and jitter non-negative");
        }
        Ok(())
    }
}

/// How an unlabeled draw was degraded. Kept for diagnostics only; training
/// never looks at it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawKind {
    Source,
    Interference,
    Gain,
}

impl DrawKind {
    pub fn is_shifted(self) -> bool {
        self != DrawKind::Source
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub config: TaskConfig,
    pub templates: Vec<Vec<f64>>,
    pub labeled_x: Vec<Vec<f64>>,
    pub labeled_y: Vec<Vec<f64>>,
    pub unlabeled_x: Vec<Vec<f64>>,
    pub unlabeled_kind: Vec<DrawKind>,
    /// Clean signals behind the unlabeled draws, for diagnostics only.
    pub unlabeled_clean: Vec<Vec<f64>>,
    /// Test pairs follow the source law.
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<Vec<f64>>,
}

impl ToyTask {
    pub fn signal_dim(&self) -> usize {
        self.config.signal_dim
    }

    /// Largest clean amplitude in the test split.
    pub fn peak(&self) -> f64 {
        self.test_y.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn make_toy_task(config: &TaskConfig) -> Result<ToyTask> {
    config.validate()?;
    let templates = make_templates(config, &mut seed::stream(config.template_seed, "toy.templates"));
    let law = Law { config, templates: &templates };

    let mut rng = seed::stream(config.seed, "toy.labeled");
    let (labeled_x, labeled_y): (Vec<_>, Vec<_>) = (0..config.n_labeled).map(|_| law.source_pair(&mut rng)).unzip();
    let mut rng = seed::stream(config.seed, "toy.test");
    let (test_x, test_y): (Vec<_>, Vec<_>) = (0..config.n_test).map(|_| law.source_pair(&mut rng)).unzip();

    // Exactly round(ρ·N_u) shifted draws at shuffled positions, so ρ = 0 and
    // ρ = 1 give pure pools.
    let n_shifted = (config.rho * config.n_unlabeled as f64).round() as usize;
    let mut rng = seed::stream(config.seed, "toy.unlabeled");
    let mut shifted: Vec<bool> = (0..config.n_unlabeled).map(|i| i < n_shifted).collect();
    shifted.shuffle(&mut rng);
    let mut unlabeled_x = Vec::with_capacity(config.n_unlabeled);
    let mut unlabeled_kind = Vec::with_capacity(config.n_unlabeled);
    let mut unlabeled_clean = Vec::with_capacity(config.n_unlabeled);
    for s in shifted {
        let (x, y, kind) = if s {
            law.shifted_input(&mut rng)
        } else {
            let (x, y) = law.source_pair(&mut rng);
            (x, y, DrawKind::Source)
        };
        unlabeled_x.push(x);
        unlabeled_clean.push(y);
        unlabeled_kind.push(kind);
    }

    Ok(ToyTask {
        config: config.clone(),
        templates,
        labeled_x,
        labeled_y,
        unlabeled_x,
        unlabeled_kind,
        unlabeled_clean,
        test_x,
        test_y,
    })
}

/// Sums of a few low-frequency sinusoids, scaled to unit RMS.
fn make_templates(config: &TaskConfig, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = config.signal_dim;
    (0..config.templates)
        .map(|_| {
            let mut s = vec![0.0; n];
            for _ in 0..4 {
                let a: f64 = StandardNormal.sample(rng);
                let freq = rng.random_range(1..=3) as f64;
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                for (j, v) in s.iter_mut().enumerate() {
                    *v += a * (std::f64::consts::TAU * freq * j as f64 / n as f64 + phase).sin();
                }
            }
            let rms = (s.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            s.iter().map(|v| v / rms).collect()
        })
        .collect()
}

struct Law<'a> {
    config: &'a TaskConfig,
    templates: &'a [Vec<f64>],
}

impl Law<'_> {
    fn clean(&self, rng: &mut Rng) -> (usize, Vec<f64>) {
        let c = rng.random_range(0..self.templates.len());
        let j = self.config.amplitude_jitter;
        let a = if j > 0.0 { rng.random_range(1.0 - j..=1.0 + j) } else { 1.0 };
        (c, self.templates[c].iter().map(|v| a * v).collect())
    }

    fn degrade(&self, y: &[f64], rng: &mut Rng) -> Vec<f64> {
        let d = &self.config.source;
        let n = y.len();
        let mut x = y.to_vec();
        for _ in 0..d.bumps {
            let p = rng.random_range(0.0..n as f64);
            let a = uniform(rng, d.bump_amplitude);
            for (j, v) in x.iter_mut().enumerate() {
                let t = (j as f64 - p) / d.bump_width;
                *v += a * (-0.5 * t * t).exp();
            }
        }
        for v in x.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v += d.noise_std * e;
        }
        x
    }

    fn source_pair(&self, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        let (_, y) = self.clean(rng);
        (self.degrade(&y, rng), y)
    }

    fn shifted_input(&self, rng: &mut Rng) -> (Vec<f64>, Vec<f64>, DrawKind) {
        let s = &self.config.shifted;
        let (c, y) = self.clean(rng);
        if rng.random::<f64>() < s.gain_share {
            let g = uniform(rng, s.gain);
            let x = self.degrade(&y, rng).into_iter().map(|v| g * v).collect();
            (x, y, DrawKind::Gain)
        } else {
            let other = (c + rng.random_range(1..self.templates.len())) % self.templates.len();
            let g = uniform(rng, s.interference);
            let mixed: Vec<f64> = y.iter().zip(&self.templates[other]).map(|(a, b)| a + g * b).collect();
            (self.degrade(&mixed, rng), y, DrawKind::Interference)
        }
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}
