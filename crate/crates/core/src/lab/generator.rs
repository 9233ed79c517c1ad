//! Synthetic data: a mixture of linear regressions in one input dimension.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub x_mean: f64,
    pub x_var: f64,
    pub intercept: f64,
    pub slope: f64,
    pub noise_var: f64,
}

impl Component {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// Ground-truth mixture plus a target-domain shift: in the target law the
/// `shifted_component` has its input mean and its intercept moved by `shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub components: Vec<Component>,
    pub shift: f64,
    pub shifted_component: usize,
}

impl Default for Generator {
    fn default() -> Self {
        Self::two_lines(3.0)
    }
}

impl Generator {
    /// Two equally weighted lines with opposite slopes over inputs centred at ±2.
    pub fn two_lines(shift: f64) -> Self {
        let line = |x_mean: f64, slope: f64| Component {
            weight: 0.5,
            x_mean,
            x_var: 1.0,
            intercept: 2.0,
            slope,
            noise_var: 0.25,
        };
        Self {
            components: vec![line(-2.0, 1.0), line(2.0, -1.0)],
            shift,
            shifted_component: 1,
        }
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn law(&self, domain: Domain) -> Vec<Component> {
        let mut comps = self.components.clone();
        if domain == Domain::Target {
            if let Some(c) = comps.get_mut(self.shifted_component) {
                c.x_mean += self.shift;
                c.intercept += self.shift;
            }
        }
        comps
    }

    pub fn sample(&self, domain: Domain, n: usize, rng: &mut Rng) -> Vec<LabeledPoint> {
        let comps = self.law(domain);
        (0..n).map(|_| draw(&comps, rng)).collect()
    }

    pub fn sample_x(&self, domain: Domain, n: usize, rng: &mut Rng) -> Vec<f64> {
        self.sample(domain, n, rng).into_iter().map(|p| p.x).collect()
    }

    /// `n` inputs, each independently from the target law with probability
    /// `shifted_fraction` and from the source law otherwise. The flag marks
    /// target-law draws.
    pub fn sample_mixed_x(&self, n: usize, shifted_fraction: f64, rng: &mut Rng) -> Vec<(f64, bool)> {
        let source = self.law(Domain::Source);
        let target = self.law(Domain::Target);
        (0..n)
            .map(|_| {
                let shifted = rng.random::<f64>() < shifted_fraction;
                let comps = if shifted { &target } else { &source };
                (draw(comps, rng).x, shifted)
            })
            .collect()
    }

    /// Conditional mean of y given x under the source law.
    pub fn bayes_prediction(&self, x: f64) -> f64 {
        let (num, den) = self.components.iter().fold((0.0, 0.0), |(num, den), c| {
            let w = c.weight * normal_pdf(x, c.x_mean, c.x_var);
            (num + w * c.predict(x), den + w)
        });
        num / den
    }

    /// Population mean and variance of x under a law.
    pub fn x_moments(&self, domain: Domain) -> (f64, f64) {
        let comps = self.law(domain);
        let mean: f64 = comps.iter().map(|c| c.weight * c.x_mean).sum();
        let second: f64 = comps.iter().map(|c| c.weight * (c.x_var + c.x_mean * c.x_mean)).sum();
        (mean, second - mean * mean)
    }
}

fn draw(comps: &[Component], rng: &mut Rng) -> LabeledPoint {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = comps.len() - 1;
    for (k, c) in comps.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            chosen = k;
            break;
        }
    }
    let c = &comps[chosen];
    let x = c.x_mean + c.x_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
    let noise = Normal::new(0.0, c.noise_var.sqrt()).expect("noise variance is positive");
    LabeledPoint {
        x,
        y: c.predict(x) + noise.sample(rng),
    }
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-0.5 * (x - mean).powi(2) / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn empty_and_reproducible() {
        let g = Generator::default();
        assert!(g.sample(Domain::Source, 0, &mut seed::rng(1)).is_empty());
        assert_eq!(
            g.sample(Domain::Target, 50, &mut seed::rng(9)),
            g.sample(Domain::Target, 50, &mut seed::rng(9))
        );
    }

    #[test]
    fn moments_within_three_standard_errors() {
        let g = Generator::default();
        for domain in [Domain::Source, Domain::Target] {
            let n = 100_000;
            let xs = g.sample_x(domain, n, &mut seed::rng(3));
            let (mean, var) = g.x_moments(domain);
            let sample_mean = xs.iter().sum::<f64>() / n as f64;
            assert!((sample_mean - mean).abs() < 3.0 * (var / n as f64).sqrt(), "{domain:?}");
        }
    }

    #[test]
    fn y_mean_matches_mixture() {
        let g = Generator::default();
        let n = 100_000;
        let ys: Vec<f64> = g.sample(Domain::Source, n, &mut seed::rng(4)).iter().map(|p| p.y).collect();
        // E[y] = Σ π (a + b μ); Var[y] = Σ π (τ² + b² v + (a + b μ)²) - E[y]².
        let comps = &g.components;
        let mean: f64 = comps.iter().map(|c| c.weight * c.predict(c.x_mean)).sum();
        let second: f64 = comps
            .iter()
            .map(|c| c.weight * (c.noise_var + c.slope * c.slope * c.x_var + c.predict(c.x_mean).powi(2)))
            .sum();
        let se = ((second - mean * mean) / n as f64).sqrt();
        let got = ys.iter().sum::<f64>() / n as f64;
        assert!((got - mean).abs() < 3.0 * se);
    }

    #[test]
    fn zero_shift_target_equals_source() {
        let g = Generator::two_lines(0.0);
        assert_eq!(g.law(Domain::Target), g.law(Domain::Source));
    }

    #[test]
    fn mixed_pool_fraction() {
        let g = Generator::default();
        let pool = g.sample_mixed_x(10_000, 0.5, &mut seed::rng(2));
        let shifted = pool.iter().filter(|p| p.1).count() as f64 / 1e4;
        assert!((shifted - 0.5).abs() < 0.02);
        assert!(g.sample_mixed_x(100, 0.0, &mut seed::rng(2)).iter().all(|p| !p.1));
    }
}
