//! Monte-Carlo experiment drivers. Each trial owns its seeds and data; trials
//! run in parallel and are reduced in trial order.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::em::{semi_supervised_mle, supervised_mle, unsupervised_mle, EmConfig};
use super::generator::{Domain, Generator, LabeledPoint};
use super::metrics::{self, kl_divergence, median, mse_decomposition, regression_error, wilson_interval};
use super::model::{euclidean, param_distance, FittedModel, ModelSpec, ParamView};
use crate::error::{Error, Result};
use crate::latent::{LatentVector, Pool, SampleRecord, SampleSet};
use crate::par::try_map_range;
use crate::rejection::filter_unlabeled;
use crate::report::{Cell, RunReport, Table};
use crate::seed;
use crate::uncertainty::{fit_heteroscedastic, FitConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Lemma,
    Corollary1,
    Corollary2,
    BiasVariance,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Lemma => "lemma",
            Experiment::Corollary1 => "corollary1",
            Experiment::Corollary2 => "corollary2",
            Experiment::BiasVariance => "bias-variance",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma" => Ok(Experiment::Lemma),
            "corollary1" => Ok(Experiment::Corollary1),
            "corollary2" => Ok(Experiment::Corollary2),
            "bias-variance" => Ok(Experiment::BiasVariance),
            other => Err(Error::InvalidConfig(format!("unknown experiment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub seed: u64,
    pub trials: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    /// Unlabeled pool sizes for the lemma run.
    pub n_u_schedule: Vec<usize>,
    /// Target-domain shift of the second component.
    pub shift: f64,
    /// Components of the fitted model.
    pub components: usize,
    /// Share of target-law draws in the mixed pool of the selection run.
    pub shifted_fraction: f64,
    pub m_nn: usize,
    /// Constant first coordinate of the selection latents.
    pub latent_bias: f64,
    /// Standardized distance from a component mean within which its
    /// selection activation stays saturated at 1.
    pub latent_core: f64,
    pub n_eval: usize,
    pub n_mc: usize,
    /// Limits are fitted on this many times the largest sample size.
    pub limit_factor: usize,
    pub em_restarts: usize,
    pub em_max_iter: usize,
    pub em_tol: f64,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 200,
            n_labeled: 20,
            n_unlabeled: 2000,
            n_u_schedule: vec![100, 1000, 10_000],
            shift: 3.0,
            components: 2,
            shifted_fraction: 0.5,
            m_nn: 8,
            latent_bias: 0.1,
            latent_core: 3.0,
            n_eval: 20_000,
            n_mc: 5_000,
            limit_factor: 10,
            em_restarts: 5,
            em_max_iter: 500,
            em_tol: 1e-10,
        }
    }
}

impl LabConfig {
    pub fn defaults_for(experiment: Experiment) -> Self {
        let base = Self::default();
        match experiment {
            Experiment::Lemma => Self {
                trials: 20,
                components: 1,
                ..base
            },
            Experiment::Corollary1 => base,
            // Selection can only separate a shifted component that sits
            // clearly outside the labeled support.
            Experiment::Corollary2 => Self {
                trials: 50,
                shift: 6.0,
                ..base
            },
            Experiment::BiasVariance => Self { trials: 100, ..base },
        }
    }

    pub fn validate(&self, experiment: Experiment) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be positive");
        }
        if self.components == 0 {
            return bad("components must be positive");
        }
        if !(0.0..=1.0).contains(&self.shifted_fraction) {
            return bad("shifted fraction must lie in [0, 1]");
        }
        if !self.shift.is_finite() || !self.latent_bias.is_finite() {
            return bad("shift and latent bias must be finite");
        }
        if self.m_nn == 0 || self.n_eval == 0 || self.limit_factor == 0 {
            return bad("m_nn, n_eval and limit_factor must be positive");
        }
        if experiment == Experiment::Lemma && self.n_u_schedule.is_empty() {
            return bad("the lemma run needs a non-empty unlabeled schedule");
        }
        if experiment == Experiment::BiasVariance && self.trials < 2 {
            return bad("bias-variance needs at least two trials");
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        // The model is misspecified when the data carry more components than it
        // has: fewer than the generator's two, or a shifted pool adds a third.
        let law = if self.shift != 0.0 { 3 } else { 2 };
        ModelSpec::new(self.components, self.components < law)
    }

    pub fn em(&self, seed: u64) -> EmConfig {
        EmConfig {
            restarts: self.em_restarts,
            max_iter: self.em_max_iter,
            tol: self.em_tol,
            seed,
        }
    }

    pub fn generator(&self) -> Generator {
        Generator::two_lines(self.shift)
    }
}

pub fn run(experiment: Experiment, config: &LabConfig) -> Result<RunReport> {
    config.validate(experiment)?;
    match experiment {
        Experiment::Lemma => run_lemma_experiment(config),
        Experiment::Corollary1 => run_corollary1_experiment(config),
        Experiment::Corollary2 => run_corollary2_experiment(config),
        Experiment::BiasVariance => run_bias_variance_experiment(config),
    }
}

/// Large-sample stand-ins for the population maximizers.
pub struct Limits {
    pub sup: FittedModel,
    pub unsup: FittedModel,
}

/// `θ*_sup` from a supervised fit on source pairs and `θ*_unsup` from an
/// unsupervised fit on target inputs, both of size `factor · n_max`.
pub fn limits(config: &LabConfig, n_max: usize) -> Result<Limits> {
    let g = config.generator();
    let spec = config.spec()?;
    let n = config.limit_factor * n_max.max(1);
    let labeled = g.sample(Domain::Source, n, &mut seed::stream(config.seed, "lab.limit.sup"));
    let xs = g.sample_x(Domain::Target, n, &mut seed::stream(config.seed, "lab.limit.unsup"));
    Ok(Limits {
        sup: supervised_mle(&labeled, &spec, &config.em(seed::derive(config.seed, "lab.limit.em", 0)))?,
        unsup: unsupervised_mle(&xs, &spec, &config.em(seed::derive(config.seed, "lab.limit.em", 1)))?,
    })
}

fn trial_seed(config: &LabConfig, experiment: Experiment, t: usize) -> u64 {
    seed::derive(config.seed, experiment.name(), t as u64)
}

fn eval_seed(config: &LabConfig) -> u64 {
    seed::derive(config.seed, "lab.eval", 0)
}

fn draw_labeled(config: &LabConfig, ts: u64) -> Vec<LabeledPoint> {
    config
        .generator()
        .sample(Domain::Source, config.n_labeled, &mut seed::stream(ts, "labeled"))
}

fn draw_unlabeled(config: &LabConfig, ts: u64, n: usize) -> Vec<f64> {
    config.generator().sample_x(Domain::Target, n, &mut seed::stream(ts, "unlabeled"))
}

/// Semi-supervised fits with a fixed labeled set and growing unlabeled pools,
/// measured against the unsupervised limit.
pub fn run_lemma_experiment(config: &LabConfig) -> Result<RunReport> {
    let spec = config.spec()?;
    let n_max = *config.n_u_schedule.iter().max().unwrap_or(&0);
    let lim = limits(config, n_max)?;
    let mut schedule = vec![0];
    schedule.extend(config.n_u_schedule.iter().copied().filter(|n| *n > 0));

    let per_trial = try_map_range(config.trials, |t| {
        let ts = trial_seed(config, Experiment::Lemma, t);
        let labeled = draw_labeled(config, ts);
        let pool = draw_unlabeled(config, ts, n_max);
        let em = config.em(seed::derive(ts, "em", 0));
        schedule
            .iter()
            .map(|&n_u| {
                let fit = semi_supervised_mle(&labeled, &pool[..n_u], &spec, &em)?;
                Ok((
                    n_u,
                    param_distance(&fit, &lim.unsup, ParamView::Marginal)?,
                    param_distance(&fit, &lim.sup, ParamView::Marginal)?,
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut table = Table::new(&["trial", "n_labeled", "n_unlabeled", "dist_unsup_limit", "dist_sup_limit"]);
    for (t, rows) in per_trial.iter().enumerate() {
        for (n_u, du, ds) in rows {
            table.push(vec![t.into(), config.n_labeled.into(), (*n_u).into(), (*du).into(), (*ds).into()]);
        }
    }
    let mut report = RunReport::new("lemma", config.seed, config, table)?;
    report.set("misspecified", spec.misspecified);
    let mut medians = Vec::new();
    for (i, n_u) in schedule.iter().enumerate() {
        let d: Vec<f64> = per_trial.iter().map(|rows| rows[i].1).collect();
        let s: Vec<f64> = per_trial.iter().map(|rows| rows[i].2).collect();
        report.set(&format!("median_dist_unsup_limit_nu_{n_u}"), median(&d));
        report.set(&format!("median_dist_sup_limit_nu_{n_u}"), median(&s));
        if *n_u > 0 {
            medians.push(median(&d));
        }
    }
    report.set("strictly_decreasing", medians.windows(2).all(|w| w[1] < w[0]));
    report.set("final_median_dist_unsup_limit", *medians.last().unwrap_or(&f64::NAN));
    report.set(
        "limit_gap",
        param_distance(&lim.sup, &lim.unsup, ParamView::Marginal)?,
    );
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub l_sup: f64,
    pub l_semi: f64,
    pub kl_sup: f64,
    pub kl_semi: f64,
    pub param_dist_to_sup_limit: f64,
    pub param_dist_to_unsup_limit: f64,
}

/// One labeled-only fit and one semi-supervised fit on a target-law pool.
pub fn corollary1_trial(config: &LabConfig, lim: &Limits, t: usize) -> Result<(TrialOutcome, FittedModel, FittedModel)> {
    let spec = config.spec()?;
    let g = config.generator();
    let ts = trial_seed(config, Experiment::Corollary1, t);
    let labeled = draw_labeled(config, ts);
    let pool = draw_unlabeled(config, ts, config.n_unlabeled);
    let em = config.em(seed::derive(ts, "em", 0));
    let sup = supervised_mle(&labeled, &spec, &em)?;
    let semi = semi_supervised_mle(&labeled, &pool, &spec, &em)?;
    let es = eval_seed(config);
    let kl_seed = seed::derive(ts, "kl", 0);
    let outcome = TrialOutcome {
        seed: ts,
        n_labeled: labeled.len(),
        n_unlabeled: pool.len(),
        l_sup: regression_error(&sup, &g, config.n_eval, es),
        l_semi: regression_error(&semi, &g, config.n_eval, es),
        kl_sup: kl_divergence(&lim.sup, &sup, config.n_mc, kl_seed).value,
        kl_semi: kl_divergence(&lim.sup, &semi, config.n_mc, kl_seed).value,
        param_dist_to_sup_limit: param_distance(&semi, &lim.sup, ParamView::Full)?,
        param_dist_to_unsup_limit: param_distance(&semi, &lim.unsup, ParamView::Marginal)?,
    };
    Ok((outcome, sup, semi))
}

/// Frequency with which adding unlabeled data raises the error.
pub fn run_corollary1_experiment(config: &LabConfig) -> Result<RunReport> {
    let spec = config.spec()?;
    let lim = limits(config, config.n_labeled + config.n_unlabeled)?;
    let outcomes = try_map_range(config.trials, |t| corollary1_trial(config, &lim, t).map(|r| r.0))?;

    let mut table = Table::new(&[
        "trial", "seed", "n_labeled", "n_unlabeled", "l_sup", "l_semi", "kl_sup", "kl_semi",
        "param_dist_to_sup_limit", "param_dist_to_unsup_limit", "degraded",
    ]);
    for (t, o) in outcomes.iter().enumerate() {
        table.push(vec![
            t.into(),
            Cell::Text(o.seed.to_string()),
            o.n_labeled.into(),
            o.n_unlabeled.into(),
            o.l_sup.into(),
            o.l_semi.into(),
            o.kl_sup.into(),
            o.kl_semi.into(),
            o.param_dist_to_sup_limit.into(),
            o.param_dist_to_unsup_limit.into(),
            (o.l_sup < o.l_semi).into(),
        ]);
    }
    let n = outcomes.len();
    let degraded = outcomes.iter().filter(|o| o.l_sup < o.l_semi).count();
    let kl_degraded = outcomes.iter().filter(|o| o.kl_sup < o.kl_semi).count();
    let (lo, hi) = wilson_interval(degraded, n);
    let (klo, khi) = wilson_interval(kl_degraded, n);
    let l_sup: Vec<f64> = outcomes.iter().map(|o| o.l_sup).collect();
    let l_semi: Vec<f64> = outcomes.iter().map(|o| o.l_semi).collect();

    let mut report = RunReport::new("corollary1", config.seed, config, table)?;
    report.set("misspecified", spec.misspecified);
    report.set("trials", n);
    report.set("degradation_fraction", degraded as f64 / n as f64);
    report.set("wilson_lower", lo);
    report.set("wilson_upper", hi);
    report.set("kl_degradation_fraction", kl_degraded as f64 / n as f64);
    report.set("kl_wilson_lower", klo);
    report.set("kl_wilson_upper", khi);
    report.set("mean_l_sup", metrics::mean(&l_sup));
    report.set("mean_l_semi", metrics::mean(&l_semi));
    report.set("median_l_sup", median(&l_sup));
    report.set("median_l_semi", median(&l_semi));
    report.set("irreducible_error", metrics::irreducible_error(&config.generator()));
    Ok(report)
}

/// How the selection run picks its unlabeled subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Rule,
    AcceptAll,
    RejectAll,
}

/// Latent stand-in for the selection run: a constant coordinate and the
/// strongest component activation of `fit` at `x`. An activation is 1
/// within `core` standard deviations of its component mean and decays as a
/// Gaussian beyond, so every input inside the labeled support shares one
/// latent while inputs far from it turn toward the constant axis.
pub fn selection_latent(fit: &FittedModel, x: f64, bias: f64, core: f64) -> LatentVector {
    let support = fit
        .components
        .iter()
        .map(|c| {
            let d = ((x - c.x_mean).abs() / c.x_var.sqrt() - core).max(0.0);
            (-0.5 * d * d).exp()
        })
        .fold(0.0, f64::max);
    LatentVector::new(vec![bias, support]).unwrap_or_else(|_| LatentVector::new(vec![1.0, 0.0]).expect("unit latent"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrial {
    pub seed: u64,
    pub dist_none: f64,
    pub dist_all: f64,
    pub dist_selected: f64,
    pub accepted: usize,
    pub accepted_shifted: usize,
    pub pool_shifted: usize,
    pub threshold: f64,
    pub fit_none: FittedModel,
    pub fit_selected: FittedModel,
}

/// Three arms on one mixed pool: no unlabeled data, all of it, and the
/// subset kept by the rejection rule.
pub fn corollary2_trial(config: &LabConfig, lim: &Limits, t: usize, gate: Gate) -> Result<SelectionTrial> {
    let spec = config.spec()?;
    let g = config.generator();
    let ts = trial_seed(config, Experiment::Corollary2, t);
    let labeled = draw_labeled(config, ts);
    let pool = g.sample_mixed_x(config.n_unlabeled, config.shifted_fraction, &mut seed::stream(ts, "unlabeled"));
    let em = config.em(seed::derive(ts, "em", 0));
    let none = supervised_mle(&labeled, &spec, &em)?;
    let xs: Vec<f64> = pool.iter().map(|p| p.0).collect();
    let all = semi_supervised_mle(&labeled, &xs, &spec, &em)?;

    let (keep, threshold) = match gate {
        Gate::AcceptAll => (vec![true; pool.len()], f64::NAN),
        Gate::RejectAll => (vec![false; pool.len()], f64::NAN),
        Gate::Rule => select(config, &none, &labeled, &xs)?,
    };
    let chosen: Vec<f64> = xs.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect();
    let selected = semi_supervised_mle(&labeled, &chosen, &spec, &em)?;
    Ok(SelectionTrial {
        seed: ts,
        dist_none: param_distance(&none, &lim.sup, ParamView::Full)?,
        dist_all: param_distance(&all, &lim.sup, ParamView::Full)?,
        dist_selected: param_distance(&selected, &lim.sup, ParamView::Full)?,
        accepted: chosen.len(),
        accepted_shifted: pool.iter().zip(&keep).filter(|(p, k)| **k && p.1).count(),
        pool_shifted: pool.iter().filter(|p| p.1).count(),
        threshold,
        fit_none: none,
        fit_selected: selected,
    })
}

/// Builds latents from the labeled-only fit, σ from a heteroscedastic fit
/// of that fit's labeled residuals on the labeled latents, and applies the
/// rejection rule.
fn select(config: &LabConfig, fit: &FittedModel, labeled: &[LabeledPoint], xs: &[f64]) -> Result<(Vec<bool>, f64)> {
    let lz: Vec<LatentVector> = labeled.iter().map(|p| selection_latent(fit, p.x, config.latent_bias, config.latent_core)).collect();
    let ly: Vec<Vec<f64>> = labeled.iter().map(|p| vec![p.y - fit.predict(p.x)]).collect();
    let hfit = fit_heteroscedastic(&lz, &ly, &FitConfig::default())?;
    let mut lrec = Vec::with_capacity(labeled.len());
    for (i, z) in lz.into_iter().enumerate() {
        let sigma = hfit.predict_sigma(&z)?;
        lrec.push(SampleRecord::new(format!("l{i:05}"), z, sigma, Pool::Labeled)?);
    }
    let mut urec = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        let z = selection_latent(fit, *x, config.latent_bias, config.latent_core);
        let sigma = hfit.predict_sigma(&z)?;
        urec.push(SampleRecord::new(format!("u{i:05}"), z, sigma, Pool::Unlabeled)?);
    }
    let out = filter_unlabeled(&SampleSet::new(urec)?, &SampleSet::new(lrec)?, config.m_nn, 0)?;
    Ok((out.decisions.iter().map(|d| d.accepted).collect(), out.state.t))
}

pub fn run_corollary2_experiment(config: &LabConfig) -> Result<RunReport> {
    let lim = limits(config, config.n_labeled + config.n_unlabeled)?;
    let trials = try_map_range(config.trials, |t| corollary2_trial(config, &lim, t, Gate::Rule))?;
    let mut table = Table::new(&[
        "trial", "seed", "dist_none", "dist_all", "dist_selected", "accepted", "accepted_shifted",
        "pool_shifted", "threshold",
    ]);
    for (t, r) in trials.iter().enumerate() {
        table.push(vec![
            t.into(),
            Cell::Text(r.seed.to_string()),
            r.dist_none.into(),
            r.dist_all.into(),
            r.dist_selected.into(),
            r.accepted.into(),
            r.accepted_shifted.into(),
            r.pool_shifted.into(),
            r.threshold.into(),
        ]);
    }
    let col = |f: fn(&SelectionTrial) -> f64| trials.iter().map(f).collect::<Vec<f64>>();
    let (none, all, sel) = (col(|r| r.dist_none), col(|r| r.dist_all), col(|r| r.dist_selected));
    let mut report = RunReport::new("corollary2", config.seed, config, table)?;
    report.set("median_dist_none", median(&none));
    report.set("median_dist_all", median(&all));
    report.set("median_dist_selected", median(&sel));
    report.set("selected_to_all_ratio", median(&sel) / median(&all));
    let accepted: usize = trials.iter().map(|r| r.accepted).sum();
    let shifted_in: usize = trials.iter().map(|r| r.accepted_shifted).sum();
    let shifted: usize = trials.iter().map(|r| r.pool_shifted).sum();
    let source = trials.len() * config.n_unlabeled - shifted;
    report.set("acceptance_rate_source", ratio(accepted - shifted_in, source));
    report.set("acceptance_rate_shifted", ratio(shifted_in, shifted));
    Ok(report)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// Squared bias and variance of labeled-only and semi-supervised estimates
/// around the supervised limit.
pub fn run_bias_variance_experiment(config: &LabConfig) -> Result<RunReport> {
    let lim = limits(config, config.n_labeled + config.n_unlabeled)?;
    let fits = try_map_range(config.trials, |t| {
        let (_, sup, semi) = corollary1_trial(config, &lim, t)?;
        Ok((sup, semi))
    })?;
    let theta = lim.sup.canonical_vector(ParamView::Full);
    let sups: Vec<FittedModel> = fits.iter().map(|f| f.0.clone()).collect();
    let semis: Vec<FittedModel> = fits.iter().map(|f| f.1.clone()).collect();
    let d_sup = mse_decomposition(&sups, &theta, ParamView::Full)?;
    let d_semi = mse_decomposition(&semis, &theta, ParamView::Full)?;

    let mut table = Table::new(&["trial", "regime", "sq_error"]);
    for (t, (sup, semi)) in fits.iter().enumerate() {
        for (name, fit) in [("supervised", sup), ("semi_supervised", semi)] {
            let e = euclidean(&fit.canonical_vector(ParamView::Full), &theta).powi(2);
            table.push(vec![t.into(), name.into(), e.into()]);
        }
    }
    let mut report = RunReport::new("bias-variance", config.seed, config, table)?;
    report.set("misspecified", config.spec()?.misspecified);
    report.set("bias_sq_sup", d_sup.bias_sq);
    report.set("variance_sup", d_sup.variance);
    report.set("mse_sup", d_sup.mse);
    report.set("bias_sq_semi", d_semi.bias_sq);
    report.set("variance_semi", d_semi.variance);
    report.set("mse_semi", d_semi.mse);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(experiment: Experiment) -> LabConfig {
        LabConfig {
            trials: 3,
            n_unlabeled: 300,
            n_u_schedule: vec![50, 200],
            n_eval: 2_000,
            n_mc: 200,
            limit_factor: 2,
            em_restarts: 2,
            em_max_iter: 200,
            ..LabConfig::defaults_for(experiment)
        }
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in [Experiment::Lemma, Experiment::Corollary1, Experiment::Corollary2, Experiment::BiasVariance] {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("corollary3".parse::<Experiment>().is_err());
    }

    #[test]
    fn config_rejects_bad_values_and_unknown_keys() {
        let ok = LabConfig::default();
        assert!(ok.validate(Experiment::Corollary1).is_ok());
        assert!(LabConfig { trials: 0, ..ok.clone() }.validate(Experiment::Lemma).is_err());
        assert!(LabConfig { shifted_fraction: 1.5, ..ok.clone() }.validate(Experiment::Corollary2).is_err());
        assert!(LabConfig { n_u_schedule: vec![], ..ok.clone() }.validate(Experiment::Lemma).is_err());
        assert!(LabConfig { trials: 1, ..ok.clone() }.validate(Experiment::BiasVariance).is_err());
        assert!(serde_json::from_str::<LabConfig>(r#"{"trails": 3}"#).is_err());
        let partial: LabConfig = serde_json::from_str(r#"{"trials": 7}"#).unwrap();
        assert_eq!(partial.trials, 7);
        assert_eq!(partial.n_labeled, ok.n_labeled);
    }

    #[test]
    fn misspecification_follows_component_count() {
        let c = LabConfig::default();
        assert!(c.spec().unwrap().misspecified);
        assert!(!LabConfig { components: 3, ..c.clone() }.spec().unwrap().misspecified);
        assert!(!LabConfig { shift: 0.0, ..c.clone() }.spec().unwrap().misspecified);
        assert!(LabConfig { shift: 0.0, components: 1, ..c }.spec().unwrap().misspecified);
    }

    #[test]
    fn selection_latent_saturates_inside_the_core() {
        let fit = FittedModel::from_generator(&Generator::two_lines(0.0));
        let inside = selection_latent(&fit, -2.5, 0.1, 3.0);
        assert_eq!(inside.values(), &[0.1, 1.0]);
        assert_eq!(selection_latent(&fit, 4.9, 0.1, 3.0), inside);
        let edge = selection_latent(&fit, 6.0, 0.1, 3.0).values()[1];
        let far = selection_latent(&fit, 9.0, 0.1, 3.0).values()[1];
        assert!((edge - (-0.5f64).exp()).abs() < 1e-12);
        assert!(far < edge && far > 0.0);
        // Far outside, the latent still has a direction.
        let gone = selection_latent(&fit, 1e6, 0.1, 3.0);
        assert_eq!(gone.values(), &[0.1, 0.0]);
    }

    #[test]
    fn reject_all_gate_reproduces_the_labeled_only_arm() {
        let cfg = small(Experiment::Corollary2);
        let lim = limits(&cfg, cfg.n_labeled + cfg.n_unlabeled).unwrap();
        for t in 0..2 {
            let r = corollary2_trial(&cfg, &lim, t, Gate::RejectAll).unwrap();
            assert_eq!(r.accepted, 0);
            assert_eq!(r.fit_selected, r.fit_none);
            assert_eq!(r.dist_selected.to_bits(), r.dist_none.to_bits());
            let a = corollary2_trial(&cfg, &lim, t, Gate::AcceptAll).unwrap();
            assert_eq!(a.accepted, cfg.n_unlabeled);
            assert_eq!(a.dist_selected.to_bits(), a.dist_all.to_bits());
        }
    }

    #[test]
    fn rule_gate_counts_are_consistent() {
        let cfg = small(Experiment::Corollary2);
        let lim = limits(&cfg, cfg.n_labeled + cfg.n_unlabeled).unwrap();
        let r = corollary2_trial(&cfg, &lim, 0, Gate::Rule).unwrap();
        assert!(r.accepted <= cfg.n_unlabeled);
        assert!(r.accepted_shifted <= r.accepted.min(r.pool_shifted));
        assert!(r.threshold.is_finite() && r.threshold > 0.0);
    }

    #[test]
    fn empty_pool_never_degrades() {
        let cfg = LabConfig { n_unlabeled: 0, ..small(Experiment::Corollary1) };
        let report = run(Experiment::Corollary1, &cfg).unwrap();
        assert_eq!(report.get_f64("degradation_fraction"), Some(0.0));
        let l_sup = report.table.floats("l_sup");
        let l_semi = report.table.floats("l_semi");
        assert_eq!(l_sup, l_semi);
    }

    #[test]
    fn lemma_reports_every_pool_size_including_zero() {
        let cfg = small(Experiment::Lemma);
        let report = run(Experiment::Lemma, &cfg).unwrap();
        assert_eq!(report.table.rows.len(), cfg.trials * 3);
        for n_u in [0, 50, 200] {
            assert!(report.get_f64(&format!("median_dist_unsup_limit_nu_{n_u}")).is_some());
        }
        assert!(report.get_bool("strictly_decreasing").is_some());
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = small(Experiment::Corollary2);
        let a = run(Experiment::Corollary2, &cfg).unwrap();
        let b = run(Experiment::Corollary2, &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        a.table.write_csv(&mut csv_a).unwrap();
        b.table.write_csv(&mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn bias_variance_splits_the_error() {
        let cfg = small(Experiment::BiasVariance);
        let r = run(Experiment::BiasVariance, &cfg).unwrap();
        for arm in ["sup", "semi"] {
            let b = r.get_f64(&format!("bias_sq_{arm}")).unwrap();
            let v = r.get_f64(&format!("variance_{arm}")).unwrap();
            let m = r.get_f64(&format!("mse_{arm}")).unwrap();
            assert!(b >= 0.0 && v >= 0.0);
            assert!((b + v - m).abs() <= 1e-9 * m.max(1.0));
        }
    }
}
