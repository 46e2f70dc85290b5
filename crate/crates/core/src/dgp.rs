//! Synthetic data-generating processes with known ground truth.
//!
//! Each generator is a pure function of `(config, seed)`; randomness comes
//! from [`crate::rng::stream_rng`] on the data stream, drawn unit by unit in
//! index order.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{GroundTruth, IvDataset, ObservationalDataset, PanelDataset, PanelRecord};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::rng::{stream_rng, Stream};

pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Observational DGP.
///
/// With `s = sum_j x_j` and `q = sum_j x_j^2`:
///
/// * `logit P(A=1|X) = confounding_strength * s` plus
///   `propensity_quadratic * (q - d)` when `propensity_form` is quadratic;
/// * `Y(0) = outcome_intercept + outcome_slope * s` plus
///   `outcome_quadratic * q` when `outcome_form` is quadratic, plus noise;
/// * `Y(1) = Y(0) + tau + <tau_x, X>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsDgpConfig {
    pub n: usize,
    pub d: usize,
    pub confounding_strength: f64,
    pub propensity_form: FeatureMap,
    pub propensity_quadratic: f64,
    pub tau: f64,
    /// Effect heterogeneity; empty for a constant effect.
    pub tau_x: Vec<f64>,
    pub outcome_intercept: f64,
    pub outcome_slope: f64,
    pub outcome_quadratic: f64,
    pub outcome_form: FeatureMap,
    pub outcome_noise_sd: f64,
}

impl Default for ObsDgpConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            d: 2,
            confounding_strength: 0.5,
            propensity_form: FeatureMap::Linear,
            propensity_quadratic: 0.0,
            tau: 2.0,
            tau_x: Vec::new(),
            outcome_intercept: 1.0,
            outcome_slope: 1.0,
            outcome_quadratic: 0.0,
            outcome_form: FeatureMap::Linear,
            outcome_noise_sd: 1.0,
        }
    }
}

impl ObsDgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !(self.outcome_noise_sd >= 0.0) {
            return Err(Error::Config("outcome_noise_sd must be >= 0".into()));
        }
        if !self.tau_x.is_empty() && self.tau_x.len() != self.d {
            return Err(Error::Config(format!(
                "tau_x has {} entries for d = {}",
                self.tau_x.len(),
                self.d
            )));
        }
        let finite = [
            self.confounding_strength,
            self.propensity_quadratic,
            self.tau,
            self.outcome_intercept,
            self.outcome_slope,
            self.outcome_quadratic,
        ];
        if finite.iter().chain(&self.tau_x).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite DGP coefficient".into()));
        }
        Ok(())
    }

    /// True propensity at covariate row `x`.
    pub fn propensity(&self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().sum();
        let index = match self.propensity_form {
            FeatureMap::Intercept => 0.0,
            FeatureMap::Linear => self.confounding_strength * s,
            FeatureMap::LinearPlusQuadratic => {
                let q: f64 = x.iter().map(|v| v * v).sum();
                self.confounding_strength * s + self.propensity_quadratic * (q - x.len() as f64)
            }
        };
        logistic(index)
    }

    /// Noise-free `E[Y(0) | X = x]`.
    pub fn baseline_mean(&self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().sum();
        match self.outcome_form {
            FeatureMap::Intercept => self.outcome_intercept,
            FeatureMap::Linear => self.outcome_intercept + self.outcome_slope * s,
            FeatureMap::LinearPlusQuadratic => {
                let q: f64 = x.iter().map(|v| v * v).sum();
                self.outcome_intercept + self.outcome_slope * s + self.outcome_quadratic * q
            }
        }
    }

    /// `E[Y(1) - Y(0)]`; covariates are standard normal, so the linear
    /// effect modifiers average out.
    pub fn population_ate(&self) -> f64 {
        self.tau
    }

    pub fn effect(&self, x: &[f64]) -> f64 {
        self.tau + self.tau_x.iter().zip(x).map(|(t, v)| t * v).sum::<f64>()
    }
}

/// Draw an observational dataset and its potential outcomes.
pub fn generate_observational(config: &ObsDgpConfig, seed: u64) -> Result<(ObservationalDataset, GroundTruth)> {
    config.validate()?;
    let mut rng = stream_rng(seed, Stream::Data);
    let (n, d) = (config.n, config.d);
    let mut x = DMatrix::zeros(n, d);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut pi = Vec::with_capacity(n);
    let mut row = vec![0.0; d];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = normal(&mut rng);
            x[(i, j)] = *v;
        }
        let p = config.propensity(&row);
        let treated = rng.random::<f64>() < p;
        let base = config.baseline_mean(&row) + config.outcome_noise_sd * normal(&mut rng);
        let pot1 = base + config.effect(&row);
        a.push(treated);
        y.push(if treated { pot1 } else { base });
        y1.push(pot1);
        y0.push(base);
        pi.push(p);
    }
    let data = ObservationalDataset::new(x, a, y)?;
    let truth = GroundTruth::new(y1, y0, pi)?;
    Ok((data, truth))
}

/// Latent response of treatment to the instrument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplianceType {
    AlwaysTaker,
    Complier,
    NeverTaker,
    Defier,
}

impl ComplianceType {
    pub fn treatment(self, z: bool) -> bool {
        match self {
            ComplianceType::AlwaysTaker => true,
            ComplianceType::NeverTaker => false,
            ComplianceType::Complier => z,
            ComplianceType::Defier => !z,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ComplianceType::AlwaysTaker => "always",
            ComplianceType::Complier => "complier",
            ComplianceType::NeverTaker => "never",
            ComplianceType::Defier => "defier",
        }
    }
}

/// One value per compliance type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ByType {
    pub always: f64,
    pub complier: f64,
    pub never: f64,
    pub defier: f64,
}

impl ByType {
    pub fn get(&self, t: ComplianceType) -> f64 {
        match t {
            ComplianceType::AlwaysTaker => self.always,
            ComplianceType::Complier => self.complier,
            ComplianceType::NeverTaker => self.never,
            ComplianceType::Defier => self.defier,
        }
    }
}

/// Binary-instrument DGP with latent compliance types.
///
/// `Y(0) = baseline_by_type[t] + sum_j x_j + noise`,
/// `Y(1) = Y(0) + effect_by_type[t]`. Different baselines across types make
/// the treatment endogenous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvDgpConfig {
    pub n: usize,
    pub p_always: f64,
    pub p_complier: f64,
    pub p_never: f64,
    pub p_defier: f64,
    pub effect_by_type: ByType,
    pub baseline_by_type: ByType,
    pub instrument_prob: f64,
    pub outcome_noise_sd: f64,
    /// Exogenous covariates entering the outcome.
    pub d: usize,
    pub allow_defiers: bool,
}

impl Default for IvDgpConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            p_always: 0.2,
            p_complier: 0.6,
            p_never: 0.2,
            p_defier: 0.0,
            effect_by_type: ByType {
                always: 3.0,
                complier: 2.0,
                never: 1.0,
                defier: 0.0,
            },
            baseline_by_type: ByType {
                always: 2.0,
                complier: 0.0,
                never: -1.0,
                defier: 0.0,
            },
            instrument_prob: 0.5,
            outcome_noise_sd: 1.0,
            d: 0,
            allow_defiers: false,
        }
    }
}

impl IvDgpConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_always, self.p_complier, self.p_never, self.p_defier];
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config("compliance probabilities must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("compliance probabilities sum to {total}")));
        }
        if self.p_defier > 0.0 && !self.allow_defiers {
            return Err(Error::Config("p_defier > 0 requires allow_defiers (monotonicity)".into()));
        }
        if !(self.instrument_prob > 0.0 && self.instrument_prob < 1.0) {
            return Err(Error::Config("instrument_prob must lie in (0, 1)".into()));
        }
        if !(self.outcome_noise_sd >= 0.0) {
            return Err(Error::Config("outcome_noise_sd must be >= 0".into()));
        }
        if self.n < 1 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        Ok(())
    }

    /// Population first stage `E[A|Z=1] - E[A|Z=0] = p_complier - p_defier`.
    pub fn first_stage_strength(&self) -> f64 {
        self.p_complier - self.p_defier
    }

    /// Same DGP with the complier share set to `strength`; always- and
    /// never-takers keep their ratio and share the remaining mass.
    pub fn with_first_stage_strength(&self, strength: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::Config("first-stage strength must lie in [0, 1]".into()));
        }
        let rest = self.p_always + self.p_never;
        let (share_always, share_never) = if rest > 0.0 {
            (self.p_always / rest, self.p_never / rest)
        } else {
            (0.5, 0.5)
        };
        let left = 1.0 - strength;
        Ok(Self {
            p_complier: strength,
            p_always: left * share_always,
            p_never: left * share_never,
            p_defier: 0.0,
            ..self.clone()
        })
    }
}

/// Latent labels and potential outcomes behind an IV dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct IvTruth {
    pub types: Vec<ComplianceType>,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    pub true_late: f64,
}

pub fn generate_iv(config: &IvDgpConfig, seed: u64) -> Result<(IvDataset, IvTruth)> {
    config.validate()?;
    let mut rng = stream_rng(seed, Stream::Data);
    let n = config.n;
    let cut = [
        config.p_always,
        config.p_always + config.p_complier,
        config.p_always + config.p_complier + config.p_never,
    ];
    let mut x = DMatrix::zeros(n, config.d);
    let (mut z, mut a, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut types, mut y1, mut y0) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let u: f64 = rng.random();
        let t = if u < cut[0] {
            ComplianceType::AlwaysTaker
        } else if u < cut[1] {
            ComplianceType::Complier
        } else if u < cut[2] || config.p_defier == 0.0 {
            ComplianceType::NeverTaker
        } else {
            ComplianceType::Defier
        };
        let zi = rng.random::<f64>() < config.instrument_prob;
        let mut shift = 0.0;
        for j in 0..config.d {
            let v = normal(&mut rng);
            x[(i, j)] = v;
            shift += v;
        }
        let base = config.baseline_by_type.get(t) + shift + config.outcome_noise_sd * normal(&mut rng);
        let pot1 = base + config.effect_by_type.get(t);
        let ai = t.treatment(zi);
        z.push(zi);
        a.push(ai);
        y.push(if ai { pot1 } else { base });
        types.push(t);
        y1.push(pot1);
        y0.push(base);
    }
    let covariates = (config.d > 0).then_some(x);
    let data = IvDataset::new(z, a, y, covariates)?;
    let truth = IvTruth {
        types,
        y1,
        y0,
        true_late: config.effect_by_type.complier,
    };
    Ok((data, truth))
}

/// Group x period panel.
///
/// `y_it = unit_effect_i + group_effect*g_i + time_trend*t
///         + parallel_violation*g_i*t + treatment_effect*g_i*[t >= treatment_start] + noise`
/// for periods `t = 0 .. n_periods-1`. The first `round(treated_share * n_units)`
/// units form the treated group. Unit effects are drawn once per dataset from
/// `N(unit_effect_mean, unit_effect_sd^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDgpConfig {
    pub n_units: usize,
    pub n_periods: usize,
    pub treated_share: f64,
    pub group_effect: f64,
    pub time_trend: f64,
    pub treatment_effect: f64,
    pub parallel_violation: f64,
    pub noise_sd: f64,
    pub unit_effect_mean: f64,
    pub unit_effect_sd: f64,
    /// First post-treatment period; `None` means the last period.
    pub treatment_start: Option<usize>,
}

impl Default for PanelDgpConfig {
    fn default() -> Self {
        Self {
            n_units: 200,
            n_periods: 2,
            treated_share: 0.5,
            group_effect: 1.0,
            time_trend: 0.5,
            treatment_effect: 1.5,
            parallel_violation: 0.0,
            noise_sd: 1.0,
            unit_effect_mean: 0.0,
            unit_effect_sd: 1.0,
            treatment_start: None,
        }
    }
}

impl PanelDgpConfig {
    pub fn start(&self) -> usize {
        self.treatment_start.unwrap_or(self.n_periods.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_periods < 2 {
            return Err(Error::Config("panel needs at least 2 periods".into()));
        }
        if self.n_units < 2 {
            return Err(Error::Config("panel needs at least 2 units".into()));
        }
        if !(0.0..=1.0).contains(&self.treated_share) {
            return Err(Error::Config("treated_share must lie in [0, 1]".into()));
        }
        let start = self.start();
        if start == 0 || start >= self.n_periods {
            return Err(Error::Config("treatment_start must leave a pre and a post period".into()));
        }
        if !(self.noise_sd >= 0.0 && self.unit_effect_sd >= 0.0) {
            return Err(Error::Config("standard deviations must be >= 0".into()));
        }
        Ok(())
    }

    pub fn n_treated_units(&self) -> usize {
        (self.treated_share * self.n_units as f64).round() as usize
    }
}

/// Unit effects drawn for a panel, recorded for the sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelTruth {
    pub unit_effects: Vec<f64>,
    pub true_effect: f64,
}

pub fn generate_panel(config: &PanelDgpConfig, seed: u64) -> Result<(PanelDataset, PanelTruth)> {
    config.validate()?;
    let mut rng = stream_rng(seed, Stream::Data);
    let n_treated = config.n_treated_units();
    let start = config.start();
    let unit_effects: Vec<f64> = (0..config.n_units)
        .map(|_| config.unit_effect_mean + config.unit_effect_sd * normal(&mut rng))
        .collect();
    let mut records = Vec::with_capacity(config.n_units * config.n_periods);
    for (i, &alpha) in unit_effects.iter().enumerate() {
        let g = i < n_treated;
        let gf = if g { 1.0 } else { 0.0 };
        for t in 0..config.n_periods {
            let tf = t as f64;
            let post = t >= start;
            let treated = g && post;
            let mut y = alpha + config.group_effect * gf + config.time_trend * tf + config.parallel_violation * gf * tf;
            if treated {
                y += config.treatment_effect;
            }
            y += config.noise_sd * normal(&mut rng);
            records.push(PanelRecord {
                unit: i as i64,
                period: t as i64,
                treated,
                y,
                group: g,
            });
        }
    }
    let panel = PanelDataset::new(records)?;
    Ok((
        panel,
        PanelTruth {
            unit_effects,
            true_effect: config.treatment_effect,
        },
    ))
}

/// Sharp regression discontinuity: `x ~ U(cutoff - half_width, cutoff + half_width)`,
/// `a = [x >= cutoff]`, outcome piecewise linear in `x - cutoff` with a jump
/// of `jump` at the cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdDgpConfig {
    pub n: usize,
    pub cutoff: f64,
    pub half_width: f64,
    pub intercept: f64,
    pub jump: f64,
    pub slope_left: f64,
    pub slope_right: f64,
    pub noise_sd: f64,
}

impl Default for RdDgpConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            cutoff: 0.0,
            half_width: 1.0,
            intercept: 1.0,
            jump: 1.0,
            slope_left: 0.5,
            slope_right: 0.5,
            noise_sd: 0.5,
        }
    }
}

/// Returns the dataset (one covariate named `x`, the running variable), the
/// potential outcomes and the true jump.
pub fn generate_rd(config: &RdDgpConfig, seed: u64) -> Result<(ObservationalDataset, GroundTruth, f64)> {
    if config.n < 1 || !(config.half_width > 0.0) || !(config.noise_sd >= 0.0) {
        return Err(Error::Config("rd: need n >= 1, half_width > 0, noise_sd >= 0".into()));
    }
    let mut rng = stream_rng(seed, Stream::Data);
    let c = config.cutoff;
    let mut x = DMatrix::zeros(config.n, 1);
    let (mut a, mut y, mut y1, mut y0, mut pi) = (vec![], vec![], vec![], vec![], vec![]);
    for i in 0..config.n {
        let u: f64 = rng.random();
        let xi = c - config.half_width + 2.0 * config.half_width * u;
        let dx = xi - c;
        let noise = config.noise_sd * normal(&mut rng);
        let pot0 = config.intercept + config.slope_left * dx + noise;
        let pot1 = config.intercept + config.jump + config.slope_right * dx + noise;
        let treated = xi >= c;
        x[(i, 0)] = xi;
        a.push(treated);
        y.push(if treated { pot1 } else { pot0 });
        y1.push(pot1);
        y0.push(pot0);
        pi.push(if treated { 1.0 } else { 0.0 });
    }
    let data = ObservationalDataset::new(x, a, y)?.with_covariate_names(vec!["x".into()])?;
    Ok((data, GroundTruth::new(y1, y0, pi)?, config.jump))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn no_confounding_means_independent_treatment() {
        let cfg = ObsDgpConfig {
            n: 10_000,
            confounding_strength: 0.0,
            ..Default::default()
        };
        let (data, _) = generate_observational(&cfg, 11).unwrap();
        let a: Vec<f64> = data.treatment().iter().map(|&t| t as u8 as f64).collect();
        let x1: Vec<f64> = data.covariates().column(0).iter().copied().collect();
        assert!(corr(&a, &x1).abs() < 0.05);
    }

    #[test]
    fn constant_effect_is_exact() {
        let cfg = ObsDgpConfig {
            tau: 2.0,
            outcome_form: FeatureMap::LinearPlusQuadratic,
            outcome_quadratic: 0.7,
            ..Default::default()
        };
        let (data, truth) = generate_observational(&cfg, 3).unwrap();
        assert!((truth.true_ate - 2.0).abs() < 1e-12);
        truth.check_consistency(&data).unwrap();
        let (lo, hi) = truth.propensity_range().unwrap();
        assert!(lo > 0.0 && hi < 1.0);
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = ObsDgpConfig::default();
        let a = generate_observational(&cfg, 99).unwrap();
        let b = generate_observational(&cfg, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_observational(&cfg, 100).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn all_compliers_take_the_instrument() {
        let cfg = IvDgpConfig {
            p_always: 0.0,
            p_complier: 1.0,
            p_never: 0.0,
            ..Default::default()
        };
        let (iv, _) = generate_iv(&cfg, 1).unwrap();
        assert_eq!(iv.instrument(), iv.treatment());
    }

    #[test]
    fn all_never_takers_have_no_first_stage() {
        let cfg = IvDgpConfig {
            p_always: 0.0,
            p_complier: 0.0,
            p_never: 1.0,
            ..Default::default()
        };
        let (iv, _) = generate_iv(&cfg, 1).unwrap();
        assert!(iv.treatment().iter().all(|&a| !a));
    }

    #[test]
    fn true_late_matches_labelled_compliers() {
        let (_, truth) = generate_iv(&IvDgpConfig::default(), 5).unwrap();
        let (sum, count) = truth
            .types
            .iter()
            .zip(truth.y1.iter().zip(&truth.y0))
            .filter(|(t, _)| **t == ComplianceType::Complier)
            .fold((0.0, 0usize), |(s, c), (_, (y1, y0))| (s + (y1 - y0), c + 1));
        assert!(count > 0);
        assert!((sum / count as f64 - truth.true_late).abs() < 1e-12);
    }

    #[test]
    fn defiers_need_opt_in() {
        let cfg = IvDgpConfig {
            p_complier: 0.5,
            p_defier: 0.1,
            ..Default::default()
        };
        assert!(matches!(generate_iv(&cfg, 0), Err(Error::Config(_))));
        let cfg = IvDgpConfig {
            allow_defiers: true,
            ..cfg
        };
        assert!(generate_iv(&cfg, 0).is_ok());
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        let cfg = IvDgpConfig {
            p_complier: 0.5,
            ..Default::default()
        };
        assert!(generate_iv(&cfg, 0).is_err());
    }

    #[test]
    fn strength_rescaling_keeps_ratio() {
        let cfg = IvDgpConfig::default().with_first_stage_strength(0.1).unwrap();
        assert!((cfg.p_always - 0.45).abs() < 1e-12);
        assert!((cfg.p_never - 0.45).abs() < 1e-12);
        cfg.validate().unwrap();
    }

    #[test]
    fn panel_shape_and_sidecar() {
        let cfg = PanelDgpConfig {
            n_units: 10,
            n_periods: 4,
            ..Default::default()
        };
        let (panel, truth) = generate_panel(&cfg, 2).unwrap();
        assert_eq!(panel.len(), 40);
        assert_eq!(truth.unit_effects.len(), 10);
        assert_eq!(panel.periods(), vec![0, 1, 2, 3]);
        assert!(panel.records().iter().all(|r| r.treated == (r.group && r.period == 3)));
    }

    #[test]
    fn rd_assignment_is_sharp() {
        let (data, truth, jump) = generate_rd(&RdDgpConfig::default(), 4).unwrap();
        assert_eq!(jump, 1.0);
        truth.check_consistency(&data).unwrap();
        for i in 0..data.len() {
            assert_eq!(data.treatment()[i], data.covariates()[(i, 0)] >= 0.0);
        }
    }
}
