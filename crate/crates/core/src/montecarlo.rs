//! Replicated simulation: bias, variance, MSE and coverage of ATE
//! estimators under correct and misspecified nuisance models.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AteEstimate, GroundTruth, Method, ObservationalDataset};
use crate::dgp::{generate_observational, ObsDgpConfig};
use crate::error::{Error, Result};
use crate::estimators::{aipw, g_formula, ipw, naive_dim, IpwNormalization, DEFAULT_LEVEL};
use crate::features::FeatureMap;
use crate::nuisance::{cross_fit, CrossFitConfig, NuisanceFit};
use crate::rng::replication_seed;

/// Share of failed replications above which a run is an error.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

/// Which nuisance learners match the data-generating process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    BothCorrect,
    PiWrong,
    MuWrong,
    BothWrong,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::BothCorrect,
        Scenario::PiWrong,
        Scenario::MuWrong,
        Scenario::BothWrong,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::BothCorrect => "both_correct",
            Scenario::PiWrong => "pi_wrong",
            Scenario::MuWrong => "mu_wrong",
            Scenario::BothWrong => "both_wrong",
        }
    }

    fn pi_wrong(self) -> bool {
        matches!(self, Scenario::PiWrong | Scenario::BothWrong)
    }

    fn mu_wrong(self) -> bool {
        matches!(self, Scenario::MuWrong | Scenario::BothWrong)
    }

    /// Learner feature maps `(propensity, outcome)`: the DGP's own form when
    /// correct, one step coarser when wrong.
    pub fn learner_features(self, dgp: &ObsDgpConfig) -> (FeatureMap, FeatureMap) {
        let pick = |form: FeatureMap, wrong: bool| if wrong { form.coarser() } else { form };
        (
            pick(dgp.propensity_form, self.pi_wrong()),
            pick(dgp.outcome_form, self.mu_wrong()),
        )
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dgp: ObsDgpConfig,
    pub estimators: Vec<Method>,
    pub reps: usize,
    /// Sample size per replication; overrides `dgp.n`.
    pub n: usize,
    pub seed: u64,
    pub scenario: Scenario,
    /// Nuisance settings; the scenario overrides both feature maps and the
    /// per-replication seed replaces `crossfit.seed`.
    pub crossfit: CrossFitConfig,
    pub level: f64,
    /// When false every replication reuses `seed` (a degenerate check).
    pub vary_seed: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            dgp: ObsDgpConfig::default(),
            estimators: vec![Method::Naive, Method::IpwHajek, Method::Gformula, Method::Aipw],
            reps: 500,
            n: 2000,
            seed: 0,
            scenario: Scenario::BothCorrect,
            crossfit: CrossFitConfig::default(),
            level: DEFAULT_LEVEL,
            vary_seed: true,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::Config("Monte Carlo needs at least 2 replications".into()));
        }
        if self.n < 2 {
            return Err(Error::Config("n must be at least 2".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        for m in &self.estimators {
            if !SUPPORTED.contains(m) {
                return Err(Error::Config(format!("estimator `{m}` is not available in Monte Carlo runs")));
            }
        }
        self.dgp.validate()
    }

    /// DGP with `n` applied.
    pub fn resolved_dgp(&self) -> ObsDgpConfig {
        ObsDgpConfig {
            n: self.n,
            ..self.dgp.clone()
        }
    }

    /// Cross-fitting settings for replication `seed` under the scenario.
    pub fn resolved_crossfit(&self, seed: u64) -> CrossFitConfig {
        let (pf, of) = self.scenario.learner_features(&self.dgp);
        let mut cf = self.crossfit.clone();
        cf.propensity.features = pf;
        cf.outcome.features = of;
        cf.seed = seed;
        cf
    }

    pub fn replication_seed(&self, r: usize) -> u64 {
        if self.vary_seed {
            replication_seed(self.seed, r)
        } else {
            self.seed
        }
    }
}

/// Estimators the harness can run (all target the ATE).
pub const SUPPORTED: [Method; 6] = [
    Method::Naive,
    Method::IpwHt,
    Method::IpwHajek,
    Method::IpwOracle,
    Method::Gformula,
    Method::Aipw,
];

fn needs_nuisance(m: Method) -> bool {
    matches!(m, Method::IpwHt | Method::IpwHajek | Method::Gformula | Method::Aipw)
}

/// One estimate from one replication.
#[derive(Debug, Clone, PartialEq)]
struct Draw {
    estimate: f64,
    se: Option<f64>,
    covers: Option<bool>,
    clip_count: Option<usize>,
}

fn estimate_one(
    method: Method,
    data: &ObservationalDataset,
    truth: &GroundTruth,
    nuisance: Option<&Result<NuisanceFit>>,
    level: f64,
) -> Result<(AteEstimate, Option<usize>)> {
    let fit = || -> Result<&NuisanceFit> {
        match nuisance {
            Some(Ok(f)) => Ok(f),
            Some(Err(e)) => Err(Error::Invariant(format!("nuisance fit failed: {e}"))),
            None => Err(Error::Invariant("nuisance fit missing".into())),
        }
    };
    match method {
        Method::Naive => Ok((naive_dim(data, level)?, None)),
        Method::IpwHt => {
            let f = fit()?;
            Ok((ipw(data, &f.pi_hat, IpwNormalization::HorvitzThompson, level)?, Some(f.clip_count)))
        }
        Method::IpwHajek => {
            let f = fit()?;
            Ok((ipw(data, &f.pi_hat, IpwNormalization::Hajek, level)?, Some(f.clip_count)))
        }
        Method::IpwOracle => {
            let mut e = ipw(data, &truth.propensity, IpwNormalization::HorvitzThompson, level)?;
            e.method = Method::IpwOracle;
            Ok((e, None))
        }
        Method::Gformula => {
            let f = fit()?;
            Ok((g_formula(&f.mu0_hat, &f.mu1_hat)?, Some(f.clip_count)))
        }
        Method::Aipw => {
            let f = fit()?;
            let e = aipw(data, f, level)?;
            Ok((e.estimate, Some(e.clip_count)))
        }
        other => Err(Error::Config(format!("estimator `{other}` is not available in Monte Carlo runs"))),
    }
}

/// Summary statistics of one estimator across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub estimator: Method,
    pub reps: usize,
    pub failures: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Monte Carlo standard error of `bias`: `sqrt(variance / R)`.
    pub mc_se: f64,
    /// Across-replication variance with divisor `R`.
    pub variance: f64,
    /// Mean squared error against the true ATE.
    pub mse: f64,
    /// Share of intervals containing the true ATE.
    pub coverage: Option<f64>,
    pub mean_se: Option<f64>,
    /// Average number of clipped propensities per replication.
    pub mean_clip_count: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub scenario: Scenario,
    pub true_ate: f64,
    pub rows: Vec<McRow>,
    pub config: McConfig,
}

impl McReport {
    pub fn row(&self, m: Method) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimator == m)
    }
}

fn summarize(method: Method, draws: &[Result<Draw>], truth: f64, reps: usize) -> Result<McRow> {
    let ok: Vec<&Draw> = draws.iter().filter_map(|d| d.as_ref().ok()).collect();
    let failures = reps - ok.len();
    if failures as f64 > MAX_FAILURE_SHARE * reps as f64 || ok.len() < 2 {
        return Err(Error::TooManyFailures {
            estimator: method.to_string(),
            failed: failures,
            total: reps,
        });
    }
    let r = ok.len() as f64;
    let mean = ok.iter().map(|d| d.estimate).sum::<f64>() / r;
    let variance = ok.iter().map(|d| (d.estimate - mean).powi(2)).sum::<f64>() / r;
    let mse = ok.iter().map(|d| (d.estimate - truth).powi(2)).sum::<f64>() / r;
    let avg = |vals: Vec<f64>| (vals.len() == ok.len()).then(|| vals.iter().sum::<f64>() / r);
    let coverage = avg(ok.iter().filter_map(|d| d.covers.map(|c| if c { 1.0 } else { 0.0 })).collect());
    let mean_se = avg(ok.iter().filter_map(|d| d.se).collect());
    let mean_clip_count = avg(ok.iter().filter_map(|d| d.clip_count.map(|c| c as f64)).collect());
    Ok(McRow {
        estimator: method,
        reps,
        failures,
        mean_estimate: mean,
        bias: mean - truth,
        mc_se: (variance / r).sqrt(),
        variance,
        mse,
        coverage,
        mean_se,
        mean_clip_count,
    })
}

/// Runs `reps` independent replications in parallel and reduces them in
/// replication order, so the report does not depend on scheduling.
pub fn run_mc(config: &McConfig) -> Result<McReport> {
    config.validate()?;
    let dgp = config.resolved_dgp();
    let truth_ate = dgp.population_ate();
    let want_nuisance = config.estimators.iter().any(|&m| needs_nuisance(m));
    let per_rep: Vec<Result<Vec<Result<Draw>>>> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let seed = config.replication_seed(r);
            let (data, truth) = generate_observational(&dgp, seed)?;
            let nuisance = want_nuisance.then(|| cross_fit(&data, &config.resolved_crossfit(seed)));
            Ok(config
                .estimators
                .iter()
                .map(|&m| {
                    let (est, clip_count) = estimate_one(m, &data, &truth, nuisance.as_ref(), config.level)?;
                    Ok(Draw {
                        estimate: est.psi_hat,
                        se: est.se,
                        covers: est.covers(truth_ate),
                        clip_count,
                    })
                })
                .collect())
        })
        .collect();
    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = config
        .estimators
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let draws: Vec<Result<Draw>> = per_rep
                .iter()
                .map(|rep| match &rep[j] {
                    Ok(d) => Ok(d.clone()),
                    Err(e) => Err(Error::Invariant(e.to_string())),
                })
                .collect();
            summarize(m, &draws, truth_ate, config.reps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McReport {
        scenario: config.scenario,
        true_ate: truth_ate,
        rows,
        config: config.clone(),
    })
}

/// The four nuisance scenarios with AIPW and its baselines.
pub fn dr_suite(base: &McConfig) -> Result<Vec<McReport>> {
    Scenario::ALL
        .into_iter()
        .map(|scenario| {
            run_mc(&McConfig {
                scenario,
                estimators: vec![
                    Method::Naive,
                    Method::IpwHt,
                    Method::IpwHajek,
                    Method::Gformula,
                    Method::Aipw,
                ],
                ..base.clone()
            })
        })
        .collect()
}

/// Data-generating process for double-robustness studies: two covariates
/// with quadratic terms in both the propensity and the outcome, so a linear
/// learner is misspecified for either nuisance.
pub fn dr_dgp() -> ObsDgpConfig {
    ObsDgpConfig {
        n: 2000,
        d: 2,
        confounding_strength: 0.5,
        propensity_form: FeatureMap::LinearPlusQuadratic,
        propensity_quadratic: 0.1,
        tau: 2.0,
        tau_x: Vec::new(),
        outcome_intercept: 1.0,
        outcome_slope: 1.0,
        outcome_quadratic: 0.5,
        outcome_form: FeatureMap::LinearPlusQuadratic,
        outcome_noise_sd: 1.0,
    }
}

pub const CSV_COLUMNS: [&str; 13] = [
    "scenario",
    "estimator",
    "reps",
    "failures",
    "true_ate",
    "mean_estimate",
    "bias",
    "mc_se",
    "variance",
    "mse",
    "coverage",
    "mean_se",
    "mean_clip_count",
];

/// One CSV row per estimator and report, fixed column order, empty cells
/// for statistics an estimator does not produce.
pub fn write_reports_csv<W: Write>(reports: &[McReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for rep in reports {
        for row in &rep.rows {
            w.write_record([
                rep.scenario.to_string(),
                row.estimator.to_string(),
                row.reps.to_string(),
                row.failures.to_string(),
                rep.true_ate.to_string(),
                row.mean_estimate.to_string(),
                row.bias.to_string(),
                row.mc_se.to_string(),
                row.variance.to_string(),
                row.mse.to_string(),
                opt(row.coverage),
                opt(row.mean_se),
                opt(row.mean_clip_count),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// Components of the naive contrast's error against the ATE.
///
/// With `alpha1 = E[Y(1)|A=1]`, `alpha2 = E[Y(1)|A=0]`, `alpha3 = E[Y(0)|A=1]`
/// and `alpha4 = E[Y(0)|A=0]` (sample averages of the potential outcomes),
/// `total_gap = (alpha1 - alpha4) - ATE` splits into the baseline difference
/// `alpha3 - alpha4` and the heterogeneity term `(1 - rho)(delta1 - delta0)`
/// where `delta1 = alpha1 - alpha3`, `delta0 = alpha2 - alpha4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorDecomposition {
    pub naive: f64,
    pub true_ate: f64,
    pub total_gap: f64,
    pub baseline_diff: f64,
    pub het_term: f64,
    pub treated_share: f64,
    pub delta1: f64,
    pub delta0: f64,
}

pub fn error_decomposition(data: &ObservationalDataset, truth: &GroundTruth) -> Result<ErrorDecomposition> {
    if truth.y1.len() != data.len() {
        return Err(Error::Validation("ground truth and dataset differ in size".into()));
    }
    let mut sums = [[0.0; 2]; 2]; // [arm][potential outcome]
    let mut counts = [0usize; 2];
    for (i, &a) in data.treatment().iter().enumerate() {
        let arm = usize::from(a);
        counts[arm] += 1;
        sums[arm][1] += truth.y1[i];
        sums[arm][0] += truth.y0[i];
    }
    if counts[1] == 0 {
        return Err(Error::EmptyArm("treated"));
    }
    if counts[0] == 0 {
        return Err(Error::EmptyArm("control"));
    }
    let alpha1 = sums[1][1] / counts[1] as f64;
    let alpha2 = sums[0][1] / counts[0] as f64;
    let alpha3 = sums[1][0] / counts[1] as f64;
    let alpha4 = sums[0][0] / counts[0] as f64;
    let rho = counts[1] as f64 / data.len() as f64;
    let delta1 = alpha1 - alpha3;
    let delta0 = alpha2 - alpha4;
    let naive = alpha1 - alpha4;
    let total_gap = naive - truth.true_ate;
    let baseline_diff = alpha3 - alpha4;
    let het_term = (1.0 - rho) * (delta1 - delta0);
    let residual = total_gap - (baseline_diff + het_term);
    if residual.abs() > 1e-10 * (1.0 + total_gap.abs()) {
        return Err(Error::Invariant(format!(
            "decomposition residual {residual} (total {total_gap})"
        )));
    }
    Ok(ErrorDecomposition {
        naive,
        true_ate: truth.true_ate,
        total_gap,
        baseline_diff,
        het_term,
        treated_share: rho,
        delta1,
        delta0,
    })
}

/// Large-sample oracle for the naive contrast's bias: the decomposition on
/// one draw of `n` units.
pub fn naive_bias_oracle(dgp: &ObsDgpConfig, n: usize, seed: u64) -> Result<ErrorDecomposition> {
    let cfg = ObsDgpConfig { n, ..dgp.clone() };
    let (data, truth) = generate_observational(&cfg, seed)?;
    error_decomposition(&data, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_decomposition() {
        let data = ObservationalDataset::from_rows(
            &[vec![0.0], vec![0.0], vec![0.0], vec![0.0]],
            vec![true, true, false, false],
            vec![3.0, 3.0, 0.0, 0.0],
        )
        .unwrap();
        let truth = GroundTruth::new(vec![3.0, 3.0, 2.0, 2.0], vec![1.0, 1.0, 0.0, 0.0], vec![0.5; 4]).unwrap();
        let e = error_decomposition(&data, &truth).unwrap();
        assert_eq!(e.total_gap, 1.0);
        assert_eq!(e.baseline_diff, 1.0);
        assert_eq!(e.het_term, 0.0);
        assert_eq!((e.delta1, e.delta0), (2.0, 2.0));
        assert_eq!(e.total_gap, e.baseline_diff + e.het_term);
    }

    #[test]
    fn identical_seeds_give_zero_variance() {
        let cfg = McConfig {
            reps: 2,
            n: 300,
            vary_seed: false,
            ..Default::default()
        };
        let r = run_mc(&cfg).unwrap();
        for row in &r.rows {
            assert_eq!(row.variance, 0.0);
            assert_eq!(row.mse, row.bias * row.bias);
        }
    }

    #[test]
    fn scenario_features() {
        let dgp = dr_dgp();
        assert_eq!(
            Scenario::BothCorrect.learner_features(&dgp),
            (FeatureMap::LinearPlusQuadratic, FeatureMap::LinearPlusQuadratic)
        );
        assert_eq!(
            Scenario::PiWrong.learner_features(&dgp),
            (FeatureMap::Linear, FeatureMap::LinearPlusQuadratic)
        );
        assert_eq!(
            Scenario::BothWrong.learner_features(&dgp),
            (FeatureMap::Linear, FeatureMap::Linear)
        );
        assert_eq!("mu_wrong".parse::<Scenario>().unwrap(), Scenario::MuWrong);
    }

    #[test]
    fn failures_above_threshold_are_an_error() {
        let make = |bad: usize| -> Vec<Result<Draw>> {
            (0..10)
            .map(|i| {
                if i < bad {
                    Err(Error::EmptyArm("treated"))
                } else {
                    Ok(Draw {
                        estimate: 1.0,
                        se: None,
                        covers: None,
                        clip_count: None,
                    })
                }
            })
            .collect()
        };
        assert!(matches!(
            summarize(Method::Naive, &make(2), 1.0, 10),
            Err(Error::TooManyFailures { failed: 2, total: 10, .. })
        ));
        assert_eq!(summarize(Method::Naive, &make(1), 1.0, 10).unwrap().failures, 1);
    }

    #[test]
    fn unsupported_estimator_is_config_error() {
        let cfg = McConfig {
            estimators: vec![Method::Did],
            ..Default::default()
        };
        assert!(matches!(run_mc(&cfg), Err(Error::Config(_))));
    }
}
