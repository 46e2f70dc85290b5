//! Command-line front end: argument parsing, the flat config file, and
//! report serialization. The binary only forwards `argv` to [`run`].
//!
//! Config files hold one `key = value` per line; `#` starts a comment.
//! Flags given on the command line override file keys. Recognized keys:
//! `seed`, `level`, `crossfit.k`, `crossfit.clip` (`lo,hi`),
//! `propensity.lambda`, `propensity.features`, `outcome.lambda`,
//! `outcome.features`, and per subcommand `n`, `reps`, `scenario`, `dgp`,
//! `design`, `method`, `bandwidth`, `cutoff`, `kernel`, `caliper`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::data::{
    write_csv_to, write_iv_csv, write_panel_csv, CsvSchema, CsvTable, IvSchema, Method, ObservationalDataset,
    PanelSchema,
};
use crate::dgp::{
    generate_iv, generate_observational, generate_panel, generate_rd, IvDgpConfig, ObsDgpConfig, PanelDgpConfig,
    RdDgpConfig,
};
use crate::eif::{eif_report, DiscreteMeasure, EpsSchedule, Functional};
use crate::error::{Error, Result};
use crate::estimators::{aipw, g_formula, ipw, naive_dim, normal_quantile, psm_att, IpwNormalization, MatchSpec};
use crate::features::FeatureMap;
use crate::montecarlo::{dr_dgp, run_mc, write_reports_csv, McConfig, Scenario};
use crate::nuisance::{cross_fit, CrossFitConfig};
use crate::quasi::{did, did_placebo, fe_within, iv_wald, rd_local_linear, tsls, Kernel, RdSpec};
use crate::rng::{stream_rng, Stream};

/// Version string embedded in every report.
pub const VERSION: &str = concat!("causalkit ", env!("CARGO_PKG_VERSION"), " (report schema 1)");

const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "causalkit", version, about = "Causal effect estimation and semiparametric checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Draw a synthetic dataset with known ground truth.
    Simulate(SimulateArgs),
    /// Estimate a causal effect from a CSV file.
    Estimate(EstimateArgs),
    /// Replicated simulation of ATE estimators.
    Montecarlo(MontecarloArgs),
    /// Numerical influence-function checks on a discrete measure.
    #[command(name = "eif-check")]
    EifCheck(EifCheckArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NuisanceArgs {
    /// Cross-fitting folds.
    #[arg(long)]
    pub k: Option<usize>,
    /// Propensity clip bounds `lo,hi`.
    #[arg(long)]
    pub clip: Option<String>,
    #[arg(long)]
    pub propensity_lambda: Option<f64>,
    #[arg(long)]
    pub propensity_features: Option<String>,
    #[arg(long)]
    pub outcome_lambda: Option<f64>,
    #[arg(long)]
    pub outcome_features: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// observational, dr, iv, panel or rd.
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Covariate dimension (observational designs).
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub confounding: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// First-stage strength (iv design).
    #[arg(long)]
    pub first_stage: Option<f64>,
    /// Number of periods (panel design); `n` is the number of units.
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub parallel_violation: Option<f64>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub jump: Option<f64>,
    /// Sidecar CSV with the latent ground truth.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// JSON manifest describing the run; standard output when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub nuisance: NuisanceArgs,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub treatment: Option<String>,
    #[arg(long)]
    pub outcome: Option<String>,
    /// Comma-separated covariate columns; default is every other column.
    #[arg(long, conflicts_with = "no_covariates")]
    pub covariates: Option<String>,
    /// Use no covariates.
    #[arg(long)]
    pub no_covariates: bool,
    #[arg(long)]
    pub instrument: Option<String>,
    #[arg(long)]
    pub unit: Option<String>,
    #[arg(long)]
    pub period: Option<String>,
    #[arg(long)]
    pub group: Option<String>,
    /// Running-variable column (rd).
    #[arg(long)]
    pub running: Option<String>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub caliper: Option<f64>,
    #[arg(long)]
    pub with_replacement: bool,
    #[arg(long)]
    pub level: Option<f64>,
    /// json or csv.
    #[arg(long, default_value = "json")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct MontecarloArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub nuisance: NuisanceArgs,
    /// both_correct, pi_wrong, mu_wrong, both_wrong or all.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// dr (quadratic nuisances) or linear.
    #[arg(long)]
    pub dgp: Option<String>,
    /// Comma-separated estimator list.
    #[arg(long)]
    pub estimators: Option<String>,
    #[arg(long)]
    pub level: Option<f64>,
    /// json or csv.
    #[arg(long, default_value = "json")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct EifCheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Support table: one column per coordinate plus `prob`.
    #[arg(long)]
    pub measure: PathBuf,
    /// mean(c), cond_mean(c|k=v,...), counterfactual_mean(0|1) or ate.
    #[arg(long)]
    pub functional: String,
    /// Estimated measure for the second-order remainder check.
    #[arg(long)]
    pub estimate_measure: Option<PathBuf>,
    /// Random scores for the central-identity check.
    #[arg(long, default_value_t = 100)]
    pub scores: usize,
    /// json or csv.
    #[arg(long, default_value = "json")]
    pub format: String,
}

/// Flat key-value configuration file.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", i + 1)))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        }
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("config key `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    /// Flag value, else file value, else `default`.
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

const NUISANCE_KEYS: [&str; 6] = [
    "crossfit.k",
    "crossfit.clip",
    "propensity.lambda",
    "propensity.features",
    "outcome.lambda",
    "outcome.features",
];

fn parse_flag<T: FromStr>(flag: &str, v: Option<&String>) -> Result<Option<T>> {
    v.map(|s| {
        s.parse::<T>()
            .map_err(|_| Error::Usage(format!("--{flag}: cannot parse `{s}`")))
    })
    .transpose()
}

fn parse_clip(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| Error::Usage(format!("clip bounds `{s}` must be `lo,hi`")))?;
    let lo = lo.trim().parse().map_err(|_| Error::Usage(format!("bad clip bound `{lo}`")))?;
    let hi = hi.trim().parse().map_err(|_| Error::Usage(format!("bad clip bound `{hi}`")))?;
    Ok((lo, hi))
}

fn resolve_crossfit(args: &NuisanceArgs, file: &FileConfig, seed: u64) -> Result<CrossFitConfig> {
    let mut cf = CrossFitConfig::default();
    cf.k = file.pick(args.k, "crossfit.k", cf.k)?;
    let clip = file.pick_opt(args.clip.clone(), "crossfit.clip")?;
    if let Some(c) = clip {
        cf.clip = parse_clip(&c)?;
    }
    cf.propensity.lambda = file.pick(args.propensity_lambda, "propensity.lambda", cf.propensity.lambda)?;
    cf.outcome.lambda = file.pick(args.outcome_lambda, "outcome.lambda", cf.outcome.lambda)?;
    let pf: Option<FeatureMap> = parse_flag("propensity-features", args.propensity_features.as_ref())?;
    cf.propensity.features = file.pick(pf, "propensity.features", cf.propensity.features)?;
    let of: Option<FeatureMap> = parse_flag("outcome-features", args.outcome_features.as_ref())?;
    cf.outcome.features = file.pick(of, "outcome.features", cf.outcome.features)?;
    cf.seed = seed;
    Ok(cf)
}

// ---------------------------------------------------------------------------
// Resolved configurations
// ---------------------------------------------------------------------------

/// Fully resolved run settings, embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum RunConfig {
    Simulate(SimulateConfig),
    Estimate(EstimateConfig),
    Montecarlo(MontecarloConfig),
    EifCheck(EifCheckConfig),
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        match self {
            RunConfig::Simulate(c) => c.seed,
            RunConfig::Estimate(c) => c.seed,
            RunConfig::Montecarlo(c) => c.mc.seed,
            RunConfig::EifCheck(c) => c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum Design {
    Observational(ObsDgpConfig),
    Iv(IvDgpConfig),
    Panel(PanelDgpConfig),
    Rd(RdDgpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateConfig {
    pub seed: u64,
    pub dgp: Design,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub truth: Option<PathBuf>,
    #[serde(skip)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::Usage(format!("--format must be json or csv, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateConfig {
    pub seed: u64,
    pub method: Method,
    pub input: PathBuf,
    pub treatment: String,
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instrument: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub panel: Option<PanelSchema>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub running: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rd: Option<RdSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matching: Option<MatchSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crossfit: Option<CrossFitConfig>,
    pub level: f64,
    pub format: Format,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MontecarloConfig {
    pub dgp_name: String,
    pub scenarios: Vec<Scenario>,
    pub mc: McConfig,
    pub format: Format,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EifCheckConfig {
    pub seed: u64,
    pub measure: PathBuf,
    pub functional: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate_measure: Option<PathBuf>,
    pub scores: usize,
    pub eps: EpsSchedule,
    pub format: Format,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

fn obs_method(m: Method) -> bool {
    matches!(
        m,
        Method::Naive | Method::IpwHt | Method::IpwHajek | Method::Gformula | Method::PsmAtt | Method::Aipw
    )
}

fn resolve_simulate(a: SimulateArgs) -> Result<RunConfig> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    file.check_keys(&["seed", "design", "n", "d", "confounding", "tau", "first_stage", "periods", "parallel_violation", "cutoff", "jump"])?;
    let seed = file.pick(a.common.seed, "seed", DEFAULT_SEED)?;
    let design: String = file.pick(a.design, "design", "observational".into())?;
    let n: Option<usize> = file.pick_opt(a.n, "n")?;
    let out = a
        .common
        .out
        .ok_or_else(|| Error::Usage("simulate requires --out <path>".into()))?;
    let dgp = match design.as_str() {
        "observational" | "dr" => {
            let mut c = if design == "dr" { dr_dgp() } else { ObsDgpConfig::default() };
            c.n = n.unwrap_or(c.n);
            c.d = file.pick(a.d, "d", c.d)?;
            c.confounding_strength = file.pick(a.confounding, "confounding", c.confounding_strength)?;
            c.tau = file.pick(a.tau, "tau", c.tau)?;
            Design::Observational(c)
        }
        "iv" => {
            let mut c = IvDgpConfig::default();
            c.n = n.unwrap_or(c.n);
            if let Some(s) = file.pick_opt(a.first_stage, "first_stage")? {
                c = c.with_first_stage_strength(s)?;
            }
            Design::Iv(c)
        }
        "panel" => {
            let mut c = PanelDgpConfig::default();
            c.n_units = n.unwrap_or(c.n_units);
            c.n_periods = file.pick(a.periods, "periods", c.n_periods)?;
            c.parallel_violation = file.pick(a.parallel_violation, "parallel_violation", c.parallel_violation)?;
            c.treatment_effect = file.pick(a.tau, "tau", c.treatment_effect)?;
            Design::Panel(c)
        }
        "rd" => {
            let mut c = RdDgpConfig::default();
            c.n = n.unwrap_or(c.n);
            c.cutoff = file.pick(a.cutoff, "cutoff", c.cutoff)?;
            c.jump = file.pick(a.jump, "jump", c.jump)?;
            Design::Rd(c)
        }
        other => {
            return Err(Error::Usage(format!(
                "--design must be observational, dr, iv, panel or rd, got `{other}`"
            )))
        }
    };
    Ok(RunConfig::Simulate(SimulateConfig {
        seed,
        dgp,
        out,
        truth: a.truth,
        report: a.report,
    }))
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect()
}

fn resolve_estimate(a: EstimateArgs) -> Result<RunConfig> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let mut keys = vec!["seed", "level", "method", "bandwidth", "cutoff", "kernel", "caliper"];
    keys.extend(NUISANCE_KEYS);
    file.check_keys(&keys)?;
    let seed = file.pick(a.common.seed, "seed", DEFAULT_SEED)?;
    let method_flag: Option<Method> = parse_flag("method", a.method.as_ref())?;
    let method: Method = file
        .pick_opt(method_flag, "method")?
        .ok_or_else(|| Error::Usage("estimate requires --method".into()))?;
    if method == Method::IpwOracle {
        return Err(Error::Usage(
            "ipw_oracle needs true propensities and is available only in montecarlo runs".into(),
        ));
    }
    let level = file.pick(a.level, "level", crate::estimators::DEFAULT_LEVEL)?;
    let format: Format = a.format.parse()?;
    let treatment = a.treatment.unwrap_or_else(|| "a".into());
    let outcome = a.outcome.unwrap_or_else(|| "y".into());
    let mut cfg = EstimateConfig {
        seed,
        method,
        input: a.input,
        treatment,
        outcome,
        covariates: if a.no_covariates {
            Some(Vec::new())
        } else {
            a.covariates.as_deref().map(split_list)
        },
        instrument: None,
        panel: None,
        running: None,
        rd: None,
        matching: None,
        crossfit: None,
        level,
        format,
        out: a.common.out,
    };
    match method {
        m if obs_method(m) => {
            if m != Method::Naive {
                cfg.crossfit = Some(resolve_crossfit(&a.nuisance, &file, seed)?);
            }
            if m == Method::PsmAtt {
                cfg.matching = Some(MatchSpec {
                    caliper: file.pick_opt(a.caliper, "caliper")?,
                    with_replacement: a.with_replacement,
                });
            }
        }
        Method::Rd => {
            let cutoff = file
                .pick_opt(a.cutoff, "cutoff")?
                .ok_or_else(|| Error::Usage("--cutoff is required for --method rd".into()))?;
            let bandwidth = file
                .pick_opt(a.bandwidth, "bandwidth")?
                .ok_or_else(|| Error::Usage("--bandwidth is required for --method rd".into()))?;
            let kflag: Option<Kernel> = parse_flag("kernel", a.kernel.as_ref())?;
            let kernel = file.pick(kflag, "kernel", Kernel::Triangular)?;
            cfg.running = Some(a.running.unwrap_or_else(|| "x".into()));
            cfg.rd = Some(RdSpec {
                cutoff,
                bandwidth,
                kernel,
            });
        }
        Method::IvWald | Method::Tsls => {
            cfg.instrument = Some(a.instrument.unwrap_or_else(|| "z".into()));
            if method == Method::IvWald && cfg.covariates.as_ref().is_some_and(|c| !c.is_empty()) {
                return Err(Error::Usage("iv_wald takes no covariates; use tsls".into()));
            }
        }
        Method::Did | Method::DidPlacebo | Method::FeWithin => {
            cfg.panel = Some(PanelSchema {
                unit: a.unit.unwrap_or_else(|| "unit".into()),
                period: a.period.unwrap_or_else(|| "period".into()),
                treatment: cfg.treatment.clone(),
                outcome: cfg.outcome.clone(),
                group: a.group.unwrap_or_else(|| "group".into()),
            });
        }
        _ => unreachable!("all methods handled"),
    }
    Ok(RunConfig::Estimate(cfg))
}

fn resolve_montecarlo(a: MontecarloArgs) -> Result<RunConfig> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let mut keys = vec!["seed", "level", "reps", "n", "scenario", "dgp", "estimators"];
    keys.extend(NUISANCE_KEYS);
    file.check_keys(&keys)?;
    let seed = file.pick(a.common.seed, "seed", DEFAULT_SEED)?;
    let scenario: String = file.pick(a.scenario, "scenario", "all".into())?;
    let scenarios = if scenario == "all" {
        Scenario::ALL.to_vec()
    } else {
        vec![scenario.parse().map_err(|_| Error::Usage(format!("unknown --scenario `{scenario}`")))?]
    };
    let dgp_name: String = file.pick(a.dgp, "dgp", "dr".into())?;
    let dgp = match dgp_name.as_str() {
        "dr" => dr_dgp(),
        "linear" => ObsDgpConfig::default(),
        other => return Err(Error::Usage(format!("--dgp must be dr or linear, got `{other}`"))),
    };
    let estimators: String = file.pick(a.estimators, "estimators", "naive,ipw_ht,ipw_hajek,gformula,aipw".into())?;
    let estimators = split_list(&estimators)
        .iter()
        .map(|s| s.parse::<Method>().map_err(|_| Error::Usage(format!("unknown estimator `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    let defaults = McConfig::default();
    let mc = McConfig {
        dgp,
        estimators,
        reps: file.pick(a.reps, "reps", defaults.reps)?,
        n: file.pick(a.n, "n", defaults.n)?,
        seed,
        scenario: scenarios[0],
        crossfit: resolve_crossfit(&a.nuisance, &file, seed)?,
        level: file.pick(a.level, "level", defaults.level)?,
        vary_seed: true,
    };
    Ok(RunConfig::Montecarlo(MontecarloConfig {
        dgp_name,
        scenarios,
        mc,
        format: a.format.parse()?,
        out: a.common.out,
    }))
}

fn resolve_eif_check(a: EifCheckArgs) -> Result<RunConfig> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    file.check_keys(&["seed"])?;
    let seed = file.pick(a.common.seed, "seed", DEFAULT_SEED)?;
    a.functional
        .parse::<Functional>()
        .map_err(|_| Error::Usage(format!("unrecognized --functional `{}`", a.functional)))?;
    Ok(RunConfig::EifCheck(EifCheckConfig {
        seed,
        measure: a.measure,
        functional: a.functional,
        estimate_measure: a.estimate_measure,
        scores: a.scores,
        eps: EpsSchedule::default(),
        format: a.format.parse()?,
        out: a.common.out,
    }))
}

/// Parses `argv` (program name first) into a resolved configuration.
/// Clap failures, including `--help`, come back as [`Error::Usage`].
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::Usage(e.to_string()))?;
    resolve(cli)
}

fn resolve(cli: Cli) -> Result<RunConfig> {
    match cli.command {
        CliCommand::Simulate(a) => resolve_simulate(a),
        CliCommand::Estimate(a) => resolve_estimate(a),
        CliCommand::Montecarlo(a) => resolve_montecarlo(a),
        CliCommand::EifCheck(a) => resolve_eif_check(a),
    }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Estimate report; keys serialize in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub method: Method,
    pub psi_hat: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
    pub diagnostics: Value,
    pub config: RunConfig,
    pub version: &'static str,
}

impl EstimateReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "psi_hat", "se", "ci_low", "ci_high", "n", "seed", "version"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            self.method.to_string(),
            self.psi_hat.to_string(),
            opt(self.se),
            opt(self.ci_low),
            opt(self.ci_high),
            self.n.to_string(),
            self.config.seed().to_string(),
            self.version.to_string(),
        ])?;
        w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MontecarloReport {
    pub reports: Vec<crate::montecarlo::McReport>,
    pub config: RunConfig,
    pub version: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EifCheckReport {
    pub report: crate::eif::EifReport,
    pub config: RunConfig,
    pub version: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateManifest {
    pub rows: usize,
    pub data_columns: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_columns: Option<Vec<String>>,
    pub config: RunConfig,
    pub version: &'static str,
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Invariant(format!("serialization: {e}")))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn with_interval(est: f64, se: Option<f64>, level: f64) -> Result<(Option<f64>, Option<f64>)> {
    match se {
        Some(s) if s.is_finite() => {
            let h = normal_quantile(level)? * s;
            Ok((Some(est - h), Some(est + h)))
        }
        _ => Ok((None, None)),
    }
}

fn load_observational(table: &CsvTable, cfg: &EstimateConfig) -> Result<ObservationalDataset> {
    let covariates = match &cfg.covariates {
        Some(c) => c.clone(),
        None => table
            .headers()
            .iter()
            .filter(|h| **h != cfg.treatment && **h != cfg.outcome)
            .cloned()
            .collect(),
    };
    table.observational(&CsvSchema {
        treatment: cfg.treatment.clone(),
        outcome: cfg.outcome.clone(),
        covariates,
    })
}

/// Runs the estimate subcommand and builds its report.
pub fn estimate(config: &RunConfig) -> Result<EstimateReport> {
    let RunConfig::Estimate(cfg) = config else {
        return Err(Error::Invariant("estimate called with another subcommand".into()));
    };
    let table = CsvTable::from_path(&cfg.input)?;
    let level = cfg.level;
    let report = |psi_hat: f64, se: Option<f64>, ci: Option<(f64, f64)>, n: usize, diagnostics: Value| {
        let (ci_low, ci_high) = match ci {
            Some((l, h)) => (Some(l), Some(h)),
            None => with_interval(psi_hat, se, level)?,
        };
        Ok(EstimateReport {
            method: cfg.method,
            psi_hat,
            se,
            ci_low,
            ci_high,
            n,
            diagnostics,
            config: config.clone(),
            version: VERSION,
        })
    };
    match cfg.method {
        Method::Naive => {
            let data = load_observational(&table, cfg)?;
            let e = naive_dim(&data, level)?;
            let s = data.summarize();
            report(
                e.psi_hat,
                e.se,
                e.ci,
                e.n,
                json!({"treated": s.treated, "control": s.control, "d": s.d}),
            )
        }
        m if obs_method(m) => {
            let data = load_observational(&table, cfg)?;
            let cf = cfg.crossfit.as_ref().expect("cross-fit config resolved");
            let fit = cross_fit(&data, cf)?;
            let mut diag = json!({
                "k": cf.k,
                "clip": [cf.clip.0, cf.clip.1],
                "clip_count": fit.clip_count,
                "nonconverged_folds": fit.nonconverged_folds,
                "treated": data.treated_count(),
                "control": data.control_count(),
            });
            let est = match m {
                Method::IpwHt => ipw(&data, &fit.pi_hat, IpwNormalization::HorvitzThompson, level)?,
                Method::IpwHajek => ipw(&data, &fit.pi_hat, IpwNormalization::Hajek, level)?,
                Method::Gformula => g_formula(&fit.mu0_hat, &fit.mu1_hat)?,
                Method::PsmAtt => {
                    let spec = cfg.matching.unwrap_or_default();
                    let (e, table) = psm_att(&data, &fit.pi_hat, &spec, level)?;
                    diag["matched_pairs"] = json!(table.pairs.len());
                    diag["unmatched"] = json!(table.unmatched.len());
                    e
                }
                Method::Aipw => {
                    let a = aipw(&data, &fit, level)?;
                    diag["fold_means"] = json!(a.fold_means);
                    diag["fold_average"] = json!(a.fold_average);
                    diag["arm_means"] = json!({"psi0": a.arm_means.0, "psi1": a.arm_means.1});
                    a.estimate
                }
                _ => unreachable!(),
            };
            report(est.psi_hat, est.se, est.ci, est.n, diag)
        }
        Method::Rd => {
            let spec = cfg.rd.expect("rd spec resolved");
            let running = cfg.running.as_deref().unwrap_or("x");
            let x = table.numeric(running)?;
            let y = table.numeric(&cfg.outcome)?;
            let a: Vec<bool> = x.iter().map(|&v| v >= spec.cutoff).collect();
            let data = ObservationalDataset::from_rows(&x.iter().map(|&v| vec![v]).collect::<Vec<_>>(), a, y)?;
            let e = rd_local_linear(&data, &spec)?;
            report(
                e.jump,
                e.se,
                None,
                e.left.n + e.right.n,
                json!({"left": e.left, "right": e.right, "kernel": spec.kernel.as_str()}),
            )
        }
        Method::IvWald | Method::Tsls => {
            let instrument = cfg.instrument.clone().unwrap_or_else(|| "z".into());
            let covariates = match (&cfg.covariates, cfg.method) {
                (Some(c), _) => c.clone(),
                (None, Method::IvWald) => Vec::new(),
                (None, _) => table
                    .headers()
                    .iter()
                    .filter(|h| **h != cfg.treatment && **h != cfg.outcome && **h != instrument)
                    .cloned()
                    .collect(),
            };
            let iv = table.iv(&IvSchema {
                instrument,
                treatment: cfg.treatment.clone(),
                outcome: cfg.outcome.clone(),
                covariates,
            })?;
            let e = if cfg.method == Method::IvWald {
                iv_wald(&iv, level)?
            } else {
                tsls(&iv, level)?
            };
            report(
                e.late,
                e.se,
                e.ci,
                e.n,
                json!({"first_stage": e.first_stage, "reduced_form": e.reduced_form, "weak_instrument": e.weak_flag}),
            )
        }
        Method::Did | Method::DidPlacebo => {
            let panel = table.panel(cfg.panel.as_ref().expect("panel schema resolved"))?;
            let e = if cfg.method == Method::Did {
                did(&panel)?
            } else {
                did_placebo(&panel)?
            };
            report(
                e.estimate,
                e.se,
                None,
                panel.len(),
                json!({"cell_means": e.cell_means, "cell_counts": e.cell_counts, "periods": [e.periods.0, e.periods.1]}),
            )
        }
        Method::FeWithin => {
            let panel = table.panel(cfg.panel.as_ref().expect("panel schema resolved"))?;
            let e = fe_within(&panel)?;
            report(
                e.effect,
                e.se,
                None,
                e.n_obs,
                json!({"units": e.n_units, "units_without_variation": e.units_without_variation}),
            )
        }
        Method::IpwOracle => Err(Error::Usage("ipw_oracle is available only in montecarlo runs".into())),
        _ => unreachable!(),
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn truth_csv(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

/// Runs the simulate subcommand: writes the data file, the optional truth
/// sidecar, and returns the manifest.
pub fn simulate(config: &RunConfig) -> Result<SimulateManifest> {
    let RunConfig::Simulate(cfg) = config else {
        return Err(Error::Invariant("simulate called with another subcommand".into()));
    };
    let (data_bytes, truth_header, truth_rows, rows): (Vec<u8>, Vec<&str>, Vec<Vec<String>>, usize) = match &cfg.dgp {
        Design::Observational(c) => {
            let (d, t) = generate_observational(c, cfg.seed)?;
            let names: Vec<&str> = d.covariate_names().iter().map(String::as_str).collect();
            let schema = CsvSchema::new("a", "y", &names);
            let bytes = csv_bytes(|b| write_csv_to(&d, &schema, b))?;
            let rows = (0..d.len())
                .map(|i| vec![t.y1[i].to_string(), t.y0[i].to_string(), t.propensity[i].to_string()])
                .collect();
            (bytes, vec!["y1", "y0", "propensity"], rows, d.len())
        }
        Design::Iv(c) => {
            let (d, t) = generate_iv(c, cfg.seed)?;
            let bytes = csv_bytes(|b| write_iv_csv(&d, b))?;
            let rows = (0..d.len())
                .map(|i| vec![t.types[i].as_str().to_string(), t.y1[i].to_string(), t.y0[i].to_string()])
                .collect();
            (bytes, vec!["type", "y1", "y0"], rows, d.len())
        }
        Design::Panel(c) => {
            let (p, t) = generate_panel(c, cfg.seed)?;
            let bytes = csv_bytes(|b| write_panel_csv(&p, b))?;
            let rows = t
                .unit_effects
                .iter()
                .enumerate()
                .map(|(i, u)| vec![i.to_string(), u.to_string()])
                .collect();
            (bytes, vec!["unit", "unit_effect"], rows, p.len())
        }
        Design::Rd(c) => {
            let (d, t, _) = generate_rd(c, cfg.seed)?;
            let bytes = csv_bytes(|b| write_csv_to(&d, &CsvSchema::new("a", "y", &["x"]), b))?;
            let rows = (0..d.len())
                .map(|i| vec![t.y1[i].to_string(), t.y0[i].to_string()])
                .collect();
            (bytes, vec!["y1", "y0"], rows, d.len())
        }
    };
    emit(&data_bytes, Some(&cfg.out))?;
    if let Some(p) = &cfg.truth {
        emit(&truth_csv(&truth_header, truth_rows)?, Some(p))?;
    }
    let header_line = data_bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    let data_columns = String::from_utf8_lossy(header_line)
        .split(',')
        .map(str::to_string)
        .collect();
    Ok(SimulateManifest {
        rows,
        data_columns,
        truth_columns: cfg
            .truth
            .as_ref()
            .map(|_| truth_header.iter().map(|s| s.to_string()).collect()),
        config: config.clone(),
        version: VERSION,
    })
}

pub fn montecarlo(config: &RunConfig) -> Result<MontecarloReport> {
    let RunConfig::Montecarlo(cfg) = config else {
        return Err(Error::Invariant("montecarlo called with another subcommand".into()));
    };
    let reports = cfg
        .scenarios
        .iter()
        .map(|&scenario| run_mc(&McConfig { scenario, ..cfg.mc.clone() }))
        .collect::<Result<Vec<_>>>()?;
    Ok(MontecarloReport {
        reports,
        config: config.clone(),
        version: VERSION,
    })
}

fn load_measure(path: &Path) -> Result<DiscreteMeasure> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    DiscreteMeasure::from_csv_reader(file)
}

pub fn eif_check(config: &RunConfig) -> Result<EifCheckReport> {
    let RunConfig::EifCheck(cfg) = config else {
        return Err(Error::Invariant("eif_check called with another subcommand".into()));
    };
    let m = load_measure(&cfg.measure)?;
    let est = cfg.estimate_measure.as_deref().map(load_measure).transpose()?;
    let f: Functional = cfg.functional.parse()?;
    let mut rng = stream_rng(cfg.seed, Stream::Scores);
    let report = eif_report(&f, &m, &cfg.eps, cfg.scores, &mut rng, est.as_ref())?;
    Ok(EifCheckReport {
        report,
        config: config.clone(),
        version: VERSION,
    })
}

fn eif_csv(r: &EifCheckReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = r.report.coords.clone();
    header.extend(["prob", "numerical", "fd_error", "closed_form", "abs_diff"].map(String::from));
    w.write_record(&header)?;
    for p in &r.report.points {
        let mut row: Vec<String> = p.point.iter().map(|v| v.to_string()).collect();
        row.extend([p.prob, p.numerical, p.fd_error, p.closed_form, p.abs_diff].map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

/// Executes a resolved configuration, writing its report.
pub fn execute(config: &RunConfig) -> Result<()> {
    match config {
        RunConfig::Simulate(c) => {
            let manifest = simulate(config)?;
            emit(&to_json(&manifest)?, c.report.as_deref())
        }
        RunConfig::Estimate(c) => {
            let r = estimate(config)?;
            let bytes = match c.format {
                Format::Json => to_json(&r)?,
                Format::Csv => r.to_csv()?,
            };
            emit(&bytes, c.out.as_deref())
        }
        RunConfig::Montecarlo(c) => {
            let r = montecarlo(config)?;
            let bytes = match c.format {
                Format::Json => to_json(&r)?,
                Format::Csv => csv_bytes(|b| write_reports_csv(&r.reports, b))?,
            };
            emit(&bytes, c.out.as_deref())
        }
        RunConfig::EifCheck(c) => {
            let r = eif_check(config)?;
            let bytes = match c.format {
                Format::Json => to_json(&r)?,
                Format::Csv => eif_csv(&r)?,
            };
            emit(&bytes, c.out.as_deref())
        }
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match resolve(cli).and_then(|c| execute(&c)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
