//! Difference in differences, sharp regression discontinuity, instrumental
//! variables and the fixed-effects within estimator.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{IvDataset, Method, ObservationalDataset, PanelDataset, PanelRecord};
use crate::dgp::{generate_iv, IvDgpConfig};
use crate::error::{Error, Result};
use crate::estimators::normal_quantile;
use crate::linalg::{ols, solve_spd, wls};
use crate::rng::replication_seed;

/// `|first stage|` below this sets [`IvEstimate::weak_flag`].
pub const WEAK_FIRST_STAGE: f64 = 0.05;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

// ---------------------------------------------------------------------------
// Difference in differences
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DidEstimate {
    pub estimate: f64,
    /// `cell_means[group][0]` is the pre period, `[group][1]` the post period.
    pub cell_means: [[f64; 2]; 2],
    pub cell_counts: [[usize; 2]; 2],
    pub periods: (i64, i64),
    /// Cell-variance combination; absent when a cell has fewer than 2 records.
    pub se: Option<f64>,
}

impl DidEstimate {
    /// Double difference recomputed from the stored cell means.
    pub fn from_cells(m: &[[f64; 2]; 2]) -> f64 {
        (m[1][1] - m[1][0]) - (m[0][1] - m[0][0])
    }
}

fn did_on_periods(records: &[PanelRecord], pre: i64, post: i64) -> Result<DidEstimate> {
    let mut cells: [[Vec<f64>; 2]; 2] = Default::default();
    for r in records {
        let t = if r.period == pre {
            0
        } else if r.period == post {
            1
        } else {
            continue;
        };
        cells[usize::from(r.group)][t].push(r.y);
    }
    let mut cell_means = [[0.0; 2]; 2];
    let mut cell_counts = [[0; 2]; 2];
    let mut var_sum = 0.0;
    let mut se_ok = true;
    for g in 0..2 {
        for t in 0..2 {
            let c = &cells[g][t];
            if c.is_empty() {
                return Err(Error::EmptyCell {
                    group: g as u8,
                    period: if t == 0 { pre } else { post },
                });
            }
            cell_means[g][t] = mean(c);
            cell_counts[g][t] = c.len();
            if c.len() < 2 {
                se_ok = false;
            } else {
                var_sum += sample_var(c) / c.len() as f64;
            }
        }
    }
    Ok(DidEstimate {
        estimate: DidEstimate::from_cells(&cell_means),
        cell_means,
        cell_counts,
        periods: (pre, post),
        se: se_ok.then(|| var_sum.sqrt()),
    })
}

/// Two-group two-period DID; with more periods the first and last are used.
pub fn did(panel: &PanelDataset) -> Result<DidEstimate> {
    let periods = panel.periods();
    if periods.len() < 2 {
        return Err(Error::InsufficientData("DID needs at least two periods".into()));
    }
    did_on_periods(panel.records(), periods[0], periods[periods.len() - 1])
}

/// DID between the last two periods before treatment starts. Under parallel
/// trends this is zero in expectation.
pub fn did_placebo(panel: &PanelDataset) -> Result<DidEstimate> {
    let start = panel
        .records()
        .iter()
        .filter(|r| r.treated)
        .map(|r| r.period)
        .min()
        .ok_or_else(|| Error::Identification("no treated records, treatment start unknown".into()))?;
    let pre: Vec<i64> = panel.periods().into_iter().filter(|&p| p < start).collect();
    if pre.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "placebo needs two pre-treatment periods, found {}",
            pre.len()
        )));
    }
    did_on_periods(panel.records(), pre[pre.len() - 2], pre[pre.len() - 1])
}

// ---------------------------------------------------------------------------
// Regression discontinuity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Rectangular,
    Triangular,
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangular" => Ok(Kernel::Rectangular),
            "triangular" => Ok(Kernel::Triangular),
            _ => Err(Error::Config(format!("unknown kernel `{s}`"))),
        }
    }
}

impl Kernel {
    pub fn as_str(self) -> &'static str {
        match self {
            Kernel::Rectangular => "rectangular",
            Kernel::Triangular => "triangular",
        }
    }

    /// Weight of a point at distance `u = |x - c| / h`.
    pub fn weight(self, u: f64) -> f64 {
        match self {
            Kernel::Rectangular => {
                if u <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Triangular => (1.0 - u).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdSpec {
    pub cutoff: f64,
    pub bandwidth: f64,
    pub kernel: Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalFit {
    pub intercept: f64,
    pub slope: f64,
    pub n: usize,
    pub intercept_var: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RdEstimate {
    pub jump: f64,
    pub left: LocalFit,
    pub right: LocalFit,
    pub se: Option<f64>,
}

fn local_linear_side(x: &[f64], y: &[f64], w: &[f64], side: &'static str) -> Result<LocalFit> {
    let used: Vec<usize> = (0..x.len()).filter(|&i| w[i] > 0.0).collect();
    if used.len() < 2 {
        return Err(Error::Bandwidth {
            side,
            count: used.len(),
        });
    }
    let design = DMatrix::from_fn(used.len(), 2, |r, c| if c == 0 { 1.0 } else { x[used[r]] });
    let yy: Vec<f64> = used.iter().map(|&i| y[i]).collect();
    let ww: Vec<f64> = used.iter().map(|&i| w[i]).collect();
    let beta = wls(&design, &yy, &ww, side)?;
    // HC0 sandwich for the intercept.
    let intercept_var = (used.len() > 2).then(|| {
        let mut bread = DMatrix::zeros(2, 2);
        let mut meat = DMatrix::zeros(2, 2);
        for r in 0..used.len() {
            let row = DVector::from_vec(vec![1.0, design[(r, 1)]]);
            let e = yy[r] - beta[0] - beta[1] * design[(r, 1)];
            bread += &row * row.transpose() * ww[r];
            meat += &row * row.transpose() * (ww[r] * ww[r] * e * e);
        }
        bread
            .try_inverse()
            .map(|b| (&b * meat * &b)[(0, 0)])
            .unwrap_or(f64::NAN)
    });
    Ok(LocalFit {
        intercept: beta[0],
        slope: beta[1],
        n: used.len(),
        intercept_var: intercept_var.filter(|v| v.is_finite()),
    })
}

/// Local linear fits of `y` on `(1, x - c)` on each side of the cutoff; the
/// running variable is covariate column 0. Returns the intercept gap.
pub fn rd_local_linear(data: &ObservationalDataset, spec: &RdSpec) -> Result<RdEstimate> {
    if !(spec.bandwidth > 0.0) {
        return Err(Error::Config("bandwidth must be positive".into()));
    }
    if data.dim() == 0 {
        return Err(Error::Validation("RD needs a running variable in covariate column 0".into()));
    }
    let c = spec.cutoff;
    let centered: Vec<f64> = data.covariates().column(0).iter().map(|x| x - c).collect();
    let y = data.outcome();
    let weight = |dx: f64, right: bool| {
        if (dx >= 0.0) == right {
            spec.kernel.weight(dx.abs() / spec.bandwidth)
        } else {
            0.0
        }
    };
    let wl: Vec<f64> = centered.iter().map(|&d| weight(d, false)).collect();
    let wr: Vec<f64> = centered.iter().map(|&d| weight(d, true)).collect();
    let left = local_linear_side(&centered, y, &wl, "left")?;
    let right = local_linear_side(&centered, y, &wr, "right")?;
    let se = match (left.intercept_var, right.intercept_var) {
        (Some(l), Some(r)) => Some((l + r).sqrt()),
        _ => None,
    };
    Ok(RdEstimate {
        jump: right.intercept - left.intercept,
        left,
        right,
        se,
    })
}

// ---------------------------------------------------------------------------
// Instrumental variables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IvEstimate {
    pub method: Method,
    pub late: f64,
    pub first_stage: f64,
    pub reduced_form: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub weak_flag: bool,
    pub n: usize,
}

fn bool_f64(v: &[bool]) -> Vec<f64> {
    v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

fn by_instrument(values: &[f64], z: &[bool]) -> (f64, f64) {
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &zi) in values.iter().zip(z) {
        if zi {
            s1 += v;
            n1 += 1;
        } else {
            s0 += v;
            n0 += 1;
        }
    }
    (s1 / n1 as f64, s0 / n0 as f64)
}

fn finish_iv(method: Method, late: f64, fs: f64, rf: f64, var: Option<f64>, n: usize, level: f64) -> Result<IvEstimate> {
    let se = var.filter(|v| v.is_finite() && *v >= 0.0).map(f64::sqrt);
    let ci = match se {
        Some(s) => {
            let h = normal_quantile(level)? * s;
            Some((late - h, late + h))
        }
        None => None,
    };
    Ok(IvEstimate {
        method,
        late,
        first_stage: fs,
        reduced_form: rf,
        se,
        ci,
        weak_flag: fs.abs() < WEAK_FIRST_STAGE,
        n,
    })
}

/// Wald estimator: reduced form over first stage, both as differences in
/// means by instrument arm. The standard error uses the influence values
/// `(z - zbar) e / cov(z, a)` with `e` the structural residual.
pub fn iv_wald(iv: &IvDataset, level: f64) -> Result<IvEstimate> {
    let z = iv.instrument();
    let n1 = z.iter().filter(|&&v| v).count();
    if n1 == 0 || n1 == z.len() {
        return Err(Error::Identification("instrument takes a single value".into()));
    }
    let a = bool_f64(iv.treatment());
    let y = iv.outcome();
    let (a1, a0) = by_instrument(&a, z);
    let (y1, y0) = by_instrument(y, z);
    let fs = a1 - a0;
    let rf = y1 - y0;
    if fs == 0.0 {
        return Err(Error::InstrumentIrrelevant);
    }
    let late = rf / fs;

    let n = iv.len() as f64;
    let zf = bool_f64(z);
    let (zbar, abar, ybar) = (mean(&zf), mean(&a), mean(y));
    let s_za: f64 = zf.iter().zip(&a).map(|(zi, ai)| (zi - zbar) * (ai - abar)).sum();
    let meat: f64 = (0..iv.len())
        .map(|i| {
            let e = (y[i] - ybar) - late * (a[i] - abar);
            let dz = zf[i] - zbar;
            dz * dz * e * e
        })
        .sum();
    let var = (n >= 2.0).then(|| meat / (s_za * s_za));
    finish_iv(Method::IvWald, late, fs, rf, var, iv.len(), level)
}

/// Two-stage least squares, just identified: one binary instrument, one
/// binary treatment, optional exogenous covariates in both stages.
///
/// `first_stage` and `reduced_form` are the instrument coefficients in the
/// regressions of `a` and `y` on `(1, z, x)`; `late` is their ratio, which
/// equals the stage-two coefficient on the fitted treatment.
pub fn tsls(iv: &IvDataset, level: f64) -> Result<IvEstimate> {
    let n = iv.len();
    let d = iv.covariates().map_or(0, |x| x.ncols());
    let zf = bool_f64(iv.instrument());
    let a = bool_f64(iv.treatment());
    let y = iv.outcome();
    let exog = |i: usize, j: usize| iv.covariates().map_or(0.0, |x| x[(i, j)]);
    let instruments = DMatrix::from_fn(n, 2 + d, |i, j| match j {
        0 => 1.0,
        1 => zf[i],
        _ => exog(i, j - 2),
    });
    let gamma = ols(&instruments, &a, "first stage")?;
    let fs = gamma[1];
    if fs == 0.0 {
        return Err(Error::InstrumentIrrelevant);
    }
    let rho = ols(&instruments, y, "reduced form")?;
    let rf = rho[1];
    let a_hat = &instruments * &gamma;
    let fitted = DMatrix::from_fn(n, 2 + d, |i, j| match j {
        0 => 1.0,
        1 => a_hat[i],
        _ => exog(i, j - 2),
    });
    let beta = ols(&fitted, y, "second stage")?;
    let late = rf / fs;

    // HC0 sandwich with structural residuals y - [1, a, x] beta.
    let mut bread = DMatrix::zeros(2 + d, 2 + d);
    let mut meat = DMatrix::zeros(2 + d, 2 + d);
    for i in 0..n {
        let row = fitted.row(i).transpose();
        let mut pred = beta[0] + beta[1] * a[i];
        for j in 0..d {
            pred += beta[2 + j] * exog(i, j);
        }
        let e = y[i] - pred;
        bread += &row * row.transpose();
        meat += &row * row.transpose() * (e * e);
    }
    let p = 2 + d;
    let ident = DMatrix::identity(p, p);
    let var = (0..p)
        .map(|j| solve_spd(&bread, &ident.column(j).into_owned(), "second stage"))
        .collect::<Result<Vec<_>>>()
        .ok()
        .map(|cols| {
            let inv = DMatrix::from_columns(&cols);
            (&inv * meat * &inv)[(1, 1)]
        });
    finish_iv(Method::Tsls, late, fs, rf, var, n, level)
}

// ---------------------------------------------------------------------------
// Fixed effects
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeEstimate {
    pub effect: f64,
    pub se: Option<f64>,
    pub n_obs: usize,
    pub n_units: usize,
    /// Units whose treatment never changes (or observed once); they add
    /// nothing to the slope.
    pub units_without_variation: usize,
}

/// Pooled OLS of unit-demeaned outcome on unit-demeaned treatment.
pub fn fe_within(panel: &PanelDataset) -> Result<FeEstimate> {
    let mut by_unit: BTreeMap<i64, Vec<&PanelRecord>> = BTreeMap::new();
    for r in panel.records() {
        by_unit.entry(r.unit).or_default().push(r);
    }
    let mut a_dm = Vec::with_capacity(panel.len());
    let mut y_dm = Vec::with_capacity(panel.len());
    let mut without = 0;
    for recs in by_unit.values() {
        let k = recs.len() as f64;
        let abar = recs.iter().map(|r| if r.treated { 1.0 } else { 0.0 }).sum::<f64>() / k;
        let ybar = recs.iter().map(|r| r.y).sum::<f64>() / k;
        if recs.len() < 2 || abar == 0.0 || abar == 1.0 {
            without += 1;
        }
        for r in recs {
            a_dm.push(if r.treated { 1.0 } else { 0.0 } - abar);
            y_dm.push(r.y - ybar);
        }
    }
    let saa: f64 = a_dm.iter().map(|v| v * v).sum();
    if saa == 0.0 {
        return Err(Error::Identification("no within-unit treatment variation".into()));
    }
    let say: f64 = a_dm.iter().zip(&y_dm).map(|(a, y)| a * y).sum();
    let effect = say / saa;
    let dof = panel.len() as f64 - by_unit.len() as f64 - 1.0;
    let se = (dof > 0.0).then(|| {
        let rss: f64 = a_dm.iter().zip(&y_dm).map(|(a, y)| (y - effect * a).powi(2)).sum();
        (rss / dof / saa).sqrt()
    });
    Ok(FeEstimate {
        effect,
        se,
        n_obs: panel.len(),
        n_units: by_unit.len(),
        units_without_variation: without,
    })
}

// ---------------------------------------------------------------------------
// Weak-instrument study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakIvConfig {
    pub base: IvDgpConfig,
    pub strengths: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakIvRow {
    pub strength: f64,
    pub reps: usize,
    pub failures: usize,
    pub median_late: f64,
    pub median_bias: f64,
    /// Approximate standard error of the median estimate (normal-IQR rule).
    pub median_se: f64,
    pub median_ci_width: f64,
    pub weak_share: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Monte Carlo of the Wald estimator across first-stage strengths. Strength
/// zero is rejected (the estimand is not identified there).
pub fn weak_iv_study(config: &WeakIvConfig) -> Result<Vec<WeakIvRow>> {
    if config.reps < 2 {
        return Err(Error::Config("weak IV study needs at least 2 replications".into()));
    }
    config
        .strengths
        .iter()
        .map(|&s| {
            if !(s > 0.0) {
                return Err(Error::Config("first-stage strength must be positive".into()));
            }
            let dgp = config.base.with_first_stage_strength(s)?;
            let outcomes: Vec<Result<Option<IvEstimate>>> = (0..config.reps)
                .into_par_iter()
                .map(|r| {
                    let (iv, _) = generate_iv(&dgp, replication_seed(config.seed, r))?;
                    match iv_wald(&iv, config.level) {
                        Ok(e) => Ok(Some(e)),
                        Err(Error::InstrumentIrrelevant | Error::Identification(_)) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect();
            let mut lates = Vec::new();
            let mut widths = Vec::new();
            let mut weak = 0;
            for o in outcomes {
                if let Some(e) = o? {
                    lates.push(e.late);
                    weak += usize::from(e.weak_flag);
                    if let Some((lo, hi)) = e.ci {
                        widths.push(hi - lo);
                    }
                }
            }
            if lates.len() < 2 || widths.is_empty() {
                return Err(Error::InsufficientData(format!("strength {s}: too few usable replications")));
            }
            lates.sort_by(f64::total_cmp);
            widths.sort_by(f64::total_cmp);
            let med = median(&lates);
            let iqr = quantile(&lates, 0.75) - quantile(&lates, 0.25);
            Ok(WeakIvRow {
                strength: s,
                reps: config.reps,
                failures: config.reps - lates.len(),
                median_late: med,
                median_bias: med - dgp.effect_by_type.complier,
                median_se: 1.2533 * (iqr / 1.349) / (lates.len() as f64).sqrt(),
                median_ci_width: median(&widths),
                weak_share: weak as f64 / lates.len() as f64,
            })
        })
        .collect()
}
