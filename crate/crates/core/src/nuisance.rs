//! Propensity and outcome learners, fold assignment and cross-fitting.
//!
//! Both learners minimise a per-unit averaged loss with a ridge penalty on
//! the non-intercept coefficients:
//!
//! * logistic: maximise `(1/n) sum [a*eta - log(1 + e^eta)] - (lambda/2) |beta_{1..}|^2`
//! * linear: minimise `(1/2n) |y - X beta|^2 + (lambda/2) |beta_{1..}|^2`

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::ObservationalDataset;
use crate::dgp::logistic;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{solve_spd, with_intercept};
use crate::rng::{stream_rng, Stream};

/// Allowed decrease of the penalised log-likelihood in one accepted step.
const MONOTONE_SLACK: f64 = 1e-9;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub features: FeatureMap,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            tol: 1e-8,
            max_iter: 100,
            features: FeatureMap::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearOptions {
    pub lambda: f64,
    pub features: FeatureMap,
}

impl Default for LinearOptions {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            features: FeatureMap::Linear,
        }
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn penalty(beta: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * lambda * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    /// Intercept first, then one coefficient per expanded feature.
    pub coefficients: Vec<f64>,
    pub ridge_lambda: f64,
    pub features: FeatureMap,
    pub converged: bool,
    pub iterations: usize,
    /// Penalised log-likelihood (per unit) after each accepted step, starting
    /// from the initial coefficients.
    pub objective_trace: Vec<f64>,
}

impl PropensityModel {
    pub fn linear_index(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let design = with_intercept(&self.features.expand(x));
        let beta = DVector::from_column_slice(&self.coefficients);
        (design * beta).iter().copied().collect()
    }

    /// Predicted `P(A = 1 | X)`, kept strictly inside (0, 1).
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.linear_index(x)
            .into_iter()
            .map(|t| logistic(t).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
            .collect()
    }
}

struct LogisticProblem<'a> {
    design: DMatrix<f64>,
    a: &'a [bool],
    lambda: f64,
}

impl LogisticProblem<'_> {
    fn n(&self) -> f64 {
        self.design.nrows() as f64
    }

    fn objective(&self, beta: &DVector<f64>) -> f64 {
        let eta = &self.design * beta;
        let ll: f64 = eta
            .iter()
            .zip(self.a)
            .map(|(&t, &a)| if a { t - softplus(t) } else { -softplus(t) })
            .sum();
        ll / self.n() - penalty(beta, self.lambda)
    }

    fn gradient_hessian(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = beta.len();
        let n = self.n();
        let eta = &self.design * beta;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for (i, &t) in eta.iter().enumerate() {
            let mu = logistic(t);
            let resid = if self.a[i] { 1.0 } else { 0.0 } - mu;
            let w = mu * (1.0 - mu);
            let row = self.design.row(i);
            for j in 0..p {
                grad[j] += row[j] * resid;
                let wj = w * row[j];
                for k in j..p {
                    hess[(j, k)] += wj * row[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                hess[(j, k)] = hess[(k, j)];
            }
        }
        grad /= n;
        hess /= n;
        for j in 1..p {
            grad[j] -= self.lambda * beta[j];
            hess[(j, j)] += self.lambda;
        }
        (grad, hess)
    }
}

/// Gradient of the penalised per-unit log-likelihood at `coefficients`.
pub fn logistic_gradient(x: &DMatrix<f64>, a: &[bool], model: &PropensityModel) -> Vec<f64> {
    let problem = LogisticProblem {
        design: with_intercept(&model.features.expand(x)),
        a,
        lambda: model.ridge_lambda,
    };
    let beta = DVector::from_column_slice(&model.coefficients);
    problem.gradient_hessian(&beta).0.iter().copied().collect()
}

/// Ridge-penalised logistic regression by Newton/IRLS with step halving.
///
/// Non-convergence is reported through `converged`, not as an error.
pub fn fit_logistic(x: &DMatrix<f64>, a: &[bool], opts: &LogisticOptions) -> Result<PropensityModel> {
    if x.nrows() != a.len() {
        return Err(Error::Validation("fit_logistic: X and A differ in length".into()));
    }
    if a.is_empty() {
        return Err(Error::InsufficientData("fit_logistic: no units".into()));
    }
    if !(opts.lambda >= 0.0) || !(opts.tol > 0.0) {
        return Err(Error::Config("fit_logistic: need lambda >= 0 and tol > 0".into()));
    }
    let n1 = a.iter().filter(|&&v| v).count();
    if opts.lambda == 0.0 && (n1 == 0 || n1 == a.len()) {
        return Err(Error::Separation(if n1 == 0 { "all zero" } else { "all one" }));
    }
    let problem = LogisticProblem {
        design: with_intercept(&opts.features.expand(x)),
        a,
        lambda: opts.lambda,
    };
    let p = problem.design.ncols();

    // Start from the intercept-only MLE (shrunk when an arm is empty).
    let share = ((n1 as f64 + 0.5) / (a.len() as f64 + 1.0)).clamp(1e-6, 1.0 - 1e-6);
    let mut beta = DVector::zeros(p);
    beta[0] = (share / (1.0 - share)).ln();

    let mut obj = problem.objective(&beta);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let (grad, hess) = problem.gradient_hessian(&beta);
        if grad.amax() < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(chol) = hess.cholesky() else { break };
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = &beta + &step * scale;
            let cand_obj = problem.objective(&candidate);
            if cand_obj.is_finite() && cand_obj >= obj - MONOTONE_SLACK {
                accepted = Some((candidate, cand_obj));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_obj)) = accepted else { break };
        let stalled = (&next - &beta).amax() == 0.0;
        beta = next;
        obj = next_obj;
        trace.push(obj);
        if stalled {
            break;
        }
    }
    if !converged {
        let (grad, _) = problem.gradient_hessian(&beta);
        converged = grad.amax() < opts.tol;
    }
    Ok(PropensityModel {
        coefficients: beta.iter().copied().collect(),
        ridge_lambda: opts.lambda,
        features: opts.features,
        converged,
        iterations,
        objective_trace: trace,
    })
}

/// Outcome regression for one treatment arm.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    pub coefficients: Vec<f64>,
    pub ridge_lambda: f64,
    pub arm: bool,
    pub features: FeatureMap,
}

impl OutcomeModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let design = with_intercept(&self.features.expand(x));
        let beta = DVector::from_column_slice(&self.coefficients);
        (design * beta).iter().copied().collect()
    }
}

/// Ridge least squares on `(1, features(X))`; the intercept is unpenalised.
pub fn fit_linear(x: &DMatrix<f64>, y: &[f64], opts: &LinearOptions) -> Result<Vec<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::Validation("fit_linear: X and Y differ in length".into()));
    }
    if y.is_empty() {
        return Err(Error::InsufficientData("fit_linear: no units".into()));
    }
    if !(opts.lambda >= 0.0) {
        return Err(Error::Config("fit_linear: lambda must be >= 0".into()));
    }
    let design = with_intercept(&opts.features.expand(x));
    let n = y.len() as f64;
    let p = design.ncols();
    let mut lhs = design.tr_mul(&design) / n;
    for j in 1..p {
        lhs[(j, j)] += opts.lambda;
    }
    let rhs = design.tr_mul(&DVector::from_column_slice(y)) / n;
    let beta = solve_spd(&lhs, &rhs, "linear outcome model")?;
    Ok(beta.iter().copied().collect())
}

/// Fit the outcome model of `arm` on the units of that arm only.
pub fn fit_outcome(data: &ObservationalDataset, arm: bool, opts: &LinearOptions) -> Result<OutcomeModel> {
    let idx: Vec<usize> = (0..data.len()).filter(|&i| data.treatment()[i] == arm).collect();
    if idx.is_empty() {
        return Err(Error::EmptyArm(if arm { "treated" } else { "control" }));
    }
    let sub = data.subset(&idx);
    let coefficients = fit_linear(sub.covariates(), sub.outcome(), opts)?;
    Ok(OutcomeModel {
        coefficients,
        ridge_lambda: opts.lambda,
        arm,
        features: opts.features,
    })
}

/// Fold label per unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
}

impl FoldAssignment {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}

/// Shuffle `0..n` and cut it into `k` blocks; the first `n mod k` blocks get
/// one extra unit.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::Config(format!("need 2 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, Stream::Folds));
    let base = n / k;
    let extra = n % k;
    let mut fold_of = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &perm[pos..pos + size] {
            fold_of[i] = fold;
        }
        pos += size;
    }
    Ok(FoldAssignment { fold_of, k })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFitConfig {
    pub k: usize,
    pub propensity: LogisticOptions,
    pub outcome: LinearOptions,
    pub clip: (f64, f64),
    pub seed: u64,
}

impl Default for CrossFitConfig {
    fn default() -> Self {
        Self {
            k: 5,
            propensity: LogisticOptions::default(),
            outcome: LinearOptions::default(),
            clip: (0.01, 0.99),
            seed: 0,
        }
    }
}

fn check_clip(clip: (f64, f64)) -> Result<()> {
    let (lo, hi) = clip;
    if !(lo > 0.0 && lo < hi && hi < 1.0) {
        return Err(Error::Config(format!("clip bounds must satisfy 0 < lo < hi < 1, got {lo}, {hi}")));
    }
    Ok(())
}

/// Clamp propensities into `[lo, hi]` and count how many moved.
pub fn clip_propensities(raw: &[f64], clip: (f64, f64)) -> (Vec<f64>, usize) {
    let mut count = 0;
    let out = raw
        .iter()
        .map(|&p| {
            let c = p.clamp(clip.0, clip.1);
            if c != p {
                count += 1;
            }
            c
        })
        .collect();
    (out, count)
}

/// Out-of-fold nuisance predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub pi_hat: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
    pub folds: FoldAssignment,
    pub clip: (f64, f64),
    pub clip_count: usize,
    /// Folds whose propensity model did not reach the gradient tolerance.
    pub nonconverged_folds: usize,
}

impl NuisanceFit {
    /// Wrap externally supplied predictions (oracle or hand-built nuisances).
    /// Propensities are clipped like cross-fitted ones.
    pub fn from_predictions(
        raw_pi: &[f64],
        mu0_hat: Vec<f64>,
        mu1_hat: Vec<f64>,
        folds: FoldAssignment,
        clip: (f64, f64),
    ) -> Result<Self> {
        check_clip(clip)?;
        let n = raw_pi.len();
        if mu0_hat.len() != n || mu1_hat.len() != n || folds.fold_of.len() != n {
            return Err(Error::Validation("nuisance vectors differ in length".into()));
        }
        if raw_pi.iter().chain(&mu0_hat).chain(&mu1_hat).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite nuisance prediction".into()));
        }
        let (pi_hat, clip_count) = clip_propensities(raw_pi, clip);
        Ok(Self {
            pi_hat,
            mu0_hat,
            mu1_hat,
            folds,
            clip,
            clip_count,
            nonconverged_folds: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.pi_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi_hat.is_empty()
    }
}

/// Single fold covering every unit, for nuisances not produced by splitting.
pub fn single_fold(n: usize) -> FoldAssignment {
    FoldAssignment {
        fold_of: vec![0; n],
        k: 1,
    }
}

/// Cross-fit the propensity and both outcome models: for each fold, models
/// trained on the other folds predict that fold.
pub fn cross_fit(data: &ObservationalDataset, config: &CrossFitConfig) -> Result<NuisanceFit> {
    check_clip(config.clip)?;
    let n = data.len();
    let folds = make_folds(n, config.k, config.seed)?;
    let mut raw_pi = vec![0.0; n];
    let mut mu0 = vec![0.0; n];
    let mut mu1 = vec![0.0; n];
    let mut nonconverged = 0;
    for fold in 0..config.k {
        let train_idx = folds.complement(fold);
        let test_idx = folds.members(fold);
        let train = data.subset(&train_idx);
        if train.treated_count() == 0 {
            return Err(Error::Fold { fold, arm: "treated" });
        }
        if train.control_count() == 0 {
            return Err(Error::Fold { fold, arm: "control" });
        }
        let test = data.subset(&test_idx);
        let prop = fit_logistic(train.covariates(), train.treatment(), &config.propensity)?;
        if !prop.converged {
            nonconverged += 1;
        }
        let m0 = fit_outcome(&train, false, &config.outcome)?;
        let m1 = fit_outcome(&train, true, &config.outcome)?;
        let p = prop.predict(test.covariates());
        let p0 = m0.predict(test.covariates());
        let p1 = m1.predict(test.covariates());
        for (j, &i) in test_idx.iter().enumerate() {
            raw_pi[i] = p[j];
            mu0[i] = p0[j];
            mu1[i] = p1[j];
        }
    }
    let mut fit = NuisanceFit::from_predictions(&raw_pi, mu0, mu1, folds, config.clip)?;
    fit.nonconverged_folds = nonconverged;
    Ok(fit)
}
