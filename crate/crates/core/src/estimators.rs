//! ATE estimators: difference in means, IPW, g-formula, propensity matching
//! and the cross-fitted augmented IPW estimator.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{AteEstimate, Method, ObservationalDataset};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceFit;

pub const DEFAULT_LEVEL: f64 = 0.95;

fn indicator(a: bool) -> f64 {
    if a {
        1.0
    } else {
        0.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with `n - 1` divisor.
fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Standard-normal quantile `z` with `P(|Z| <= z) = level`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} outside (0, 1)")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

/// Standard error and interval from per-unit influence values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inference {
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// `se = sd(eif) / sqrt(n)` with the `n - 1` divisor, and a normal interval
/// around `psi_hat`.
pub fn variance_ci(psi_hat: f64, eif: &[f64], level: f64) -> Result<Inference> {
    if eif.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "variance needs at least 2 influence values, got {}",
            eif.len()
        )));
    }
    let se = (sample_var(eif) / eif.len() as f64).sqrt();
    interval(psi_hat, se, level)
}

fn interval(psi_hat: f64, se: f64, level: f64) -> Result<Inference> {
    let half = normal_quantile(level)? * se;
    Ok(Inference {
        se,
        ci_low: psi_hat - half,
        ci_high: psi_hat + half,
    })
}

fn with_inference(mut est: AteEstimate, inf: Inference) -> AteEstimate {
    est.se = Some(inf.se);
    est.ci = Some((inf.ci_low, inf.ci_high));
    est
}

fn split_arms(data: &ObservationalDataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut t, mut c) = (Vec::new(), Vec::new());
    for (&a, &y) in data.treatment().iter().zip(data.outcome()) {
        if a {
            t.push(y)
        } else {
            c.push(y)
        }
    }
    if t.is_empty() {
        return Err(Error::EmptyArm("treated"));
    }
    if c.is_empty() {
        return Err(Error::EmptyArm("control"));
    }
    Ok((t, c))
}

/// Difference in arm means with the two-sample standard error (present when
/// both arms have at least two units).
pub fn naive_dim(data: &ObservationalDataset, level: f64) -> Result<AteEstimate> {
    let (t, c) = split_arms(data)?;
    let psi = mean(&t) - mean(&c);
    let est = AteEstimate::point(Method::Naive, psi, data.len());
    if t.len() < 2 || c.len() < 2 {
        return Ok(est);
    }
    let se = (sample_var(&t) / t.len() as f64 + sample_var(&c) / c.len() as f64).sqrt();
    Ok(with_inference(est, interval(psi, se, level)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpwNormalization {
    HorvitzThompson,
    Hajek,
}

fn check_propensities(pi: &[f64], n: usize) -> Result<()> {
    if pi.len() != n {
        return Err(Error::Validation(format!("{} propensities for {} units", pi.len(), n)));
    }
    if let Some(i) = pi.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Positivity(format!("propensity {} at unit {i} is outside (0, 1)", pi[i])));
    }
    Ok(())
}

/// Inverse probability weighting.
///
/// Horvitz-Thompson: `mean(a y / pi) - mean((1-a) y / (1-pi))`.
/// Hajek: the same with weights renormalised to sum to one within each arm.
pub fn ipw(
    data: &ObservationalDataset,
    pi_hat: &[f64],
    normalization: IpwNormalization,
    level: f64,
) -> Result<AteEstimate> {
    let n = data.len();
    check_propensities(pi_hat, n)?;
    split_arms(data)?;
    let a = data.treatment();
    let y = data.outcome();
    let (psi, eif, method) = match normalization {
        IpwNormalization::HorvitzThompson => {
            let terms: Vec<f64> = (0..n)
                .map(|i| {
                    let ai = indicator(a[i]);
                    ai * y[i] / pi_hat[i] - (1.0 - ai) * y[i] / (1.0 - pi_hat[i])
                })
                .collect();
            let psi = mean(&terms);
            (psi, terms.iter().map(|t| t - psi).collect::<Vec<_>>(), Method::IpwHt)
        }
        IpwNormalization::Hajek => {
            let w1: Vec<f64> = (0..n).map(|i| indicator(a[i]) / pi_hat[i]).collect();
            let w0: Vec<f64> = (0..n).map(|i| (1.0 - indicator(a[i])) / (1.0 - pi_hat[i])).collect();
            let s1: f64 = w1.iter().sum();
            let s0: f64 = w0.iter().sum();
            let m1 = (0..n).map(|i| w1[i] / s1 * y[i]).sum::<f64>();
            let m0 = (0..n).map(|i| w0[i] / s0 * y[i]).sum::<f64>();
            let (mw1, mw0) = (s1 / n as f64, s0 / n as f64);
            let eif = (0..n)
                .map(|i| w1[i] * (y[i] - m1) / mw1 - w0[i] * (y[i] - m0) / mw0)
                .collect();
            (m1 - m0, eif, Method::IpwHajek)
        }
    };
    let inf = variance_ci(psi, &eif, level)?;
    let mut est = with_inference(AteEstimate::point(method, psi, n), inf);
    est.eif = Some(eif);
    Ok(est)
}

/// Outcome-regression plug-in `mean(mu1 - mu0)`. No standard error: the
/// spread of fitted contrasts ignores nuisance estimation error.
pub fn g_formula(mu0_hat: &[f64], mu1_hat: &[f64]) -> Result<AteEstimate> {
    if mu0_hat.len() != mu1_hat.len() {
        return Err(Error::Validation("mu0 and mu1 differ in length".into()));
    }
    if mu0_hat.is_empty() {
        return Err(Error::InsufficientData("g-formula on zero units".into()));
    }
    let contrasts: Vec<f64> = mu1_hat.iter().zip(mu0_hat).map(|(m1, m0)| m1 - m0).collect();
    Ok(AteEstimate::point(Method::Gformula, mean(&contrasts), mu0_hat.len()))
}

/// One-to-one nearest-neighbour matching on the propensity score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    pub caliper: Option<f64>,
    pub with_replacement: bool,
}


#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub treated: usize,
    pub control: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchTable {
    pub pairs: Vec<MatchedPair>,
    pub unmatched: Vec<usize>,
}

/// Greedy propensity matching for the ATT.
///
/// Treated units are visited in index order; each takes the control with the
/// nearest propensity (ties to the lowest index) within the caliper. Without
/// replacement a control is used at most once. Unmatched treated units are
/// listed and excluded from the mean.
pub fn psm_att(
    data: &ObservationalDataset,
    pi_hat: &[f64],
    spec: &MatchSpec,
    level: f64,
) -> Result<(AteEstimate, MatchTable)> {
    check_propensities(pi_hat, data.len())?;
    if let Some(c) = spec.caliper {
        if !(c >= 0.0) {
            return Err(Error::Config("caliper must be >= 0".into()));
        }
    }
    split_arms(data)?;
    let a = data.treatment();
    let y = data.outcome();
    let controls: Vec<usize> = (0..data.len()).filter(|&i| !a[i]).collect();
    let mut used = vec![false; controls.len()];
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for t in (0..data.len()).filter(|&i| a[i]) {
        let mut best: Option<(usize, f64)> = None;
        for (slot, &c) in controls.iter().enumerate() {
            if used[slot] {
                continue;
            }
            let dist = (pi_hat[t] - pi_hat[c]).abs();
            if best.is_none_or(|(_, d)| dist < d) {
                best = Some((slot, dist));
            }
        }
        match best {
            Some((slot, dist)) if spec.caliper.is_none_or(|c| dist <= c) => {
                if !spec.with_replacement {
                    used[slot] = true;
                }
                pairs.push(MatchedPair {
                    treated: t,
                    control: controls[slot],
                    distance: dist,
                });
            }
            _ => unmatched.push(t),
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyMatch);
    }
    let diffs: Vec<f64> = pairs.iter().map(|p| y[p.treated] - y[p.control]).collect();
    let psi = mean(&diffs);
    let mut est = AteEstimate::point(Method::PsmAtt, psi, data.len());
    if diffs.len() >= 2 {
        let se = (sample_var(&diffs) / diffs.len() as f64).sqrt();
        est = with_inference(est, interval(psi, se, level)?);
    }
    Ok((est, MatchTable { pairs, unmatched }))
}

/// Augmented IPW result with fold-wise and arm-wise breakdowns.
#[derive(Debug, Clone, PartialEq)]
pub struct AipwEstimate {
    pub estimate: AteEstimate,
    /// `psi_hat_1 - psi_hat_0` computed within each fold.
    pub fold_means: Vec<f64>,
    /// Average of `fold_means`; equals `psi_hat` when folds are equal-sized.
    pub fold_average: f64,
    /// Arm-specific sub-estimates `(psi_hat_0, psi_hat_1)`.
    pub arm_means: (f64, f64),
    pub clip_count: usize,
}

fn arm_terms(data: &ObservationalDataset, nuisance: &NuisanceFit, i: usize) -> (f64, f64) {
    let a = indicator(data.treatment()[i]);
    let y = data.outcome()[i];
    let pi = nuisance.pi_hat[i];
    let (m0, m1) = (nuisance.mu0_hat[i], nuisance.mu1_hat[i]);
    let t1 = a / pi * (y - m1) + m1;
    let t0 = (1.0 - a) / (1.0 - pi) * (y - m0) + m0;
    (t0, t1)
}

/// Doubly robust estimator: the mean over units of
/// `a (y - mu1)/pi - (1-a)(y - mu0)/(1-pi) + mu1 - mu0`.
pub fn aipw(data: &ObservationalDataset, nuisance: &NuisanceFit, level: f64) -> Result<AipwEstimate> {
    let n = data.len();
    if nuisance.len() != n {
        return Err(Error::Validation(format!("nuisance for {} units, data has {n}", nuisance.len())));
    }
    let (lo, hi) = nuisance.clip;
    if let Some(i) = nuisance.pi_hat.iter().position(|&p| !(p >= lo && p <= hi)) {
        return Err(Error::Invariant(format!(
            "propensity {} at unit {i} outside clip bounds [{lo}, {hi}]",
            nuisance.pi_hat[i]
        )));
    }
    split_arms(data)?;
    let arms: Vec<(f64, f64)> = (0..n).map(|i| arm_terms(data, nuisance, i)).collect();
    let terms: Vec<f64> = arms.iter().map(|(t0, t1)| t1 - t0).collect();
    let psi = mean(&terms);
    let psi0 = arms.iter().map(|t| t.0).sum::<f64>() / n as f64;
    let psi1 = arms.iter().map(|t| t.1).sum::<f64>() / n as f64;

    let k = nuisance.folds.k;
    let mut fold_sums = vec![(0.0, 0.0, 0usize); k];
    for (i, &(t0, t1)) in arms.iter().enumerate() {
        let f = &mut fold_sums[nuisance.folds.fold_of[i]];
        f.0 += t0;
        f.1 += t1;
        f.2 += 1;
    }
    let fold_means: Vec<f64> = fold_sums
        .iter()
        .filter(|f| f.2 > 0)
        .map(|&(s0, s1, c)| s1 / c as f64 - s0 / c as f64)
        .collect();
    let fold_average = mean(&fold_means);

    let eif = eif_closed_form(data, nuisance, psi)?;
    let inf = variance_ci(psi, &eif, level)?;
    let mut estimate = with_inference(AteEstimate::point(Method::Aipw, psi, n), inf);
    estimate.eif = Some(eif);
    Ok(AipwEstimate {
        estimate,
        fold_means,
        fold_average,
        arm_means: (psi0, psi1),
        clip_count: nuisance.clip_count,
    })
}

/// Efficient influence function of the ATE at each unit, evaluated with the
/// fitted nuisances:
/// `a (y - mu1)/pi - (1-a)(y - mu0)/(1-pi) + mu1 - mu0 - psi_hat`.
pub fn eif_closed_form(data: &ObservationalDataset, nuisance: &NuisanceFit, psi_hat: f64) -> Result<Vec<f64>> {
    if nuisance.len() != data.len() {
        return Err(Error::Validation("nuisance and data differ in length".into()));
    }
    Ok((0..data.len())
        .map(|i| {
            let (t0, t1) = arm_terms(data, nuisance, i);
            t1 - t0 - psi_hat
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::single_fold;

    fn dataset(a: &[bool], y: &[f64]) -> ObservationalDataset {
        ObservationalDataset::from_rows(&vec![vec![]; a.len()], a.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn naive_hand_example() {
        let d = dataset(&[true, true, false, false], &[1.0, 3.0, 0.0, 2.0]);
        let e = naive_dim(&d, 0.95).unwrap();
        assert_eq!(e.psi_hat, 1.0);
        // sqrt(2/2 + 2/2)
        assert!((e.se.unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn naive_identical_arms_and_empty_arm() {
        let d = dataset(&[true, true, false, false], &[1.0, 3.0, 1.0, 3.0]);
        assert_eq!(naive_dim(&d, 0.95).unwrap().psi_hat, 0.0);
        let d = dataset(&[true, true], &[1.0, 3.0]);
        assert!(matches!(naive_dim(&d, 0.95), Err(Error::EmptyArm("control"))));
    }

    #[test]
    fn ht_ipw_hand_example() {
        let d = dataset(&[true, false], &[3.0, 1.0]);
        let e = ipw(&d, &[0.5, 0.5], IpwNormalization::HorvitzThompson, 0.95).unwrap();
        assert_eq!(e.psi_hat, 2.0);
    }

    #[test]
    fn ipw_rejects_boundary_propensity() {
        let d = dataset(&[true, false], &[3.0, 1.0]);
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(
                ipw(&d, &[bad, 0.5], IpwNormalization::Hajek, 0.95),
                Err(Error::Positivity(_))
            ));
        }
    }

    #[test]
    fn hajek_with_constant_weights_is_naive() {
        let d = dataset(&[true, false, true, false, false], &[2.0, 1.0, 5.0, -1.0, 0.5]);
        let h = ipw(&d, &[0.3; 5], IpwNormalization::Hajek, 0.95).unwrap();
        let n = naive_dim(&d, 0.95).unwrap();
        assert!((h.psi_hat - n.psi_hat).abs() < 1e-12);
    }

    #[test]
    fn g_formula_cases() {
        assert_eq!(g_formula(&[1.0; 3], &[4.0; 3]).unwrap().psi_hat, 3.0);
        assert_eq!(g_formula(&[1.0, 2.0], &[1.0, 2.0]).unwrap().psi_hat, 0.0);
    }

    #[test]
    fn psm_ties_go_to_lowest_index() {
        // treated 0,1 ; controls 2,3 all at 0.5
        let d = dataset(&[true, true, false, false], &[2.0, 4.0, 1.0, 1.0]);
        let (e, table) = psm_att(&d, &[0.5; 4], &MatchSpec::default(), 0.95).unwrap();
        assert_eq!(e.psi_hat, 2.0);
        assert_eq!(table.pairs[0].control, 2);
        assert_eq!(table.pairs[1].control, 3);
        let repl = MatchSpec {
            with_replacement: true,
            ..Default::default()
        };
        let (e, table) = psm_att(&d, &[0.5; 4], &repl, 0.95).unwrap();
        assert_eq!(e.psi_hat, 2.0);
        assert!(table.pairs.iter().all(|p| p.control == 2));
    }

    #[test]
    fn psm_hand_trace() {
        let d = dataset(&[true, true, false, false], &[5.0, 7.0, 1.0, 2.0]);
        let spec = MatchSpec {
            caliper: Some(0.1),
            with_replacement: false,
        };
        let (e, table) = psm_att(&d, &[0.6, 0.8, 0.55, 0.9], &spec, 0.95).unwrap();
        assert_eq!(
            table.pairs.iter().map(|p| (p.treated, p.control)).collect::<Vec<_>>(),
            vec![(0, 2), (1, 3)]
        );
        assert!((e.psi_hat - 4.5).abs() < 1e-12);
        assert!(table.unmatched.is_empty());
    }

    #[test]
    fn psm_zero_caliper_without_ties_is_empty() {
        let d = dataset(&[true, false], &[1.0, 0.0]);
        let spec = MatchSpec {
            caliper: Some(0.0),
            with_replacement: false,
        };
        assert!(matches!(psm_att(&d, &[0.6, 0.4], &spec, 0.95), Err(Error::EmptyMatch)));
    }

    #[test]
    fn aipw_with_zero_outcome_models_is_ht() {
        let a = [true, false, true, false, true];
        let y = [2.0, 1.0, 4.0, 0.0, 3.0];
        let pi = [0.4, 0.3, 0.7, 0.5, 0.6];
        let d = dataset(&a, &y);
        let nf = NuisanceFit::from_predictions(&pi, vec![0.0; 5], vec![0.0; 5], single_fold(5), (0.01, 0.99)).unwrap();
        let dr = aipw(&d, &nf, 0.95).unwrap();
        let ht = ipw(&d, &pi, IpwNormalization::HorvitzThompson, 0.95).unwrap();
        assert_eq!(dr.estimate.psi_hat, ht.psi_hat);
        for (u, v) in dr.estimate.eif.unwrap().iter().zip(ht.eif.unwrap()) {
            assert_eq!(*u, v);
        }
    }

    #[test]
    fn eif_hand_unit() {
        let d = dataset(&[true], &[3.0]);
        let nf = NuisanceFit::from_predictions(&[0.5], vec![1.0], vec![2.0], single_fold(1), (0.01, 0.99)).unwrap();
        assert_eq!(eif_closed_form(&d, &nf, 1.0).unwrap(), vec![2.0]);
    }

    #[test]
    fn eif_zero_residual_units() {
        let d = dataset(&[true, false], &[2.0, 1.0]);
        let nf =
            NuisanceFit::from_predictions(&[0.3, 0.6], vec![1.0, 1.0], vec![2.0, 2.0], single_fold(2), (0.01, 0.99))
                .unwrap();
        let phi = eif_closed_form(&d, &nf, 0.25).unwrap();
        assert_eq!(phi, vec![0.75, 0.75]);
    }

    #[test]
    fn variance_ci_cases() {
        let c = variance_ci(1.0, &[0.0; 4], 0.95).unwrap();
        assert_eq!((c.se, c.ci_low, c.ci_high), (0.0, 1.0, 1.0));
        let c = variance_ci(0.0, &[-1.0, 1.0], 0.95).unwrap();
        assert!((c.se - 1.0).abs() < 1e-15);
        assert!((c.ci_high - 1.959_963_984_540_054).abs() < 1e-9);
        assert!(matches!(variance_ci(0.0, &[1.0], 0.95), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn aipw_rejects_unclipped_propensity() {
        let d = dataset(&[true, false], &[1.0, 0.0]);
        let mut nf =
            NuisanceFit::from_predictions(&[0.5, 0.5], vec![0.0; 2], vec![0.0; 2], single_fold(2), (0.01, 0.99))
                .unwrap();
        nf.pi_hat[0] = 0.001;
        assert!(matches!(aipw(&d, &nf, 0.95), Err(Error::Invariant(_))));
    }
}
