//! Simulate a confounded observational study, cross-fit the nuisance models
//! and compare every ATE estimator against the known sample effect.
//!
//! ```text
//! cargo run --release --example observational_pipeline [-- --n 5000 --seed 7]
//! ```

use causalkit::data::Method;
use causalkit::dgp::{generate_observational, ObsDgpConfig};
use causalkit::estimators::{aipw, g_formula, ipw, naive_dim, psm_att, IpwNormalization, MatchSpec, DEFAULT_LEVEL};
use causalkit::nuisance::{cross_fit, CrossFitConfig};

fn arg<T: std::str::FromStr>(flag: &str, default: T) -> T {
    let args: Vec<String> = std::env::args().collect();
    args.iter()
        .position(|a| a == flag)
        .and_then(|i| args.get(i + 1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() -> causalkit::Result<()> {
    let seed: u64 = arg("--seed", 7);
    let dgp = ObsDgpConfig {
        n: arg("--n", 5000),
        ..Default::default()
    };
    let (data, truth) = generate_observational(&dgp, seed)?;
    let (lo, hi) = truth.propensity_range().unwrap_or((f64::NAN, f64::NAN));
    println!(
        "n = {}, treated = {}, true propensities in [{lo:.3}, {hi:.3}], sample ATE = {:.4}",
        data.len(),
        data.treated_count(),
        truth.true_ate
    );

    let cf = CrossFitConfig { seed, ..Default::default() };
    let fit = cross_fit(&data, &cf)?;
    println!("cross-fit: k = {}, clipped propensities = {}", cf.k, fit.clip_count);

    let level = DEFAULT_LEVEL;
    let dr = aipw(&data, &fit, level)?;
    let estimates = vec![
        naive_dim(&data, level)?,
        ipw(&data, &fit.pi_hat, IpwNormalization::HorvitzThompson, level)?,
        ipw(&data, &fit.pi_hat, IpwNormalization::Hajek, level)?,
        g_formula(&fit.mu0_hat, &fit.mu1_hat)?,
        psm_att(&data, &fit.pi_hat, &MatchSpec::default(), level)?.0,
        dr.estimate.clone(),
    ];
    println!("{:<10} {:>9} {:>9} {:>21}", "method", "estimate", "se", "95% interval");
    for e in &estimates {
        let ci = e
            .ci
            .map(|(l, h)| format!("[{l:.4}, {h:.4}]"))
            .unwrap_or_else(|| "-".into());
        let se = e.se.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
        println!("{:<10} {:>9.4} {:>9} {:>21}", e.method.as_str(), e.psi_hat, se, ci);
    }
    println!("psm_att targets the effect on the treated, not the ATE");

    let folds: Vec<String> = dr.fold_means.iter().map(|m| format!("{m:.3}")).collect();
    println!("{} fold estimates: {}", Method::Aipw, folds.join(" "));
    println!(
        "arm means: psi0 = {:.4}, psi1 = {:.4}",
        dr.arm_means.0, dr.arm_means.1
    );
    Ok(())
}
