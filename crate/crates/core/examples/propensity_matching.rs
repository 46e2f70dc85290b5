//! Nearest-neighbour propensity matching for the effect on the treated,
//! with and without a caliper and replacement.
//!
//! ```text
//! cargo run --release --example propensity_matching
//! ```

use causalkit::dgp::{generate_observational, ObsDgpConfig};
use causalkit::estimators::{psm_att, MatchSpec, DEFAULT_LEVEL};
use causalkit::nuisance::{cross_fit, CrossFitConfig};

fn main() -> causalkit::Result<()> {
    let dgp = ObsDgpConfig {
        n: 3000,
        confounding_strength: 1.0,
        ..Default::default()
    };
    let (data, truth) = generate_observational(&dgp, 11)?;
    let a = data.treatment();
    let treated: Vec<usize> = (0..data.len()).filter(|&i| a[i]).collect();
    let att = treated.iter().map(|&i| truth.y1[i] - truth.y0[i]).sum::<f64>() / treated.len() as f64;
    println!("treated = {}, controls = {}, sample ATT = {att:.4}", treated.len(), data.control_count());

    let fit = cross_fit(&data, &CrossFitConfig { seed: 11, ..Default::default() })?;
    let specs = [
        ("no caliper, without replacement", MatchSpec::default()),
        ("no caliper, with replacement", MatchSpec { caliper: None, with_replacement: true }),
        ("caliper 0.01, with replacement", MatchSpec { caliper: Some(0.01), with_replacement: true }),
        ("caliper 0.001, with replacement", MatchSpec { caliper: Some(0.001), with_replacement: true }),
    ];
    for (label, spec) in specs {
        let (est, table) = psm_att(&data, &fit.pi_hat, &spec, DEFAULT_LEVEL)?;
        let worst = table.pairs.iter().map(|p| p.distance).fold(0.0, f64::max);
        println!(
            "{label:<32} att = {:.4} (se {:.4}), pairs = {}, unmatched = {}, max distance = {worst:.4}",
            est.psi_hat,
            est.se.unwrap_or(f64::NAN),
            table.pairs.len(),
            table.unmatched.len()
        );
    }
    Ok(())
}
