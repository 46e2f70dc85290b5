//! How the Wald estimator degrades as the first stage weakens: median bias
//! and interval width over a grid of compliance shares.
//!
//! ```text
//! cargo run --release --example weak_instruments [-- --reps 500]
//! ```

use causalkit::dgp::IvDgpConfig;
use causalkit::estimators::DEFAULT_LEVEL;
use causalkit::quasi::{weak_iv_study, WeakIvConfig};

fn main() -> causalkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let reps = args
        .iter()
        .position(|a| a == "--reps")
        .and_then(|i| args.get(i + 1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(500);
    let cfg = WeakIvConfig {
        base: IvDgpConfig::default(),
        strengths: vec![0.05, 0.1, 0.2, 0.4, 0.8],
        reps,
        seed: 2024,
        level: DEFAULT_LEVEL,
    };
    let rows = weak_iv_study(&cfg)?;
    println!(
        "{:>8} {:>8} {:>12} {:>12} {:>10} {:>12} {:>10}",
        "strength", "failures", "median_late", "median_bias", "bias_se", "median_width", "weak_flag"
    );
    for r in rows {
        println!(
            "{:>8.2} {:>8} {:>12.3} {:>12.3} {:>10.3} {:>12.3} {:>10.2}",
            r.strength, r.failures, r.median_late, r.median_bias, r.median_se, r.median_ci_width, r.weak_share
        );
    }
    Ok(())
}
