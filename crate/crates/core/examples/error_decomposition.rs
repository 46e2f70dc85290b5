//! Splits the gap between the naive difference in means and the true ATE
//! into a baseline difference and a treatment-heterogeneity term.
//!
//! ```text
//! cargo run --release --example error_decomposition
//! ```

use causalkit::dgp::{generate_observational, ObsDgpConfig};
use causalkit::montecarlo::error_decomposition;

fn main() -> causalkit::Result<()> {
    println!(
        "{:>12} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "confounding", "naive", "true_ate", "gap", "baseline", "het"
    );
    // effect grows with x1, so confounding also tilts the treated group
    // toward larger effects
    for cs in [0.0, 0.5, 1.0, 2.0] {
        let dgp = ObsDgpConfig {
            n: 20_000,
            confounding_strength: cs,
            tau_x: vec![1.0, 0.0],
            ..Default::default()
        };
        let (data, truth) = generate_observational(&dgp, 17)?;
        let d = error_decomposition(&data, &truth)?;
        println!(
            "{cs:>12.1} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            d.naive, d.true_ate, d.total_gap, d.baseline_diff, d.het_term
        );
    }
    Ok(())
}
