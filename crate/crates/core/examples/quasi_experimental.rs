//! Difference-in-differences (with a placebo check), regression
//! discontinuity, instrumental variables and unit fixed effects on their
//! matching synthetic designs.
//!
//! ```text
//! cargo run --release --example quasi_experimental
//! ```

use causalkit::dgp::{generate_iv, generate_panel, generate_rd, IvDgpConfig, PanelDgpConfig, RdDgpConfig};
use causalkit::estimators::DEFAULT_LEVEL;
use causalkit::quasi::{did, did_placebo, fe_within, iv_wald, rd_local_linear, tsls, Kernel, RdSpec};

fn main() -> causalkit::Result<()> {
    println!("-- difference in differences (4 periods, treatment in the last)");
    for violation in [0.0, 0.5] {
        let cfg = PanelDgpConfig {
            n_units: 400,
            n_periods: 4,
            parallel_violation: violation,
            ..Default::default()
        };
        let (panel, truth) = generate_panel(&cfg, 3)?;
        let d = did(&panel)?;
        let p = did_placebo(&panel)?;
        println!(
            "trend violation {violation:.1}: did = {:.3} (truth {:.3}), placebo = {:.3} over periods {:?}",
            d.estimate, truth.true_effect, p.estimate, p.periods
        );
    }

    println!("-- unit fixed effects");
    let (panel, truth) = generate_panel(&PanelDgpConfig { time_trend: 0.0, ..Default::default() }, 4)?;
    let fe = fe_within(&panel)?;
    println!(
        "within estimate = {:.3} (truth {:.3}), units without treatment variation = {}",
        fe.effect, truth.true_effect, fe.units_without_variation
    );

    println!("-- regression discontinuity");
    let (data, _, jump) = generate_rd(&RdDgpConfig::default(), 5)?;
    for kernel in [Kernel::Rectangular, Kernel::Triangular] {
        for bandwidth in [0.2, 0.5, 1.0] {
            let e = rd_local_linear(&data, &RdSpec { cutoff: 0.0, bandwidth, kernel })?;
            println!(
                "{:<11} h = {bandwidth:.1}: jump = {:.3} (truth {jump:.3}), se = {:.3}, points {}+{}",
                kernel.as_str(),
                e.jump,
                e.se.unwrap_or(f64::NAN),
                e.left.n,
                e.right.n
            );
        }
    }

    println!("-- instrumental variables");
    let (iv, truth) = generate_iv(&IvDgpConfig::default(), 6)?;
    let naive = {
        let (mut s, mut c) = ([0.0; 2], [0usize; 2]);
        for (&a, &y) in iv.treatment().iter().zip(iv.outcome()) {
            s[usize::from(a)] += y;
            c[usize::from(a)] += 1;
        }
        s[1] / c[1] as f64 - s[0] / c[0] as f64
    };
    let w = iv_wald(&iv, DEFAULT_LEVEL)?;
    let t = tsls(&iv, DEFAULT_LEVEL)?;
    println!(
        "naive contrast = {naive:.3}; wald = {:.3}, 2sls = {:.3} (complier effect {:.3}), first stage = {:.3}",
        w.late, t.late, truth.true_late, w.first_stage
    );
    Ok(())
}
