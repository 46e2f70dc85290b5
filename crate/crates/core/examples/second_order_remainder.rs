//! The remainder left after a one-step correction is a product of nuisance
//! errors. Compares it with the Cauchy-Schwarz bound that carries the
//! inverse-propensity weight, and with the unweighted product.
//!
//! ```text
//! cargo run --release --example second_order_remainder [-- --pairs 1000]
//! ```

use causalkit::eif::{random_causal_measure, second_order_remainder};
use causalkit::rng::{stream_rng, Stream};

fn main() -> causalkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let pairs: usize = args
        .iter()
        .position(|a| a == "--pairs")
        .and_then(|i| args.get(i + 1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(1000);
    let mut rng = stream_rng(5, Stream::Scores);
    let truth = random_causal_measure(&mut rng, 3, &[0.0, 1.0, 2.5], 0.02)?;
    let same = second_order_remainder(&truth, &truth)?;
    println!("estimate equal to truth: r2 = {:.2e}, {:.2e}", same.treated.r2, same.control.r2);

    let mut weighted_ok = 0;
    let mut unweighted_exceeded = 0;
    let mut tightest: f64 = 0.0;
    for _ in 0..pairs {
        let truth = random_causal_measure(&mut rng, 3, &[0.0, 1.0, 2.5], 0.02)?;
        let est = random_causal_measure(&mut rng, 3, &[0.0, 1.0, 2.5], 0.02)?;
        let r = second_order_remainder(&truth, &est)?;
        for arm in [r.treated, r.control] {
            if arm.r2.abs() <= arm.bound {
                weighted_ok += 1;
            }
            if arm.r2.abs() > arm.unweighted_bound {
                unweighted_exceeded += 1;
            }
            if arm.bound > 0.0 {
                tightest = tightest.max(arm.r2.abs() / arm.bound);
            }
        }
    }
    println!("{pairs} random pairs, two arms each:");
    println!("  within the weighted bound:   {weighted_ok} / {}", 2 * pairs);
    println!("  above the unweighted product: {unweighted_exceeded} / {}", 2 * pairs);
    println!("  largest |r2| / bound: {tightest:.6}");
    Ok(())
}
