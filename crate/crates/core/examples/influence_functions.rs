//! Numerical influence functions on a discrete measure: Gateaux derivatives
//! against closed forms, the central identity, and one-step correction of a
//! distorted plug-in.
//!
//! ```text
//! cargo run --release --example influence_functions
//! ```

use causalkit::eif::{eif_report, one_step, random_causal_measure, EifSource, EpsSchedule, Functional};
use causalkit::rng::{stream_rng, Stream};

fn main() -> causalkit::Result<()> {
    let mut rng = stream_rng(99, Stream::Scores);
    let truth = random_causal_measure(&mut rng, 2, &[0.0, 1.0], 0.05)?;
    let schedule = EpsSchedule::default();
    let functionals: Vec<Functional> = ["mean(y)", "cond_mean(y|a=1,x=0)", "counterfactual_mean(1)", "ate"]
        .iter()
        .map(|s| s.parse())
        .collect::<causalkit::Result<_>>()?;

    println!("{:<24} {:>10} {:>14} {:>12} {:>14}", "functional", "value", "max |num-cf|", "mean(eif)", "identity gap");
    for f in &functionals {
        let r = eif_report(f, &truth, &schedule, 100, &mut rng, None)?;
        println!(
            "{:<24} {:>10.4} {:>14.2e} {:>12.2e} {:>14.2e}",
            f.to_string(),
            f.evaluate(&truth)?,
            r.max_abs_diff,
            r.mean_zero_gap,
            r.max_central_identity_gap
        );
    }

    let estimate = random_causal_measure(&mut rng, 2, &[0.0, 1.0], 0.05)?;
    let mixed = truth.mix(&estimate, 0.7)?;
    let sample = truth.sample(20_000, &mut rng)?;
    let target = Functional::Ate.evaluate(&truth)?;
    for (label, p) in [("far estimate", &estimate), ("near estimate", &mixed)] {
        let os = one_step(&Functional::Ate, p, &sample, &EifSource::Numerical(schedule.clone()))?;
        println!(
            "{label}: plug-in error {:+.4}, one-step error {:+.4} (correction {:+.4})",
            os.plug_in - target,
            os.estimate - target,
            os.correction
        );
    }
    Ok(())
}
