//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines print in
//! order and unbuffered.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use causalkit::data::{GroundTruth, Method, ObservationalDataset, PanelDataset, PanelRecord};
use causalkit::dgp::{generate_iv, generate_observational, generate_rd, IvDgpConfig, ObsDgpConfig, RdDgpConfig};
use causalkit::eif::{
    bounded_random_score, causal_score_parts, central_identity_check, factorize_score, numerical_eif,
    pathwise_derivative, random_causal_measure, second_order_remainder, DiscreteMeasure, EpsSchedule, Functional,
};
use causalkit::estimators::{aipw, ipw, naive_dim, IpwNormalization, DEFAULT_LEVEL};
use causalkit::montecarlo::{dr_suite, error_decomposition, naive_bias_oracle, run_mc, McConfig, Scenario};
use causalkit::nuisance::{single_fold, NuisanceFit};
use causalkit::quasi::{did, fe_within, iv_wald, rd_local_linear, tsls, weak_iv_study, Kernel, RdSpec, WeakIvConfig};
use causalkit::rng::{stream_rng, Stream};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// 1. exact identities
// ---------------------------------------------------------------------------

/// Least squares by normal equations, independent of the library's solvers.
fn ols(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let xt = x.transpose();
    let xtx = &xt * x;
    let xty = &xt * DVector::from_column_slice(y);
    xtx.lu().solve(&xty).expect("full-rank design")
}

fn identities() -> Outcome {
    let mut notes = Vec::new();
    let (data, _) = generate_observational(&ObsDgpConfig { n: 400, ..Default::default() }, 1).map_err(err)?;
    let n = data.len();

    // aipw with zero outcome models is Horvitz-Thompson, unit by unit
    let pi: Vec<f64> = (0..n).map(|i| 0.2 + 0.6 * ((i * 37 % 101) as f64 / 100.0)).collect();
    let fit = NuisanceFit::from_predictions(&pi, vec![0.0; n], vec![0.0; n], single_fold(n), (0.01, 0.99)).map_err(err)?;
    let dr = aipw(&data, &fit, DEFAULT_LEVEL).map_err(err)?;
    let ht = ipw(&data, &pi, IpwNormalization::HorvitzThompson, DEFAULT_LEVEL).map_err(err)?;
    let (a, y) = (data.treatment(), data.outcome());
    let unit_gap = (0..n)
        .map(|i| {
            let ht_i = if a[i] { y[i] / pi[i] } else { -y[i] / (1.0 - pi[i]) };
            let dr_i = dr.estimate.eif.as_ref().expect("aipw influence values")[i] + dr.estimate.psi_hat;
            (ht_i - dr_i).abs()
        })
        .fold(0.0, f64::max);
    check(
        unit_gap < 1e-12 && (dr.estimate.psi_hat - ht.psi_hat).abs() < 1e-12,
        format!("aipw(mu=0) vs HT: unit gap {unit_gap:e}"),
    )?;
    notes.push(format!("aipw/HT unit gap {unit_gap:.1e}"));

    // Hajek with constant propensity is the difference in means
    let hajek = ipw(&data, &vec![0.37; n], IpwNormalization::Hajek, DEFAULT_LEVEL).map_err(err)?;
    let naive = naive_dim(&data, DEFAULT_LEVEL).map_err(err)?;
    let gap = (hajek.psi_hat - naive.psi_hat).abs();
    check(gap < 1e-12, format!("hajek vs naive gap {gap:e}"))?;
    notes.push(format!("hajek/naive {gap:.1e}"));

    // just-identified IV without covariates
    let (iv, _) = generate_iv(&IvDgpConfig::default(), 2).map_err(err)?;
    let w = iv_wald(&iv, DEFAULT_LEVEL).map_err(err)?;
    let t = tsls(&iv, DEFAULT_LEVEL).map_err(err)?;
    let gap = (w.late - t.late).abs();
    check(gap < 1e-10, format!("wald vs 2sls gap {gap:e}"))?;
    notes.push(format!("wald/2sls {gap:.1e}"));

    // FE within against unit-dummy OLS, 6 units x 3 periods
    let treat = [[false, false, true], [false, true, true], [false, false, false], [true, true, false], [false, true, false], [true, true, true]];
    let mut records = Vec::new();
    for (u, row) in treat.iter().enumerate() {
        for (t, &d) in row.iter().enumerate() {
            let y = 0.7 * u as f64 + 0.3 * t as f64 + if d { 1.9 } else { 0.0 } + ((u * 7 + t * 3) % 5) as f64 * 0.11;
            records.push(PanelRecord { unit: u as i64, period: t as i64, treated: d, y, group: false });
        }
    }
    let panel = PanelDataset::new(records.clone()).map_err(err)?;
    let fe = fe_within(&panel).map_err(err)?;
    let mut x = DMatrix::zeros(records.len(), 1 + treat.len());
    for (i, r) in records.iter().enumerate() {
        x[(i, 0)] = if r.treated { 1.0 } else { 0.0 };
        x[(i, 1 + r.unit as usize)] = 1.0;
    }
    let beta = ols(&x, &records.iter().map(|r| r.y).collect::<Vec<_>>());
    let gap = (fe.effect - beta[0]).abs();
    check(gap < 1e-8, format!("fe vs dummy OLS gap {gap:e}"))?;
    notes.push(format!("fe/dummies {gap:.1e}"));

    // DID from cell means
    let mut records = Vec::new();
    for u in 0..8i64 {
        for t in 0..2i64 {
            let g = u % 2 == 1;
            let y = u as f64 * 0.5 + t as f64 + if g && t == 1 { 2.0 } else { 0.0 } + ((u * 3 + t) % 4) as f64 * 0.25;
            records.push(PanelRecord { unit: u, period: t, treated: g && t == 1, y, group: g });
        }
    }
    let d = did(&PanelDataset::new(records.clone()).map_err(err)?).map_err(err)?;
    let cell = |g: bool, t: i64| {
        let v: Vec<f64> = records.iter().filter(|r| r.group == g && r.period == t).map(|r| r.y).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let by_hand = (cell(true, 1) - cell(true, 0)) - (cell(false, 1) - cell(false, 0));
    let gap = (d.estimate - by_hand).abs();
    check(gap < 1e-12, format!("did vs cell means gap {gap:e}"))?;
    notes.push(format!("did/cells {gap:.1e}"));

    // rectangular RD against OLS inside the window on each side
    let (rd, _, _) = generate_rd(&RdDgpConfig { n: 1500, ..Default::default() }, 3).map_err(err)?;
    let h = 0.4;
    let e = rd_local_linear(&rd, &RdSpec { cutoff: 0.0, bandwidth: h, kernel: Kernel::Rectangular }).map_err(err)?;
    let xs: Vec<f64> = rd.covariates().column(0).iter().copied().collect();
    let side = |right: bool| {
        let idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i].abs() <= h && (xs[i] >= 0.0) == right).collect();
        let design = DMatrix::from_fn(idx.len(), 2, |r, c| if c == 0 { 1.0 } else { xs[idx[r]] });
        ols(&design, &idx.iter().map(|&i| rd.outcome()[i]).collect::<Vec<_>>())[0]
    };
    let gap = (e.jump - (side(true) - side(false))).abs();
    check(gap < 1e-10, format!("rd vs windowed OLS gap {gap:e}"))?;
    notes.push(format!("rd/OLS {gap:.1e}"));

    // four-unit decomposition
    let four = ObservationalDataset::from_rows(
        &[vec![0.0], vec![0.0], vec![0.0], vec![0.0]],
        vec![true, true, false, false],
        vec![3.0, 3.0, 0.0, 0.0],
    )
    .map_err(err)?;
    let truth = GroundTruth::new(vec![3.0, 3.0, 2.0, 2.0], vec![1.0, 1.0, 0.0, 0.0], vec![0.5; 4]).map_err(err)?;
    let dec = error_decomposition(&four, &truth).map_err(err)?;
    let gap = (dec.total_gap - (dec.baseline_diff + dec.het_term)).abs();
    check(
        gap < 1e-10 && (dec.total_gap - 1.0).abs() < 1e-12 && (dec.baseline_diff - 1.0).abs() < 1e-12 && dec.het_term.abs() < 1e-12,
        format!("decomposition {dec:?}"),
    )?;
    notes.push(format!("decomposition total {} = {} + {}", dec.total_gap, dec.baseline_diff, dec.het_term));
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------------------
// 2. influence functions
// ---------------------------------------------------------------------------

fn eif_properties() -> Outcome {
    let schedule = EpsSchedule::default();
    let functionals: Vec<Functional> = ["mean(y)", "cond_mean(y|a=1)", "cond_mean(y|a=0,x=1)", "counterfactual_mean(1)", "counterfactual_mean(0)", "ate"]
        .iter()
        .map(|s| s.parse().expect("functional label"))
        .collect();
    let (mut worst_cf, mut worst_mean, mut worst_gap, mut worst_add) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut rng = stream_rng(2, Stream::Scores);
    let m: DiscreteMeasure = random_causal_measure(&mut rng, 2, &[0.0, 1.0], 0.05).map_err(err)?;
    check(m.len() == 8 && m.probs().iter().all(|&p| p >= 0.05 - 1e-12), "measure shape")?;
    for f in &functionals {
        let num = numerical_eif(f, &m, &schedule).map_err(err)?;
        let phi: Vec<f64> = num.iter().map(|d| d.value).collect();
        for (z, v) in m.points().iter().zip(&phi) {
            worst_cf = worst_cf.max((v - f.closed_form_eif(&m, z).map_err(err)?).abs());
        }
        worst_mean = worst_mean.max(m.expectation(&phi).abs());
        for _ in 0..100 {
            let s = bounded_random_score(&m, &mut rng, &schedule).map_err(err)?;
            worst_gap = worst_gap.max(central_identity_check(f, &m, &s, Some(&phi), &schedule).map_err(err)?.gap);
        }
        for _ in 0..20 {
            let s = bounded_random_score(&m, &mut rng, &schedule).map_err(err)?;
            let whole = pathwise_derivative(f, &m, &s, &schedule).map_err(err)?.value;
            let (sx, sy) = factorize_score(&m, &s, &["x"]).map_err(err)?;
            let two = pathwise_derivative(f, &m, &sx, &schedule).map_err(err)?.value
                + pathwise_derivative(f, &m, &sy, &schedule).map_err(err)?.value;
            let mut three = 0.0;
            for p in causal_score_parts(&m, &s).map_err(err)? {
                three += pathwise_derivative(f, &m, &p, &schedule).map_err(err)?.value;
            }
            worst_add = worst_add.max((whole - two).abs()).max((whole - three).abs());
        }
    }
    let line = format!(
        "{} functionals: max |numerical - closed form| {worst_cf:.1e} (<1e-5), max |mean| {worst_mean:.1e} (<1e-8), \
         max identity gap {worst_gap:.1e} over 100 scores (<1e-5), max additivity gap {worst_add:.1e} (<1e-6)",
        functionals.len()
    );
    check(worst_cf < 1e-5 && worst_mean < 1e-8 && worst_gap < 1e-5 && worst_add < 1e-6, line.clone())?;
    Ok(line)
}

// ---------------------------------------------------------------------------
// 3. double robustness
// ---------------------------------------------------------------------------

fn golden() -> Result<Value, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/dr_calibration.json");
    serde_json::from_str(&std::fs::read_to_string(&path).map_err(err)?).map_err(err)
}

fn double_robustness() -> Outcome {
    let g = golden()?;
    let prov = &g["provenance"];
    let base = McConfig {
        dgp: serde_json::from_value(prov["dgp"].clone()).map_err(err)?,
        reps: prov["reps"].as_u64().ok_or("reps")? as usize,
        n: prov["n"].as_u64().ok_or("n")? as usize,
        seed: prov["seed"].as_u64().ok_or("seed")?,
        ..Default::default()
    };
    check(base.reps == 500 && base.n == 2000 && base.dgp.tau == 2.0 && base.dgp.tau_x.is_empty(), "golden config differs from R=500, n=2000, ATE 2")?;
    let reports = dr_suite(&base).map_err(err)?;
    let bias = |s: Scenario| reports.iter().find(|r| r.scenario == s).and_then(|r| r.row(Method::Aipw)).map(|r| r.bias);
    let mut parts = Vec::new();
    for s in [Scenario::BothCorrect, Scenario::PiWrong, Scenario::MuWrong] {
        let b = bias(s).ok_or("missing aipw row")?;
        check(b.abs() < 0.05, format!("{s}: aipw bias {b:.4}"))?;
        parts.push(format!("{s} {b:+.4}"));
    }
    let bc = bias(Scenario::BothCorrect).ok_or("row")?;
    let bw = bias(Scenario::BothWrong).ok_or("row")?;
    let ratio = bw.abs() / bc.abs();
    check(ratio >= 3.0, format!("both_wrong/both_correct = {ratio:.1}"))?;
    parts.push(format!("both_wrong {bw:+.4} (x{ratio:.0})"));

    // frozen calibration values must be reproduced
    for entry in g["aipw"].as_array().ok_or("aipw")? {
        let s: Scenario = entry["scenario"].as_str().ok_or("scenario")?.parse().map_err(err)?;
        let frozen = entry["bias"].as_f64().ok_or("bias")?;
        let now = bias(s).ok_or("row")?;
        check((now - frozen).abs() < 1e-9, format!("{s}: bias {now} drifted from golden {frozen}"))?;
    }

    let naive = reports[0].row(Method::Naive).ok_or("naive row")?;
    let oracle_seed = prov["oracle_seed"].as_u64().ok_or("oracle_seed")?;
    let oracle_n = prov["oracle_n"].as_u64().ok_or("oracle_n")? as usize;
    let oracle = naive_bias_oracle(&base.dgp, oracle_n, oracle_seed).map_err(err)?;
    let z = (naive.bias - oracle.total_gap).abs() / naive.mc_se;
    check(z <= 3.0, format!("naive bias {:.4} vs oracle {:.4}: {z:.2} MC se", naive.bias, oracle.total_gap))?;
    parts.push(format!("naive {:.4} vs oracle {:.4} ({z:.2} MC se)", naive.bias, oracle.total_gap));
    Ok(format!("aipw bias: {}; matches golden", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 4. inference calibration
// ---------------------------------------------------------------------------

fn calibration() -> Outcome {
    let cfg = McConfig {
        dgp: ObsDgpConfig::default(),
        estimators: vec![Method::Aipw, Method::IpwOracle],
        reps: 1000,
        n: 2000,
        seed: 777,
        scenario: Scenario::BothCorrect,
        ..Default::default()
    };
    let r = run_mc(&cfg).map_err(err)?;
    let dr = r.row(Method::Aipw).ok_or("aipw row")?;
    let coverage = dr.coverage.ok_or("aipw coverage")?;
    let oracle = r.row(Method::IpwOracle).ok_or("oracle row")?;
    let z = oracle.bias.abs() / oracle.mc_se;
    let line = format!(
        "aipw coverage {coverage:.3} over {} reps (target [0.92, 0.97]); ipw oracle bias {:+.5} = {z:.3} MC se (mc se {:.4}) (<= 3)",
        dr.reps - dr.failures,
        oracle.bias,
        oracle.mc_se
    );
    check((0.92..=0.97).contains(&coverage) && z <= 3.0, line.clone())?;
    Ok(line)
}

// ---------------------------------------------------------------------------
// 5. second-order remainder
// ---------------------------------------------------------------------------

/// Rebuild `base` with `p(x)` and `p(y | a, x)` from `donor`, keeping the
/// propensity of `base`.
fn swap_outcome_keep_pi(base: &DiscreteMeasure, donor: &DiscreteMeasure) -> Result<DiscreteMeasure, String> {
    let (xi, ai) = (base.coord_index("x").map_err(err)?, base.coord_index("a").map_err(err)?);
    let marg = |m: &DiscreteMeasure, f: &dyn Fn(&[f64]) -> bool| -> f64 {
        m.points().iter().zip(m.probs()).filter(|(z, _)| f(z)).map(|(_, p)| p).sum()
    };
    let probs: Vec<f64> = base
        .points()
        .iter()
        .zip(donor.probs())
        .map(|(z, &q)| {
            let (x, a) = (z[xi], z[ai]);
            let px_donor = marg(donor, &|w| w[xi] == x);
            let pax_donor = marg(donor, &|w| w[xi] == x && w[ai] == a);
            let pi_base = marg(base, &|w| w[xi] == x && w[ai] == a) / marg(base, &|w| w[xi] == x);
            px_donor * pi_base * (q / pax_donor)
        })
        .collect();
    let total: f64 = probs.iter().sum();
    DiscreteMeasure::new(base.coords().to_vec(), base.points().to_vec(), probs.iter().map(|p| p / total).collect()).map_err(err)
}

/// Same as `swap_outcome_keep_pi` with the roles reversed: keep the outcome
/// law of `base`, take `p(x)` and the propensity from `donor`.
fn swap_pi_keep_outcome(base: &DiscreteMeasure, donor: &DiscreteMeasure) -> Result<DiscreteMeasure, String> {
    swap_outcome_keep_pi(donor, base)
}

fn remainder() -> Outcome {
    let mut rng = stream_rng(5, Stream::Scores);
    let ys = [0.0, 1.0, 2.5];
    let mut worst_exact: f64 = 0.0;
    for _ in 0..50 {
        let truth = random_causal_measure(&mut rng, 3, &ys, 0.02).map_err(err)?;
        let other = random_causal_measure(&mut rng, 3, &ys, 0.02).map_err(err)?;
        for est in [swap_outcome_keep_pi(&truth, &other)?, swap_pi_keep_outcome(&truth, &other)?] {
            let r = second_order_remainder(&truth, &est).map_err(err)?;
            worst_exact = worst_exact.max(r.treated.r2.abs()).max(r.control.r2.abs());
        }
    }
    check(worst_exact < 1e-15, format!("r2 with one exact nuisance reached {worst_exact:e}"))?;

    let (mut violations, mut unweighted, mut arms) = (0, 0, 0);
    for _ in 0..1000 {
        let truth = random_causal_measure(&mut rng, 3, &ys, 0.02).map_err(err)?;
        let est = random_causal_measure(&mut rng, 3, &ys, 0.02).map_err(err)?;
        let r = match second_order_remainder(&truth, &est) {
            Ok(r) => r,
            Err(e) => return Err(format!("bound check failed: {e}")),
        };
        for arm in [r.treated, r.control] {
            arms += 1;
            if arm.r2.abs() > arm.bound {
                violations += 1;
            }
            if arm.r2.abs() > arm.unweighted_bound {
                unweighted += 1;
            }
        }
    }
    let line = format!(
        "one exact nuisance: max |r2| {worst_exact:.1e}; 1000 pairs: {violations}/{arms} arm violations of \
         ||(pi-pihat)/pihat|| ||mu-muhat||; unweighted product exceeded in {unweighted}/{arms} (informational)"
    );
    check(violations == 0, line.clone())?;
    Ok(line)
}

// ---------------------------------------------------------------------------
// 6. weak instruments
// ---------------------------------------------------------------------------

fn weak_iv() -> Outcome {
    let cfg = WeakIvConfig {
        base: IvDgpConfig::default(),
        strengths: vec![0.05, 0.1, 0.2, 0.4, 0.8],
        reps: 500,
        seed: 2024,
        level: DEFAULT_LEVEL,
    };
    let rows = weak_iv_study(&cfg).map_err(err)?;
    let widths: Vec<f64> = rows.iter().map(|r| r.median_ci_width).collect();
    let biases: Vec<f64> = rows.iter().map(|r| r.median_bias.abs()).collect();
    let width_ok = widths.windows(2).all(|w| w[1] < w[0]);
    let bias_ok = rows
        .windows(2)
        .all(|w| w[1].median_bias.abs() <= w[0].median_bias.abs() + 2.0 * w[0].median_se.hypot(w[1].median_se));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" > ");
    let line = format!(
        "strengths {:?}: median CI width {}; |median bias| {}",
        cfg.strengths,
        fmt(&widths),
        biases.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
    );
    check(width_ok && bias_ok, line.clone())?;
    Ok(line)
}

// ---------------------------------------------------------------------------
// 7. determinism of every subcommand
// ---------------------------------------------------------------------------

fn cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_causalkit")).args(args).output().map_err(err)?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let measure = p("measure.csv");
    std::fs::write(&measure, "x,a,y,prob\n0,0,0,0.1\n0,0,1,0.1\n0,1,0,0.05\n0,1,1,0.15\n1,0,0,0.2\n1,0,1,0.1\n1,1,0,0.1\n1,1,1,0.2\n")
        .map_err(err)?;
    let mut checked = 0;
    for design in ["observational", "iv", "panel", "rd"] {
        let mut runs = Vec::new();
        for run in 0..2 {
            let (data, truth) = (p(&format!("{design}{run}.csv")), p(&format!("{design}{run}.truth.csv")));
            let manifest = cli(&["simulate", "--design", design, "--seed", "42", "--n", "300", "--out", &data, "--truth", &truth])?;
            runs.push((std::fs::read(&data).map_err(err)?, std::fs::read(&truth).map_err(err)?, manifest));
        }
        check(runs[0].0 == runs[1].0 && runs[0].1 == runs[1].1, format!("simulate {design}: files differ"))?;
        checked += 1;
    }
    let estimates: [(&str, &[&str]); 12] = [
        ("observational0.csv", &["--method", "naive"]),
        ("observational0.csv", &["--method", "ipw_ht"]),
        ("observational0.csv", &["--method", "ipw_hajek"]),
        ("observational0.csv", &["--method", "gformula"]),
        ("observational0.csv", &["--method", "psm_att"]),
        ("observational0.csv", &["--method", "aipw"]),
        ("observational0.csv", &["--method", "aipw", "--format", "csv"]),
        ("iv0.csv", &["--method", "iv_wald", "--no-covariates"]),
        ("iv0.csv", &["--method", "tsls"]),
        ("panel0.csv", &["--method", "did"]),
        ("panel0.csv", &["--method", "fe_within"]),
        ("rd0.csv", &["--method", "rd", "--cutoff", "0", "--bandwidth", "0.5"]),
    ];
    for (file, extra) in estimates {
        let input = p(file);
        let mut args = vec!["estimate", "--input", input.as_str(), "--seed", "42"];
        args.extend_from_slice(extra);
        check(cli(&args)? == cli(&args)?, format!("estimate {extra:?} differs"))?;
        checked += 1;
    }
    for format in ["json", "csv"] {
        let args = ["montecarlo", "--reps", "40", "--n", "400", "--seed", "42", "--scenario", "all", "--format", format];
        check(cli(&args)? == cli(&args)?, format!("montecarlo {format} differs"))?;
        checked += 1;
        let args = ["eif-check", "--measure", &measure, "--functional", "ate", "--estimate-measure", &measure, "--seed", "42", "--format", format];
        check(cli(&args)? == cli(&args)?, format!("eif-check {format} differs"))?;
        checked += 1;
    }
    Ok(format!("{checked} subcommand invocations byte-identical across two runs"))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("1 exact identities", identities),
        ("2 influence functions", eif_properties),
        ("3 double robustness", double_robustness),
        ("4 inference calibration", calibration),
        ("5 second-order remainder", remainder),
        ("6 weak instruments", weak_iv),
        ("7 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{name}] ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{name}] ({secs:.1}s) {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
