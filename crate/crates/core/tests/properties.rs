use causalkit::data::{read_csv, write_csv_to, CsvSchema, Method, ObservationalDataset, PanelDataset, PanelRecord};
use causalkit::dgp::{generate_iv, generate_observational, IvDgpConfig, ObsDgpConfig};
use causalkit::estimators::{aipw, naive_dim, DEFAULT_LEVEL};
use causalkit::montecarlo::{run_mc, McConfig, Scenario};
use causalkit::nuisance::{cross_fit, CrossFitConfig};
use causalkit::quasi::{did, iv_wald};
use proptest::prelude::*;

fn dataset(seed: u64, n: usize) -> ObservationalDataset {
    generate_observational(&ObsDgpConfig { n, ..Default::default() }, seed).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_is_lossless(seed in any::<u64>(), n in 2usize..60) {
        let data = dataset(seed, n);
        let schema = CsvSchema::new("a", "y", &["x1", "x2"]);
        let mut buf = Vec::new();
        write_csv_to(&data, &schema, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &schema).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn aipw_is_shift_invariant_and_scale_equivariant(seed in 0u64..1000, shift in -50.0f64..50.0, scale in 0.1f64..10.0) {
        let data = dataset(seed, 300);
        let cf = CrossFitConfig { seed, ..Default::default() };
        let base = aipw(&data, &cross_fit(&data, &cf).unwrap(), DEFAULT_LEVEL).unwrap().estimate;
        let shifted_data = data.map_outcome(|y| y + shift).unwrap();
        let shifted = aipw(&shifted_data, &cross_fit(&shifted_data, &cf).unwrap(), DEFAULT_LEVEL).unwrap().estimate;
        prop_assert!((shifted.psi_hat - base.psi_hat).abs() < 1e-8);
        let scaled_data = data.map_outcome(|y| y * scale).unwrap();
        let scaled = aipw(&scaled_data, &cross_fit(&scaled_data, &cf).unwrap(), DEFAULT_LEVEL).unwrap().estimate;
        prop_assert!((scaled.psi_hat - scale * base.psi_hat).abs() < 1e-8 * scale.max(1.0));
        prop_assert!((scaled.se.unwrap() - scale * base.se.unwrap()).abs() < 1e-8 * scale.max(1.0));
    }

    #[test]
    fn naive_is_affine_equivariant(seed in any::<u64>(), shift in -10.0f64..10.0, scale in -5.0f64..5.0) {
        let data = dataset(seed, 80);
        let base = naive_dim(&data, DEFAULT_LEVEL).unwrap().psi_hat;
        let moved = naive_dim(&data.map_outcome(|y| scale * y + shift).unwrap(), DEFAULT_LEVEL).unwrap().psi_hat;
        prop_assert!((moved - scale * base).abs() < 1e-9);
    }

    #[test]
    fn wald_is_affine_equivariant(seed in 0u64..500, shift in -10.0f64..10.0, scale in 0.2f64..5.0) {
        let (iv, _) = generate_iv(&IvDgpConfig { n: 400, ..Default::default() }, seed).unwrap();
        let base = iv_wald(&iv, DEFAULT_LEVEL).unwrap();
        let moved = iv_wald(&iv.map_outcome(|y| scale * y + shift).unwrap(), DEFAULT_LEVEL).unwrap();
        prop_assert!((moved.late - scale * base.late).abs() < 1e-9 * scale.max(1.0));
        prop_assert!((moved.first_stage - base.first_stage).abs() < 1e-15);
    }

    #[test]
    fn did_ignores_period_and_unit_shocks(
        ys in proptest::collection::vec(-5.0f64..5.0, 16),
        period_shock in -3.0f64..3.0,
        unit_shocks in proptest::collection::vec(-3.0f64..3.0, 8),
    ) {
        let records: Vec<PanelRecord> = (0..16)
            .map(|i| {
                let (unit, period) = ((i / 2) as i64, (i % 2) as i64);
                let group = unit < 4;
                PanelRecord { unit, period, treated: group && period == 1, y: ys[i], group }
            })
            .collect();
        let panel = PanelDataset::new(records).unwrap();
        let base = did(&panel).unwrap().estimate;
        let shocked = panel
            .map_outcome(|r| r.y + unit_shocks[r.unit as usize] + if r.period == 1 { period_shock } else { 0.0 })
            .unwrap();
        prop_assert!((did(&shocked).unwrap().estimate - base).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mc_rows_satisfy_mse_identity_and_reproduce(seed in any::<u32>(), scenario in 0usize..4) {
        let cfg = McConfig {
            estimators: vec![Method::Naive, Method::IpwHajek, Method::IpwOracle, Method::Aipw],
            reps: 12,
            n: 250,
            seed: seed as u64,
            scenario: Scenario::ALL[scenario],
            ..Default::default()
        };
        let a = run_mc(&cfg).unwrap();
        for row in &a.rows {
            let rhs = row.variance + row.bias * row.bias;
            prop_assert!((row.mse - rhs).abs() <= 1e-10 * row.mse.max(1e-300), "{row:?}");
        }
        prop_assert_eq!(a, run_mc(&cfg).unwrap());
    }
}
