//! Property tests over randomized inputs.

use proptest::prelude::*;

use fodkit_core::fod_analysis::{extract_peaks, PeakConfig};
use fodkit_core::metrics::{afd_mape, agreement_rate, FiberCountConfusion};
use fodkit_core::sphere_sh::{
    sh_eval_at, tessellate_sphere, ShBasisSpec, ShCoefficients, UnitDirection,
};

fn unit_direction() -> impl Strategy<Value = UnitDirection> {
    (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, phi)| {
        let r = (1.0 - z * z).max(0.0).sqrt();
        UnitDirection::normalize(r * phi.cos(), r * phi.sin(), z).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_axis_is_idempotent_and_antipodal(d in unit_direction()) {
        let c = d.canonical_axis();
        prop_assert!(c.axis_angle_to(&d) < 1e-6);
        let cc = c.canonical_axis();
        prop_assert!((c.x() - cc.x()).abs() < 1e-15);
        prop_assert!(d.neg().canonical_axis().axis_angle_to(&c) < 1e-6);
    }

    #[test]
    fn basis_evaluation_is_even(d in unit_direction(), seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let basis = ShBasisSpec::new(8).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coeffs = ShCoefficients::new(basis, values).unwrap();
        let a = sh_eval_at(&coeffs, &d);
        let b = sh_eval_at(&coeffs, &d.neg());
        prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn afd_mape_homogeneity(k in 0.05f64..4.0, values in prop::collection::vec(0.1f64..5.0, 1..20)) {
        let test: Vec<f64> = values.iter().map(|v| v * k).collect();
        let mask = vec![true; values.len()];
        let e = afd_mape(&values, &test, &mask).unwrap();
        prop_assert!((e.mape_percent - 100.0 * (k - 1.0).abs()) < 1e-9);
    }

    #[test]
    fn jaccard_is_transpose_symmetric(entries in prop::collection::vec(0.0f64..1.0, 9)) {
        let total: f64 = entries.iter().sum();
        prop_assume!(total > 1e-6);
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = entries[3 * i + j] / total;
            }
        }
        let mut t = m;
        for i in 0..3 {
            for j in 0..3 {
                t[i][j] = m[j][i];
            }
        }
        let cm = FiberCountConfusion { matrix: m, eligible: 100, excluded_zero_peaks: 0 };
        let cmt = FiberCountConfusion { matrix: t, eligible: 100, excluded_zero_peaks: 0 };
        for k in 1..=3 {
            match (agreement_rate(&cm, k), agreement_rate(&cmt, k)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "asymmetric definedness: {other:?}"),
            }
        }
    }
}

proptest! {
    // Peak extraction touches dense meshes; keep the case count modest.
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn peak_sets_always_satisfy_their_invariants(seed in 0u64..10_000) {
        use rand::{Rng, SeedableRng};
        let basis = ShBasisSpec::new(8).unwrap();
        let mesh = tessellate_sphere(3).unwrap();
        let cfg = PeakConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fod = ShCoefficients::new(basis, values).unwrap();
        let peaks = extract_peaks(&fod, &mesh, &cfg).unwrap();
        prop_assert!(peaks.len() <= cfg.max_peaks);
        let ps = peaks.peaks();
        for (i, p) in ps.iter().enumerate() {
            prop_assert!(p.amplitude > 0.0);
            prop_assert!(p.amplitude >= cfg.relative_threshold * ps[0].amplitude - 1e-12);
            if i > 0 {
                prop_assert!(ps[i - 1].amplitude >= p.amplitude);
            }
            for q in &ps[i + 1..] {
                prop_assert!(
                    p.axis.axis_angle_to(&q.axis).to_degrees() >= cfg.min_separation_deg - 1e-9
                );
            }
        }
    }
}
