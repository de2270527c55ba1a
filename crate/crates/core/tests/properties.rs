use grassreg::eval::{self, predict_independent, ConstantCurve, KarcherConfig, PredictionConfig};
use grassreg::ggr::{
    fit_cs_ggr, fit_cs_ggr_from, fit_std_ggr, fit_tw_ggr, AffineMap, SplineModel,
};
use grassreg::grassmann::{exp_map_closed, geodesic_distance};
use grassreg::io::{self, DatasetFile};
use grassreg::random::{gaussian_matrix, random_point, random_tangent, rng};
use grassreg::represent::shape_to_grassmann;
use grassreg::synthetic::{generate_dataset, FrequencyLaw, SynthConfig};
use grassreg::{Dataset, FitConfig, GrassmannPoint};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn noisy_curve(seed: u64, count: usize) -> Dataset {
    let mut g = rng(seed);
    let y0 = random_point(&mut g, 6, 2);
    let v = random_tangent(&mut g, &y0, 0.9);
    let w = random_tangent(&mut g, &y0, 0.3);
    let r: Vec<f64> = (0..count).map(|i| 3.0 + 2.0 * i as f64 / (count - 1) as f64).collect();
    let pts = r
        .iter()
        .map(|&ri| {
            let t = (ri - 3.0) / 2.0;
            let bent = grassreg::TangentVector::new(y0.clone(), v.matrix() * t + w.matrix() * (t * t)).unwrap();
            let on = exp_map_closed(&bent).unwrap();
            exp_map_closed(&random_tangent(&mut g, &on, 0.05)).unwrap()
        })
        .collect();
    Dataset::from_parts(&r, pts).unwrap()
}

fn orthonormality(y: &DMatrix<f64>) -> f64 {
    (y.tr_mul(y) - DMatrix::identity(y.ncols(), y.ncols())).norm()
}

fn nonincreasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + 1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn fits_descend_and_stay_feasible(seed in 0u64..10_000) {
        let data = noisy_curve(seed, 9);
        let cfg = FitConfig::default();
        let mid = 4.0;

        let (std, std_report) = fit_std_ggr(&data, &cfg).unwrap();
        prop_assert!(nonincreasing(&std_report.energy_trace));
        prop_assert!(orthonormality(std.x1.matrix()) < 1e-8);
        prop_assert!(std.x1.matrix().tr_mul(&std.x2).norm() < 1e-8);
        let residual = eval::residual_sum(&data, &std).unwrap();
        prop_assert!((residual - std_report.data_term * cfg.sigma2).abs() < 1e-10);

        let (tw, tw_report) = fit_tw_ggr(&data, &cfg, None).unwrap();
        prop_assert!(nonincreasing(&tw_report.energy_trace));
        prop_assert!(tw.geodesic.x1.matrix().tr_mul(&tw.geodesic.x2).norm() < 1e-8);

        let (cs, cs_report) = fit_cs_ggr(&data, &cfg, &[mid]).unwrap();
        prop_assert!(nonincreasing(&cs_report.energy_trace));
        prop_assert!(orthonormality(cs.x1.matrix()) < 1e-8);
        prop_assert!(cs.x1.matrix().tr_mul(&cs.x2).norm() < 1e-8);
        prop_assert!(cs.x1.matrix().tr_mul(&cs.x3).norm() < 1e-8);

        let (_, warm) = fit_cs_ggr_from(&data, &cfg, &SplineModel::from_geodesic(&std, &[mid])).unwrap();
        prop_assert!(warm.energy <= std_report.energy + 1e-8);

        let mu = eval::karcher_mean(&data.points(), &KarcherConfig::default()).unwrap();
        let mean_term = eval::residual_sum(&data, &ConstantCurve(mu)).unwrap();
        for report in [&std_report, &tw_report, &cs_report] {
            if report.energy <= mean_term {
                prop_assert!(report.r_squared.unwrap() >= -1e-12);
            }
        }
    }

    #[test]
    fn prediction_ignores_the_normalization(seed in 0u64..10_000, shift in -5.0f64..5.0, stretch in 0.2f64..5.0) {
        let data = noisy_curve(seed, 7);
        let (std, _) = fit_std_ggr(&data, &FitConfig::default()).unwrap();
        let other = std.renormalized(AffineMap { offset: shift, scale: stretch }).unwrap();
        let mut g = rng(seed + 1);
        let cfg = PredictionConfig::default();
        for _ in 0..5 {
            let q = random_point(&mut g, 6, 2);
            let a = predict_independent(&std, &q, (3.0, 5.0), &cfg).unwrap();
            let b = predict_independent(&other, &q, (3.0, 5.0), &cfg).unwrap();
            prop_assert!((a.r - b.r).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn karcher_mean_ignores_order(seed in 0u64..100_000) {
        let mut g = rng(seed);
        let c = random_point(&mut g, 6, 2);
        let pts: Vec<GrassmannPoint> =
            (0..5).map(|_| exp_map_closed(&random_tangent(&mut g, &c, 0.4)).unwrap()).collect();
        let mut rev = pts.clone();
        rev.reverse();
        rev.rotate_left(2);
        let a = eval::karcher_mean(&pts, &KarcherConfig::default()).unwrap();
        let b = eval::karcher_mean(&rev, &KarcherConfig::default()).unwrap();
        prop_assert!(geodesic_distance(&a, &b).unwrap() < 1e-8);
    }

    #[test]
    fn shapes_are_affine_invariant(seed in 0u64..100_000, shear in -3.0f64..3.0, sx in 0.1f64..10.0, sy in 0.1f64..10.0) {
        let mut g = rng(seed);
        let x = gaussian_matrix(&mut g, 8, 2);
        let a = DMatrix::from_row_slice(2, 2, &[sx, shear, 0.0, sy]) * grassreg::random::random_orthogonal(&mut g, 2);
        let mut moved = &x * a.transpose();
        moved.column_mut(0).add_scalar_mut(3.0);
        moved.column_mut(1).add_scalar_mut(-7.0);
        let p = shape_to_grassmann(&x).unwrap().point;
        let q = shape_to_grassmann(&moved).unwrap().point;
        prop_assert!(geodesic_distance(&p, &q).unwrap() < 1e-7);
        let (pm, qm) = (p.matrix(), q.matrix());
        prop_assert!((pm * pm.transpose() - qm * qm.transpose()).norm() < 1e-10);
    }

    #[test]
    fn dataset_files_round_trip(seed in 0u64..100_000, count in 2usize..8, offset in -1e6f64..1e6, width in 1e-6f64..1e6) {
        let mut g = rng(seed);
        let r: Vec<f64> = (0..count).map(|i| offset + width * (i as f64 + 0.37) / 3.0).collect();
        let pts = (0..count).map(|_| random_point(&mut g, 5, 2)).collect();
        let file = DatasetFile { dataset: Dataset::from_parts(&r, pts).unwrap(), units: Some("u".into()) };
        let text = io::format_dataset(&file).unwrap();
        let back = io::parse_dataset(&text).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(io::format_dataset(&back).unwrap(), text);
    }

    #[test]
    fn matrix_files_round_trip(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 12)) {
        let m = DMatrix::from_row_slice(3, 4, &values);
        let text = io::format_matrix(&m);
        let back = io::parse_matrix(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(io::format_matrix(&back), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn synthetic_data_is_reproducible_and_valid(seed in 0u64..1_000, law in 0usize..3) {
        let cfg = SynthConfig {
            num_points: 6,
            samples_per_signal: 200,
            freq_law: [FrequencyLaw::Std, FrequencyLaw::logistic(), FrequencyLaw::sine()][law].clone(),
            seed,
            ..SynthConfig::default()
        };
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        prop_assert_eq!(&a.dataset, &b.dataset);
        for s in a.dataset.samples() {
            prop_assert!(s.point.orthonormality_error() < 1e-10);
        }
    }
}
