mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ppkrige::basis::{make_spatial_basis, make_time_basis, roughness_matrix, Rect, TimeDomain};
use ppkrige::data::{parse_events, CountFunction};
use ppkrige::krige::{predict_counts, solve_kriging, truncate_spectrum};
use ppkrige::moments::MomentEstimates;
use ppkrige::simulate::relative_errors;
use ppkrige::spatial::{fit_mean_surface, MeanSmoother};

fn domain() -> impl Strategy<Value = TimeDomain> {
    (-10.0..10.0f64, 0.1..30.0f64).prop_map(|(a, len)| TimeDomain::new(a, a + len).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn basis_is_a_partition_of_unity(dom in domain(), order in 2usize..6, k in 0usize..8, u in 0.0..=1.0f64) {
        let b = make_time_basis(dom, order, k, None).unwrap();
        let t = dom.start() + u * dom.length();
        let v = b.eval(t).unwrap();
        prop_assert!((v.sum() - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|&x| x >= -1e-15));
        prop_assert!(v.iter().filter(|&&x| x != 0.0).count() <= order);
    }

    #[test]
    fn gram_is_symmetric_banded_and_sums_to_length(dom in domain(), order in 2usize..6, k in 0usize..8) {
        let b = make_time_basis(dom, order, k, None).unwrap();
        let g = b.gram().unwrap();
        let m = g.matrix();
        let tol = 1e-14 * m.amax();
        prop_assert!((m.sum() - dom.length()).abs() < 1e-10 * dom.length().max(1.0));
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                prop_assert!((m[(i, j)] - m[(j, i)]).abs() <= tol);
                if i.abs_diff(j) >= order {
                    prop_assert_eq!(m[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn events_round_trip_and_counts_end_at_totals(seed in any::<u64>(), n in 1usize..5, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_pattern(&mut rng, n, d, 6);
        let mut buf = Vec::new();
        p.write_events_to(&mut buf).unwrap();
        let back = parse_events(buf.as_slice(), "mem", p.sites(), p.domain()).unwrap();
        prop_assert_eq!(&back, &p);
        for i in 0..n {
            for j in 0..d {
                let f = p.count_function(i, j).unwrap();
                prop_assert_eq!(f.value(1.0), p.events(i, j).len() as f64);
            }
        }
    }

    #[test]
    fn count_predictions_are_linear_in_weights(seed in any::<u64>(), s in -2.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_pattern(&mut rng, 2, 3, 5);
        let c1 = DVector::from_vec(vec![0.2, -0.4, 1.1]);
        let c2 = DVector::from_vec(vec![0.5, 0.3, -0.7]);
        let combo = &c1 + &c2 * s;
        for i in 0..2 {
            let f = predict_counts(&p, &combo, i).unwrap();
            let g1 = predict_counts(&p, &c1, i).unwrap();
            let g2 = predict_counts(&p, &c2, i).unwrap();
            let lin = CountFunction::weighted_sum(p.domain(), &[(1.0, &g1), (s, &g2)]).unwrap();
            prop_assert!(f.l2_distance(&lin).unwrap() < 1e-12);
        }
    }

    #[test]
    fn second_moment_blocks_transpose(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_pattern(&mut rng, 4, 3, 5);
        let b = make_time_basis(p.domain(), 4, 2, None).unwrap();
        let est = MomentEstimates::estimate(&p, &b).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let (a, b) = (est.second.get(j, k), est.second.get(k, j).transpose());
                prop_assert!((&a - &b).amax() <= 1e-12 * a.amax().max(1.0));
            }
        }
        let m = &est.m;
        prop_assert!((m - m.transpose()).amax() <= 1e-14 * m.amax().max(1.0));
        prop_assert!((&est.sigma - est.sigma.transpose()).amax() <= 1e-12 * est.sigma.amax().max(1.0));
        let eig = m.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|&e| e >= -1e-10 * m.amax().max(1.0)));
    }

    #[test]
    fn truncation_rank_is_smallest_sufficient(vals in prop::collection::vec(0.0..10.0f64, 1..8), thr in 0.05..=1.0f64) {
        let d = vals.len();
        prop_assume!(vals.iter().sum::<f64>() > 1e-3);
        let s = DMatrix::from_diagonal(&DVector::from_vec(vals.clone()));
        let t = truncate_spectrum(&s, thr).unwrap();
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = sorted.iter().sum();
        let kept: f64 = sorted[..t.rank].iter().sum();
        prop_assert!(t.rank <= d);
        prop_assert!(kept >= thr * total - 1e-12 * total);
        if t.rank > 0 {
            let less: f64 = sorted[..t.rank - 1].iter().sum();
            prop_assert!(less < thr * total - 1e-12 * total || sorted[t.rank - 1] <= 1e-10 * sorted[0]);
        }
    }

    #[test]
    fn kriging_residuals_vanish(seed in any::<u64>(), d in 2usize..7, thr in 0.5..=0.99f64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let sigma = &x * x.transpose() + DMatrix::identity(d, d) * 0.05;
        let u = DMatrix::from_fn(d, 2, |_, _| rng.random_range(0.5..1.5));
        let m = &u * u.transpose();
        let s0 = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let m0 = &m * DVector::from_fn(d, |_, _| rng.random_range(0.0..0.5));
        let sol = solve_kriging(&sigma, &m, &s0, &m0, 1.0, thr, 0.999).unwrap();
        prop_assert!(sol.reduced.constraint_residual(&sol.c_star) <= 1e-8 * (1.0 + sol.reduced.m0_tilde.norm()));
        prop_assert!(sol.reduced.stationarity_residual(&sol.lagrange, &s0) <= 1e-8 * (1.0 + s0.norm()));
    }

    #[test]
    fn mean_smoother_is_linear_with_leverages_in_unit_interval(seed in any::<u64>(), logxi in -4.0..4.0f64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sb = make_spatial_basis(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), 4, 1).unwrap();
        let j = roughness_matrix(&sb).unwrap();
        let sites: Vec<[f64; 2]> = (0..10).map(|_| [rng.random(), rng.random()]).collect();
        let gamma = sb.design_matrix(&sites).unwrap();
        let a1 = DMatrix::from_fn(3, 10, |_, _| rng.random_range(-1.0..1.0));
        let a2 = DMatrix::from_fn(3, 10, |_, _| rng.random_range(-1.0..1.0));
        let xi = 10f64.powf(logxi);
        let f = |a: &DMatrix<f64>| fit_mean_surface(a, &gamma, &j, xi).unwrap();
        let sum = f(&(&a1 + &a2));
        prop_assert!((&sum - f(&a1) - f(&a2)).amax() <= 1e-9 * sum.amax().max(1.0));
        let h = MeanSmoother::new(&gamma, &j).unwrap().leverages(xi);
        prop_assert!(h.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
    }

    #[test]
    fn relative_errors_decompose(seed in any::<u64>(), k in 2usize..12) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = DVector::from_fn(4, |_, _| rng.random_range(0.5..2.0));
        let est: Vec<DVector<f64>> = (0..k).map(|_| DVector::from_fn(4, |_, _| rng.random_range(0.0..3.0))).collect();
        let m = relative_errors(&est, &truth).unwrap();
        prop_assert!((m.bias.powi(2) + m.sd.powi(2) - m.rmse.powi(2)).abs() < 1e-10);
    }
}
