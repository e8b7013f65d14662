mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use ppkrige::basis::{make_spatial_basis, roughness_matrix, Rect, SpatialBasis};
use ppkrige::spatial::{solve_cov_cg, xi_grid, CovSmoother, MeanSmoother};

fn square() -> Rect {
    Rect::new(-1.0, 1.0, -1.0, 1.0).unwrap()
}

fn random_sites(rng: &mut impl Rng, d: usize) -> Vec<[f64; 2]> {
    (0..d).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
}

/// Coefficients of `1`, `s¹` and `s²` in the tensor basis.
fn affine_coefficients(sb: &SpatialBasis) -> [DVector<f64>; 3] {
    let (bx, by) = sb.marginals();
    let (gx, gy) = (bx.greville(), by.greville());
    let q = sb.dim();
    [
        DVector::from_element(q, 1.0),
        DVector::from_fn(q, |i, _| gx[i / by.dim()]),
        DVector::from_fn(q, |i, _| gy[i % by.dim()]),
    ]
}

#[test]
fn covariance_trace_agrees_with_hutchinson() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let sb = make_spatial_basis(square(), 4, 1).unwrap();
    let j = roughness_matrix(&sb).unwrap();
    let d = 12;
    let gamma = design(&sb, &random_sites(&mut rng, d));
    let xi = 0.05;
    let exact = CovSmoother::new(&gamma, &j).unwrap().df(xi);
    let probes = 256;
    let mut acc = 0.0;
    for _ in 0..probes {
        let z = DMatrix::from_fn(d, d, |r, c| {
            if r == c {
                0.0
            } else if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        });
        let (x, _) = solve_cov_cg(&z, &gamma, &j, xi, 1e-10, 20_000).unwrap();
        let fitted = &gamma * x * gamma.transpose();
        let mut quad = z.component_mul(&fitted).sum();
        for s in 0..d {
            quad -= z[(s, s)] * fitted[(s, s)];
        }
        acc += quad;
    }
    let est = acc / probes as f64;
    let rel = (est - exact).abs() / exact;
    assert!(rel < 0.02, "exact df {exact}, Hutchinson {est}");
}

#[test]
fn degrees_of_freedom_fall_as_the_penalty_grows() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let sb = make_spatial_basis(square(), 4, 1).unwrap();
    let j = roughness_matrix(&sb).unwrap();
    let grid = xi_grid(1e-6, 1e6, 4).unwrap();
    for _ in 0..5 {
        let d = rng.random_range(6..=14);
        let gamma = design(&sb, &random_sites(&mut rng, d));
        let cov = CovSmoother::new(&gamma, &j).unwrap();
        let mean = MeanSmoother::new(&gamma, &j).unwrap();
        for w in grid.windows(2) {
            assert!(cov.df(w[0]) >= cov.df(w[1]) - 1e-9);
            assert!(mean.df(w[0]) >= mean.df(w[1]) - 1e-9);
        }
        assert!(cov.df(grid[0]) <= (d * (d - 1)) as f64 + 1e-9);
    }
}

#[test]
fn unpenalized_covariance_is_reproduced() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let sb = make_spatial_basis(square(), 4, 2).unwrap();
    let j = roughness_matrix(&sb).unwrap();
    let d = 9;
    let gamma = design(&sb, &random_sites(&mut rng, d));
    let [one, sx, sy] = affine_coefficients(&sb);
    let c0 = &one * one.transpose() * 0.8 + (&sx * sy.transpose() + &sy * sx.transpose()) * 0.3 + &sx * sx.transpose() * 0.5;
    let sigma = &gamma * &c0 * gamma.transpose();
    let smoother = CovSmoother::new(&gamma, &j).unwrap();
    for xi in [1e-6, 1e-2, 1.0] {
        let c = smoother.fit(&sigma, xi).unwrap();
        let fitted = &gamma * c * gamma.transpose();
        let mut worst: f64 = 0.0;
        for a in 0..d {
            for b in 0..d {
                if a != b {
                    worst = worst.max((fitted[(a, b)] - sigma[(a, b)]).abs());
                }
            }
        }
        assert!(worst < 1e-6, "xi {xi}: off-diagonal misfit {worst:e}");
    }
}

#[test]
fn flat_data_select_the_largest_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let sb = make_spatial_basis(square(), 4, 1).unwrap();
    let j = roughness_matrix(&sb).unwrap();
    let d = 8;
    let gamma = design(&sb, &random_sites(&mut rng, d));
    let grid = xi_grid(1e-3, 1e3, 2).unwrap();
    let diag = DMatrix::from_diagonal(&DVector::from_fn(d, |i, _| 1.0 + i as f64));
    let cov = CovSmoother::new(&gamma, &j).unwrap();
    let choice = cov.gcv(&diag, &grid).unwrap();
    assert!(choice.curve.iter().all(|p| p.gcv == Some(0.0)));
    assert_eq!(choice.xi, *grid.last().unwrap());
    assert_eq!(max_abs(&cov.fit(&diag, choice.xi).unwrap()), 0.0);

    let a = DMatrix::zeros(5, d);
    let choice = MeanSmoother::new(&gamma, &j).unwrap().gcv(&a, &grid).unwrap();
    assert_eq!(choice.xi, *grid.last().unwrap());
}

#[test]
fn conjugate_gradients_reach_the_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let sb = make_spatial_basis(square(), 4, 1).unwrap();
    let j = roughness_matrix(&sb).unwrap();
    let d = 10;
    let gamma = design(&sb, &random_sites(&mut rng, d));
    let x = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let sigma = &x * x.transpose();
    let xi = 0.3;
    let closed = CovSmoother::new(&gamma, &j).unwrap().fit(&sigma, xi).unwrap();
    let (cg, _) = solve_cov_cg(&sigma, &gamma, &j, xi, 1e-10, 20_000).unwrap();
    let fit = |c: &DMatrix<f64>| &gamma * c * gamma.transpose();
    let err = max_abs(&(fit(&closed) - fit(&cg))) / max_abs(&fit(&closed));
    assert!(err < 1e-6, "fitted values differ by {err:e}");
}
