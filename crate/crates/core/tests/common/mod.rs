//! Independent oracles shared by the integration tests. Everything here is
//! written the slow, obvious way on purpose.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use ppkrige::basis::{SpatialBasis, SplineBasis, TimeDomain};
use ppkrige::data::{PointPattern, SiteSet};
use ppkrige::quadrature::GaussLegendre;

pub fn unit() -> TimeDomain {
    TimeDomain::new(0.0, 1.0).unwrap()
}

/// Random pattern with `n` replicates at `d` random sites, at most
/// `max_events` uniform events per (replicate, site).
pub fn random_pattern(rng: &mut impl Rng, n: usize, d: usize, max_events: usize) -> PointPattern {
    let coords = (0..d).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let sites = SiteSet::from_coords(coords).unwrap();
    let events = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let m = rng.random_range(0..=max_events);
                    let mut v: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
                    v.sort_by(f64::total_cmp);
                    v
                })
                .collect()
        })
        .collect();
    PointPattern::unlabelled(unit(), sites, events).unwrap()
}

/// `∫ββᵀ` by Gauss–Legendre on every knot span, using dense evaluation.
pub fn dense_gram(basis: &SplineBasis) -> DMatrix<f64> {
    let p = basis.dim();
    let mut g = DMatrix::zeros(p, p);
    let gl = GaussLegendre::new(12);
    let mut knots: Vec<f64> = basis.knots().to_vec();
    knots.dedup();
    for w in knots.windows(2) {
        for (t, wt) in gl.on_interval(w[0], w[1]) {
            let b = basis.eval(t).unwrap();
            g += &b * b.transpose() * wt;
        }
    }
    g
}

pub fn naive_mean(pattern: &PointPattern, basis: &SplineBasis) -> DMatrix<f64> {
    let g = dense_gram(basis).lu();
    let (n, d, p) = (pattern.n(), pattern.d(), basis.dim());
    let mut out = DMatrix::zeros(p, d);
    for j in 0..d {
        let mut s = DVector::zeros(p);
        for i in 0..n {
            for &u in pattern.events(i, j) {
                s += basis.eval(u).unwrap();
            }
        }
        s /= n as f64;
        out.set_column(j, &g.solve(&s).unwrap());
    }
    out
}

pub fn naive_second(pattern: &PointPattern, basis: &SplineBasis, j: usize, k: usize) -> DMatrix<f64> {
    let gi = dense_gram(basis).try_inverse().unwrap();
    let p = basis.dim();
    let mut s = DMatrix::zeros(p, p);
    for i in 0..pattern.n() {
        let (x, y) = (pattern.events(i, j), pattern.events(i, k));
        for (a, &u) in x.iter().enumerate() {
            for (b, &v) in y.iter().enumerate() {
                if j == k && a == b {
                    continue;
                }
                s += basis.eval(u).unwrap() * basis.eval(v).unwrap().transpose();
            }
        }
    }
    s /= pattern.n() as f64;
    &gi * s * &gi
}

/// Minimizer of a convex quadratic known only through evaluations: the
/// Hessian and gradient are recovered by polarization, then solved by SVD.
pub fn black_box_qp(dim: usize, f: impl Fn(&DVector<f64>) -> f64) -> DVector<f64> {
    let zero = DVector::zeros(dim);
    let f0 = f(&zero);
    let unit = |a: usize| {
        let mut e = DVector::zeros(dim);
        e[a] = 1.0;
        e
    };
    let fa: Vec<f64> = (0..dim).map(|a| f(&unit(a))).collect();
    let fm: Vec<f64> = (0..dim).map(|a| f(&(-unit(a)))).collect();
    let mut h = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        h[(a, a)] = fa[a] + fm[a] - 2.0 * f0;
        for b in 0..a {
            let v = f(&(unit(a) + unit(b))) - fa[a] - fa[b] + f0;
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    // f(x) = ½xᵀHx + gᵀx + f0.
    let g = DVector::from_fn(dim, |a, _| 0.5 * (fa[a] - fm[a]));
    h.svd(true, true).solve(&(-g), 1e-12).unwrap()
}

/// `vec` stacking columns.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    DMatrix::from_fn(ar * br, ac * bc, |r, c| a[(r / br, c / bc)] * b[(r % br, c % bc)])
}

/// Dense `q² × q²` normal matrix of the covariance fit.
pub fn dense_omega(gamma: &DMatrix<f64>, j: &DMatrix<f64>, xi: f64) -> DMatrix<f64> {
    let d = gamma.nrows();
    let gg = kron(gamma, gamma);
    let mut mask = DMatrix::<f64>::identity(d * d, d * d);
    for s in 0..d {
        mask[(s * d + s, s * d + s)] = 0.0;
    }
    gg.transpose() * &mask * &gg + kron(j, j) * xi
}

/// Condition number of `Ω` restricted to its numerical range.
pub fn omega_range_condition(gamma: &DMatrix<f64>, j: &DMatrix<f64>, xi: f64) -> f64 {
    let sv = dense_omega(gamma, j, xi).svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.iter().filter(|&&v| v > 1e-11 * smax).fold(f64::INFINITY, |a, &v| a.min(v));
    smax / smin
}

/// Dense `q² × q²` assembly of the covariance normal equations, solved by
/// SVD pseudo-inverse, then symmetrized.
pub fn dense_cov_solve(sigma: &DMatrix<f64>, gamma: &DMatrix<f64>, j: &DMatrix<f64>, xi: f64) -> DMatrix<f64> {
    let q = gamma.ncols();
    let gg = kron(gamma, gamma);
    let omega = dense_omega(gamma, j, xi);
    let mut off = sigma.clone();
    off.fill_diagonal(0.0);
    let rhs = gg.transpose() * vec_of(&off);
    let svd = omega.svd(true, true);
    let smax = svd.singular_values.max();
    let x = svd.solve(&rhs, 1e-11 * smax).unwrap();
    let c = DMatrix::from_column_slice(q, q, x.as_slice());
    (&c + c.transpose()) * 0.5
}

/// Dense evaluation of `γ(s)` for many points.
pub fn design(sb: &SpatialBasis, pts: &[[f64; 2]]) -> DMatrix<f64> {
    sb.design_matrix(pts).unwrap()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

/// Asymptotic Kolmogorov p-value of `√n · D`.
pub fn ks_p_value(n: usize, dstat: f64) -> f64 {
    let x = (n as f64).sqrt() * dstat;
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        s += if k % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * kf * kf * x * x).exp();
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
