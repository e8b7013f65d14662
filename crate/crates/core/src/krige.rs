//! Constrained kriging with spectral truncation.
//!
//! The weights minimize `cᵀΣc − 2cᵀσ₀` subject to the unbiasedness
//! constraint `Mc = m₀`. Both matrices are estimates, so each is replaced by
//! its leading eigen-directions first: the constraint becomes
//! `Δ_r U_rᵀ c = U_rᵀ m₀` and `c` is restricted to the span `V_s` of the
//! leading eigenvectors of `Σ`.

use nalgebra::{DMatrix, DVector};

use crate::data::{CountFunction, PointPattern};
use crate::error::{Error, Result};
use crate::linalg::{max_asymmetry, sym_eigen_desc};

/// Default mass fraction kept for both `M` and `Σ`.
pub const DEFAULT_THRESHOLD: f64 = 0.9;

/// Leading part of a symmetric eigendecomposition.
#[derive(Debug, Clone)]
pub struct Truncation {
    /// Kept eigenvalues, decreasing.
    pub values: DVector<f64>,
    /// `d × rank` eigenvectors.
    pub vectors: DMatrix<f64>,
    pub rank: usize,
    /// The full spectrum, decreasing.
    pub spectrum: DVector<f64>,
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid(format!("truncation threshold {t} not in (0, 1]")));
    }
    Ok(())
}

/// Keeps the smallest number of leading eigenvalues whose sum reaches
/// `threshold` times the sum of all eigenvalues. Negative and numerically
/// zero eigenvalues count towards the total but are never kept.
pub fn truncate_spectrum(s: &DMatrix<f64>, threshold: f64) -> Result<Truncation> {
    check_threshold(threshold)?;
    if !s.is_square() {
        return Err(Error::DimensionMismatch("matrix to truncate is not square".into()));
    }
    if max_asymmetry(s) > 1e-10 * s.amax().max(1.0) {
        return Err(Error::invalid("matrix to truncate is not symmetric"));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("matrix to truncate has non-finite entries".into()));
    }
    let (vals, vecs) = sym_eigen_desc(s);
    let top = vals.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let positive = vals.iter().take_while(|&&v| v > 1e-10 * top).count();
    let total: f64 = vals.iter().sum();
    let target = threshold * total;
    let mut rank = positive;
    let mut acc = 0.0;
    for (i, &v) in vals.iter().take(positive).enumerate() {
        acc += v;
        if acc >= target - 1e-12 * total.abs() {
            rank = i + 1;
            break;
        }
    }
    Ok(Truncation {
        values: vals.rows(0, rank).into_owned(),
        vectors: vecs.columns(0, rank).into_owned(),
        rank,
        spectrum: vals,
    })
}

/// The reduced block system, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    /// Kept eigenvalues of `Σ` (`H_s`).
    pub h_s: DVector<f64>,
    /// `d × s` eigenvectors of `Σ` (`V_s`).
    pub v_s: DMatrix<f64>,
    /// `r × d` truncated constraint matrix `Δ_r U_rᵀ`.
    pub m_tilde: DMatrix<f64>,
    /// `U_rᵀ m₀`.
    pub m0_tilde: DVector<f64>,
    /// Coordinates of the weights in `V_s`.
    pub c_reduced: DVector<f64>,
}

impl ReducedSystem {
    /// `‖M̃c − m̃₀‖`.
    pub fn constraint_residual(&self, c: &DVector<f64>) -> f64 {
        (&self.m_tilde * c - &self.m0_tilde).norm()
    }

    /// Gradient of the Lagrangian in the reduced coordinates.
    pub fn stationarity_residual(&self, lagrange: &DVector<f64>, sigma0: &DVector<f64>) -> f64 {
        let mv = &self.m_tilde * &self.v_s;
        let g = self.h_s.component_mul(&self.c_reduced) + mv.transpose() * lagrange - self.v_s.transpose() * sigma0;
        g.norm()
    }
}

#[derive(Debug, Clone)]
pub struct KrigingSolution {
    pub c_star: DVector<f64>,
    pub lagrange: DVector<f64>,
    pub rank_m: usize,
    pub rank_sigma: usize,
    /// `c*ᵀΣc* − 2c*ᵀσ₀ + σ₀₀` with the inputs used for the solve.
    pub spe_estimate: f64,
    pub threshold_m: f64,
    pub threshold_sigma: f64,
    pub reduced: ReducedSystem,
}

/// `cᵀΣc − 2cᵀσ₀ + σ₀₀`.
pub fn spe(c: &DVector<f64>, sigma: &DMatrix<f64>, sigma0: &DVector<f64>, sigma00: f64) -> f64 {
    c.dot(&(sigma * c)) - 2.0 * c.dot(sigma0) + sigma00
}

pub fn solve_kriging(
    sigma: &DMatrix<f64>,
    m: &DMatrix<f64>,
    sigma0: &DVector<f64>,
    m0: &DVector<f64>,
    sigma00: f64,
    threshold_m: f64,
    threshold_sigma: f64,
) -> Result<KrigingSolution> {
    let d = sigma.nrows();
    if sigma.shape() != (d, d) || m.shape() != (d, d) || sigma0.len() != d || m0.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "kriging inputs: Sigma {:?}, M {:?}, sigma0 {}, m0 {}",
            sigma.shape(),
            m.shape(),
            sigma0.len(),
            m0.len()
        )));
    }
    let tm = truncate_spectrum(m, threshold_m)?;
    let ts = truncate_spectrum(sigma, threshold_sigma)?;
    let (r, s) = (tm.rank, ts.rank);
    if s == 0 {
        return Err(Error::Singular {
            what: "Sigma has no positive eigenvalues".into(),
            condition: f64::INFINITY,
        });
    }
    let m_tilde = DMatrix::from_fn(r, d, |i, j| tm.values[i] * tm.vectors[(j, i)]);
    let m0_tilde = tm.vectors.transpose() * m0;
    let mv = &m_tilde * &ts.vectors;
    if r > 0 {
        let sv = mv.clone().svd(false, false).singular_values;
        let hi = sv.max();
        let rank = sv.iter().filter(|&&x| x > 1e-12 * hi.max(f64::MIN_POSITIVE)).count();
        if rank < r || hi == 0.0 {
            return Err(Error::Singular {
                what: format!(
                    "truncated constraint has rank {rank} < {r} on the {s} kept directions of Sigma"
                ),
                condition: if rank == 0 { f64::INFINITY } else { hi / sv.min() },
            });
        }
    }
    let n = s + r;
    let mut lhs = DMatrix::zeros(n, n);
    for i in 0..s {
        lhs[(i, i)] = ts.values[i];
    }
    lhs.view_mut((s, 0), (r, s)).copy_from(&mv);
    lhs.view_mut((0, s), (s, r)).copy_from(&mv.transpose());
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, s).copy_from(&(ts.vectors.transpose() * sigma0));
    rhs.rows_mut(s, r).copy_from(&m0_tilde);
    let sol = lhs.clone().lu().solve(&rhs).ok_or_else(|| Error::Singular {
        what: "kriging block system".into(),
        condition: crate::linalg::condition_estimate(&lhs),
    })?;
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("kriging solution is not finite".into()));
    }
    let c_reduced = sol.rows(0, s).into_owned();
    let lagrange = sol.rows(s, r).into_owned();
    let c_star = &ts.vectors * &c_reduced;
    let spe_estimate = spe(&c_star, sigma, sigma0, sigma00);
    Ok(KrigingSolution {
        c_star,
        lagrange,
        rank_m: r,
        rank_sigma: s,
        spe_estimate,
        threshold_m,
        threshold_sigma,
        reduced: ReducedSystem {
            h_s: ts.values,
            v_s: ts.vectors,
            m_tilde,
            m0_tilde,
            c_reduced,
        },
    })
}

/// Coefficients `Σⱼ c*ⱼ âⱼ` of the predicted intensity at the new site.
pub fn predict_intensity(c_star: &DVector<f64>, a: &DMatrix<f64>) -> Result<DVector<f64>> {
    if a.ncols() != c_star.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} site curves",
            c_star.len(),
            a.ncols()
        )));
    }
    Ok(a * c_star)
}

/// Weighted combination of site curves sampled on a shared grid.
pub fn combine_curves(c_star: &DVector<f64>, curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    if curves.len() != c_star.len() {
        return Err(Error::DimensionMismatch("one curve per weight expected".into()));
    }
    let len = curves.first().map_or(0, Vec::len);
    if curves.iter().any(|c| c.len() != len) {
        return Err(Error::DimensionMismatch("curves have different lengths".into()));
    }
    Ok((0..len)
        .map(|t| curves.iter().zip(c_star.iter()).map(|(c, w)| w * c[t]).sum())
        .collect())
}

/// `Σⱼ c*ⱼ Nᵢʲ(t)` for replicate `i`.
pub fn predict_counts(pattern: &PointPattern, c_star: &DVector<f64>, i: usize) -> Result<CountFunction> {
    if c_star.len() != pattern.d() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} sites",
            c_star.len(),
            pattern.d()
        )));
    }
    let counts = (0..pattern.d())
        .map(|j| pattern.count_function(i, j))
        .collect::<Result<Vec<_>>>()?;
    let terms: Vec<(f64, &CountFunction)> = c_star.iter().copied().zip(counts.iter()).collect();
    CountFunction::weighted_sum(pattern.domain(), &terms)
}

/// Root average squared `L²` distance between paired count functions.
pub fn count_prediction_error(observed: &[CountFunction], predicted: &[CountFunction]) -> Result<f64> {
    if observed.len() != predicted.len() || observed.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} observed vs {} predicted count functions",
            observed.len(),
            predicted.len()
        )));
    }
    let mut acc = 0.0;
    for (o, p) in observed.iter().zip(predicted) {
        acc += o.l2_distance(p)?.powi(2);
    }
    Ok((acc / observed.len() as f64).sqrt())
}
