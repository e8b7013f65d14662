//! Nonparametric B-spline estimators of the site-wise mean and second-moment
//! functions, and the kriging matrices `M` and `Sigma` built from them.
//!
//! For site `j`, `mu_j(t) = beta(t)ᵀ a_j` with
//! `a_j = G⁻¹ (1/n) Σ_i Σ_{u ∈ X_i^j} beta(u)`. The second moment
//! `R_jk(t, t') = beta(t)ᵀ R_jk beta(t')` uses the inner matrix
//! `G⁻¹ {(1/n) Σ_i Σ_u Σ_v beta(u) beta(v)ᵀ} G⁻¹`, where for `j = k` the
//! pairs `v = u` (the same point) are left out.

use nalgebra::{DMatrix, DVector};

use crate::basis::{GramMatrix, SplineBasis};
use crate::data::PointPattern;
use crate::error::{Error, Result};

/// Per-replicate, per-site sums of `beta(u)` and `beta(u) beta(u)ᵀ`.
struct SiteSums {
    // [i][j] -> Σ_u beta(u)
    first: Vec<Vec<DVector<f64>>>,
    // [i][j] -> Σ_u beta(u) beta(u)ᵀ
    diag: Vec<Vec<DMatrix<f64>>>,
}

fn check_domain(pattern: &PointPattern, basis: &SplineBasis) -> Result<()> {
    if pattern.domain() != basis.domain() {
        return Err(Error::invalid(format!(
            "pattern domain [{}, {}] differs from basis domain [{}, {}]",
            pattern.domain().start(),
            pattern.domain().end(),
            basis.domain().start(),
            basis.domain().end()
        )));
    }
    Ok(())
}

fn site_sums(pattern: &PointPattern, basis: &SplineBasis, with_diag: bool) -> SiteSums {
    let p = basis.dim();
    let mut buf = Vec::with_capacity(basis.order());
    let mut first = Vec::with_capacity(pattern.n());
    let mut diag = Vec::with_capacity(pattern.n());
    for i in 0..pattern.n() {
        let mut fi = Vec::with_capacity(pattern.d());
        let mut di = Vec::with_capacity(pattern.d());
        for j in 0..pattern.d() {
            let mut s = DVector::zeros(p);
            let mut dd = if with_diag { DMatrix::zeros(p, p) } else { DMatrix::zeros(0, 0) };
            for &u in pattern.events(i, j) {
                let f = basis.eval_nonzero_into(u, &mut buf);
                for (a, &x) in buf.iter().enumerate() {
                    s[f + a] += x;
                    if with_diag {
                        for (b, &y) in buf.iter().enumerate() {
                            dd[(f + a, f + b)] += x * y;
                        }
                    }
                }
            }
            fi.push(s);
            di.push(dd);
        }
        first.push(fi);
        diag.push(di);
    }
    SiteSums { first, diag }
}

fn mean_from_sums(sums: &SiteSums, gram: &GramMatrix, n: usize, d: usize) -> DMatrix<f64> {
    let p = gram.dim();
    let mut raw = DMatrix::zeros(p, d);
    for rep in &sums.first {
        for (j, s) in rep.iter().enumerate() {
            let mut col = raw.column_mut(j);
            col += s;
        }
    }
    raw /= n as f64;
    gram.solve_matrix(&raw)
}

/// The `p × d` matrix `A = [a_1, ..., a_d]` of mean coefficients.
pub fn mean_coefficients(pattern: &PointPattern, basis: &SplineBasis, gram: &GramMatrix) -> Result<DMatrix<f64>> {
    check_domain(pattern, basis)?;
    let sums = site_sums(pattern, basis, false);
    Ok(mean_from_sums(&sums, gram, pattern.n(), pattern.d()))
}

/// Inner coefficient matrices of the second-moment estimators, stored for
/// `j <= k`.
#[derive(Debug, Clone)]
pub struct SecondMoments {
    d: usize,
    blocks: Vec<DMatrix<f64>>,
}

impl SecondMoments {
    fn slot(&self, j: usize, k: usize) -> usize {
        // Row-major upper triangle including the diagonal.
        j * self.d - j * (j + 1) / 2 + k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// The `p × p` inner matrix of `R_jk`; `R_kj` is its transpose.
    pub fn get(&self, j: usize, k: usize) -> DMatrix<f64> {
        if j <= k {
            self.blocks[self.slot(j, k)].clone()
        } else {
            self.blocks[self.slot(k, j)].transpose()
        }
    }

    /// `R_jk(t, t')` at a pair of times.
    pub fn eval(&self, basis: &SplineBasis, j: usize, k: usize, t: f64, t2: f64) -> Result<f64> {
        let bt = basis.eval(t)?;
        let bs = basis.eval(t2)?;
        Ok((bt.transpose() * self.get(j, k) * bs)[(0, 0)])
    }
}

fn second_from_sums(sums: &SiteSums, gram: &GramMatrix, n: usize, d: usize) -> SecondMoments {
    let p = gram.dim();
    let mut blocks = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for k in j..d {
            let mut inner = DMatrix::zeros(p, p);
            for i in 0..n {
                let sj = &sums.first[i][j];
                let sk = &sums.first[i][k];
                inner.ger(1.0, sj, sk, 1.0);
                if j == k {
                    inner -= &sums.diag[i][j];
                }
            }
            inner /= n as f64;
            let left = gram.solve_matrix(&inner);
            let both = gram.solve_matrix(&left.transpose()).transpose();
            blocks.push(both);
        }
    }
    SecondMoments { d, blocks }
}

pub fn second_moment_coefficients(
    pattern: &PointPattern,
    basis: &SplineBasis,
    gram: &GramMatrix,
) -> Result<SecondMoments> {
    check_domain(pattern, basis)?;
    let sums = site_sums(pattern, basis, true);
    Ok(second_from_sums(&sums, gram, pattern.n(), pattern.d()))
}

/// `M_jk = a_jᵀ G a_k = ∫ mu_j mu_k`.
pub fn m_matrix(a: &DMatrix<f64>, gram: &GramMatrix) -> Result<DMatrix<f64>> {
    if a.nrows() != gram.dim() {
        return Err(Error::DimensionMismatch(format!(
            "A has {} rows but the basis has dimension {}",
            a.nrows(),
            gram.dim()
        )));
    }
    let m = a.transpose() * gram.matrix() * a;
    Ok(crate::linalg::symmetrized(&m))
}

/// `Sigma_jk = ∫ rho_jk(t, t) dt = tr((R_jk − a_j a_kᵀ) G)`.
pub fn sigma_matrix(a: &DMatrix<f64>, second: &SecondMoments, gram: &GramMatrix) -> Result<DMatrix<f64>> {
    let d = a.ncols();
    if second.d() != d || a.nrows() != gram.dim() {
        return Err(Error::DimensionMismatch(
            "mean and second-moment estimates disagree in shape".into(),
        ));
    }
    let g = gram.matrix();
    let mut sigma = DMatrix::zeros(d, d);
    for j in 0..d {
        for k in j..d {
            let mut rho = second.get(j, k);
            rho.ger(-1.0, &a.column(j), &a.column(k), 1.0);
            // tr(rho G) = Σ_ab rho_ab G_ba, and G is symmetric.
            let v = rho.component_mul(g).sum();
            sigma[(j, k)] = v;
            sigma[(k, j)] = v;
        }
    }
    Ok(sigma)
}

/// Everything estimated at the observed sites.
#[derive(Debug, Clone)]
pub struct MomentEstimates {
    pub basis: SplineBasis,
    pub gram: GramMatrix,
    pub n: usize,
    /// `p × d` mean coefficients.
    pub a: DMatrix<f64>,
    pub second: SecondMoments,
    pub m: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl MomentEstimates {
    pub fn estimate(pattern: &PointPattern, basis: &SplineBasis) -> Result<Self> {
        let gram = basis.gram()?;
        Self::estimate_with_gram(pattern, basis, gram)
    }

    pub fn estimate_with_gram(pattern: &PointPattern, basis: &SplineBasis, gram: GramMatrix) -> Result<Self> {
        check_domain(pattern, basis)?;
        let sums = site_sums(pattern, basis, true);
        let a = mean_from_sums(&sums, &gram, pattern.n(), pattern.d());
        let second = second_from_sums(&sums, &gram, pattern.n(), pattern.d());
        let m = m_matrix(&a, &gram)?;
        let sigma = sigma_matrix(&a, &second, &gram)?;
        Ok(Self {
            basis: basis.clone(),
            gram,
            n: pattern.n(),
            a,
            second,
            m,
            sigma,
        })
    }

    pub fn d(&self) -> usize {
        self.a.ncols()
    }

    /// `mu_j(t)`.
    pub fn mean_at(&self, j: usize, t: f64) -> Result<f64> {
        Ok(self.basis.eval(t)?.dot(&self.a.column(j)))
    }
}
