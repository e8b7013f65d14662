//! Penalized tensor-spline surfaces for the mean and covariance functionals,
//! with generalized cross-validation over a grid of penalties.
//!
//! Both fits are ridge-type smoothers whose penalty `J` has a nontrivial
//! null space (affine surfaces). They are computed in the eigenbasis of `J`:
//! writing `J = Q diag(ω) Qᵀ` and `Ψ = ΓQ`, the coordinates attached to
//! `ω = 0` are unpenalized and the rest are shrunk. Everything that depends
//! on the data only through a penalty value is precomputed once per design,
//! so sweeping a penalty grid costs a few matrix-vector products per point.
//!
//! When the penalized system is singular (the covariance system always is
//! once the number of sites is below the basis dimension), the fits return
//! the minimum-norm solution, which is what a pseudo-inverse of the normal
//! equations gives.

use nalgebra::{DMatrix, DVector};

use crate::basis::{GramMatrix, RoughnessMatrix, SpatialBasis};
use crate::error::{Error, Result};
use crate::linalg::{condition_estimate, psd_range_split, sym_eigen_desc, symmetrized};
use crate::moments::MomentEstimates;

const NULL_TOL: f64 = 1e-10;
const RANGE_TOL: f64 = 1e-10;

/// Log-spaced penalties from `lo` to `hi` with `per_decade` points per
/// factor of ten (both ends included).
pub fn xi_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) || per_decade == 0 {
        return Err(Error::invalid(format!("bad penalty grid [{lo}, {hi}] x {per_decade}")));
    }
    let (l0, l1) = (lo.log10(), hi.log10());
    let steps = ((l1 - l0) * per_decade as f64).round() as usize;
    if steps == 0 {
        return Ok(vec![lo]);
    }
    Ok((0..=steps)
        .map(|i| 10f64.powf(l0 + (l1 - l0) * i as f64 / steps as f64))
        .collect())
}

/// 1e-6 to 1e6 with 25 points per decade.
pub fn default_xi_grid() -> Vec<f64> {
    xi_grid(1e-6, 1e6, 25).expect("static grid")
}

/// One evaluated grid point. `gcv` is `None` when `df` reached the number
/// of observations and the criterion is undefined there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcvPoint {
    pub xi: f64,
    pub df: f64,
    pub rss: f64,
    pub gcv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcvChoice {
    pub xi: f64,
    pub df: f64,
    pub curve: Vec<GcvPoint>,
}

impl GcvChoice {
    /// Grid points that had to be skipped.
    pub fn excluded(&self) -> impl Iterator<Item = f64> + '_ {
        self.curve.iter().filter(|p| p.gcv.is_none()).map(|p| p.xi)
    }
}

fn choose(curve: Vec<GcvPoint>) -> Result<GcvChoice> {
    let mut best: Option<GcvPoint> = None;
    for p in &curve {
        let Some(g) = p.gcv else { continue };
        match best {
            None => best = Some(*p),
            Some(b) => {
                let bg = b.gcv.unwrap();
                let tie = (g - bg).abs() <= 1e-12 * bg.abs().max(g.abs());
                if g < bg || (tie && p.xi > b.xi) {
                    best = Some(*p);
                }
            }
        }
    }
    let best = best.ok_or_else(|| Error::Numerical("GCV undefined at every grid point".into()))?;
    Ok(GcvChoice {
        xi: best.xi,
        df: best.df,
        curve,
    })
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::invalid("penalty grid must be non-empty and positive"));
    }
    Ok(())
}

/// `J = Q diag(ω) Qᵀ` split into penalized and unpenalized directions.
#[derive(Debug, Clone)]
struct PenaltySplit {
    q_r: DMatrix<f64>,
    q_n: DMatrix<f64>,
    omega: DVector<f64>,
}

impl PenaltySplit {
    fn new(j: &DMatrix<f64>) -> Result<Self> {
        if j.nrows() != j.ncols() {
            return Err(Error::DimensionMismatch("roughness matrix is not square".into()));
        }
        let (q_r, q_n, omega) = psd_range_split(j, NULL_TOL);
        Ok(Self { q_r, q_n, omega })
    }

    fn q(&self) -> DMatrix<f64> {
        let (q, r) = (self.q_r.nrows(), self.q_r.ncols());
        let mut out = DMatrix::zeros(q, q);
        out.columns_mut(0, r).copy_from(&self.q_r);
        out.columns_mut(r, q - r).copy_from(&self.q_n);
        out
    }
}

fn check_design(gamma: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<()> {
    if gamma.ncols() != j.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but the penalty is {}x{}",
            gamma.ncols(),
            j.nrows(),
            j.ncols()
        )));
    }
    Ok(())
}

/// Mean-surface smoother `H_B = Γ(ΓᵀΓ + ξJ)⁻¹Γᵀ` for one design.
#[derive(Debug, Clone)]
pub struct MeanSmoother {
    gamma: DMatrix<f64>,
    split: PenaltySplit,
    psi_r: DMatrix<f64>,
    // (Ψ_NᵀΨ_N)⁻¹Ψ_Nᵀ, or None when Ψ_N is rank deficient.
    psi_n_pinv: Option<DMatrix<f64>>,
    psi_n_condition: f64,
    k: DMatrix<f64>,
    nu: usize,
    gamma_rank: usize,
    v: DMatrix<f64>,
    kappa: DVector<f64>,
}

impl MeanSmoother {
    pub fn new(gamma: &DMatrix<f64>, j: &RoughnessMatrix) -> Result<Self> {
        check_design(gamma, &j.matrix)?;
        let split = PenaltySplit::new(&j.matrix)?;
        let d = gamma.nrows();
        let psi_r = gamma * &split.q_r;
        let psi_n = gamma * &split.q_n;
        let (range_n, z, _) = psd_range_split(&(&psi_n * psi_n.transpose()), RANGE_TOL);
        let nu = range_n.ncols();
        let full = nu == split.q_n.ncols();
        let psi_n_condition = condition_estimate(&psi_n);
        let psi_n_pinv = if full {
            (psi_n.transpose() * &psi_n)
                .cholesky()
                .map(|c| c.solve(&psi_n.transpose()))
        } else {
            None
        };
        let k = {
            let scaled = DMatrix::from_fn(d, split.omega.len(), |r, c| psi_r[(r, c)] / split.omega[c]);
            symmetrized(&(scaled * psi_r.transpose()))
        };
        let (kappa, w) = sym_eigen_desc(&(z.transpose() * &k * &z));
        let kappa = kappa.map(|x| x.max(0.0));
        let v = z * w;
        let (g_range, _, _) = psd_range_split(&(gamma.transpose() * gamma), RANGE_TOL);
        Ok(Self {
            gamma: gamma.clone(),
            split,
            psi_r,
            psi_n_pinv,
            psi_n_condition,
            k,
            nu,
            gamma_rank: g_range.ncols(),
            v,
            kappa,
        })
    }

    pub fn d(&self) -> usize {
        self.gamma.nrows()
    }

    /// Rank of the unpenalized part of the design.
    pub fn null_rank(&self) -> usize {
        self.nu
    }

    fn shrink(&self, xi: f64) -> DVector<f64> {
        self.kappa.map(|k| xi / (xi + k))
    }

    /// `tr(H_B)`.
    pub fn df(&self, xi: f64) -> f64 {
        if xi == 0.0 {
            return self.gamma_rank as f64;
        }
        self.nu as f64 + self.kappa.iter().map(|k| k / (xi + k)).sum::<f64>()
    }

    /// Diagonal of `H_B`.
    pub fn leverages(&self, xi: f64) -> DVector<f64> {
        let s = self.shrink(xi);
        DVector::from_fn(self.d(), |j, _| {
            1.0 - (0..s.len()).map(|i| self.v[(j, i)].powi(2) * s[i]).sum::<f64>()
        })
    }

    fn check_a(&self, a: &DMatrix<f64>) -> Result<()> {
        if a.ncols() != self.d() {
            return Err(Error::DimensionMismatch(format!(
                "{} mean columns for {} sites",
                a.ncols(),
                self.d()
            )));
        }
        Ok(())
    }

    /// Rows of `A − B̂Γᵀ`, that is the residuals `âⱼ − B̂γ(sⱼ)` as columns.
    pub fn residuals(&self, a: &DMatrix<f64>, xi: f64) -> Result<DMatrix<f64>> {
        self.check_a(a)?;
        let s = self.shrink(xi);
        let av = a * &self.v;
        Ok(DMatrix::from_fn(av.nrows(), av.ncols(), |r, c| av[(r, c)] * s[c]) * self.v.transpose())
    }

    /// GCV at one penalty.
    pub fn gcv_point(&self, a: &DMatrix<f64>, xi: f64) -> Result<GcvPoint> {
        self.check_a(a)?;
        let d = self.d() as f64;
        let av = a * &self.v;
        let s = self.shrink(xi);
        let rss: f64 = (0..s.len()).map(|i| s[i] * s[i] * av.column(i).norm_squared()).sum();
        let df = self.df(xi);
        let denom = 1.0 - df / d;
        let gcv = (denom > 1e-12).then(|| rss / d / (denom * denom));
        Ok(GcvPoint { xi, df, rss, gcv })
    }

    pub fn gcv(&self, a: &DMatrix<f64>, grid: &[f64]) -> Result<GcvChoice> {
        check_grid(grid)?;
        let curve = grid.iter().map(|&x| self.gcv_point(a, x)).collect::<Result<Vec<_>>>()?;
        choose(curve)
    }

    /// Exact leave-one-site-out criterion via the leverage shortcut.
    pub fn loo_cv(&self, a: &DMatrix<f64>, xi: f64) -> Result<f64> {
        let e = self.residuals(a, xi)?;
        let h = self.leverages(xi);
        let d = self.d();
        Ok((0..d).map(|j| e.column(j).norm_squared() / (1.0 - h[j]).powi(2)).sum::<f64>() / d as f64)
    }

    fn singular(&self, what: &str) -> Error {
        Error::Singular {
            what: what.into(),
            condition: self.psi_n_condition,
        }
    }

    /// `B̂ = AΓ(ΓᵀΓ + ξJ)⁻¹`.
    pub fn fit(&self, a: &DMatrix<f64>, xi: f64) -> Result<DMatrix<f64>> {
        self.check_a(a)?;
        if !(xi >= 0.0 && xi.is_finite()) {
            return Err(Error::invalid(format!("penalty {xi} must be finite and non-negative")));
        }
        if xi == 0.0 {
            let gtg = self.gamma.transpose() * &self.gamma;
            let chol = gtg.clone().cholesky().ok_or_else(|| Error::Singular {
                what: "ΓᵀΓ without penalty".into(),
                condition: condition_estimate(&gtg),
            })?;
            return Ok(chol.solve(&(&self.gamma.transpose() * a.transpose())).transpose());
        }
        let pinv = self
            .psi_n_pinv
            .as_ref()
            .ok_or_else(|| self.singular("sites do not determine the unpenalized surfaces"))?;
        // E/ξ computed directly so small penalties keep relative accuracy.
        let av = a * &self.v;
        let scaled = DMatrix::from_fn(av.nrows(), av.ncols(), |r, c| av[(r, c)] / (xi + self.kappa[c]));
        let e_over = scaled * self.v.transpose();
        let e = &e_over * xi;
        let y_r = {
            let t = &e_over * &self.psi_r;
            DMatrix::from_fn(t.nrows(), t.ncols(), |r, c| t[(r, c)] / self.split.omega[c])
        };
        let y_n = (a - e - &e_over * &self.k) * pinv.transpose();
        Ok(y_r * self.split.q_r.transpose() + y_n * self.split.q_n.transpose())
    }
}

pub fn fit_mean_surface(
    a: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    j: &RoughnessMatrix,
    xi: f64,
) -> Result<DMatrix<f64>> {
    MeanSmoother::new(gamma, j)?.fit(a, xi)
}

pub fn gcv_mean(a: &DMatrix<f64>, gamma: &DMatrix<f64>, j: &RoughnessMatrix, grid: &[f64]) -> Result<GcvChoice> {
    MeanSmoother::new(gamma, j)?.gcv(a, grid)
}

/// Index pairs `j < k` in row-major order.
fn pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|j| ((j + 1)..d).map(move |k| (j, k))).collect()
}

/// `K[(jk),(j'k')] = X_jj' Y_kk' + sign · X_jk' Y_kj'`.
fn pair_form(x: &DMatrix<f64>, y: &DMatrix<f64>, sign: f64, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let m = pairs.len();
    DMatrix::from_fn(m, m, |r, c| {
        let (j, k) = pairs[r];
        let (jp, kp) = pairs[c];
        x[(j, jp)] * y[(k, kp)] + sign * x[(j, kp)] * y[(k, jp)]
    })
}

/// Spectral smoother on one symmetry class (symmetric or antisymmetric) of
/// the off-diagonal pair space.
#[derive(Debug, Clone)]
struct PairSmoother {
    rho: usize,
    v: DMatrix<f64>,
    kappa: DVector<f64>,
    // Range of the unpenalized kernel and its eigenvalues, for K_U⁺.
    f: DMatrix<f64>,
    f_eigs: DVector<f64>,
}

impl PairSmoother {
    fn new(b_n: &DMatrix<f64>, b_r: &DMatrix<f64>, a_r: &DMatrix<f64>, sign: f64, pairs: &[(usize, usize)]) -> Self {
        let k_u = pair_form(b_n, b_n, sign, pairs) + pair_form(b_n, b_r, sign, pairs) + pair_form(b_r, b_n, sign, pairs);
        let (f, z, f_eigs) = psd_range_split(&symmetrized(&k_u), RANGE_TOL);
        let k = pair_form(a_r, a_r, sign, pairs);
        let (kappa, w) = sym_eigen_desc(&(z.transpose() * k * &z));
        let kappa = kappa.map(|x| x.max(0.0));
        Self {
            rho: f.ncols(),
            v: z * w,
            kappa,
            f,
            f_eigs,
        }
    }

    fn df(&self, xi: f64) -> f64 {
        self.rho as f64 + self.kappa.iter().map(|k| k / (xi + k)).sum::<f64>()
    }

    /// `V diag(g(κ)) Vᵀ s`.
    fn apply(&self, s: &DVector<f64>, g: impl Fn(f64) -> f64) -> DVector<f64> {
        let mut vs = self.v.transpose() * s;
        for (x, &k) in vs.iter_mut().zip(self.kappa.iter()) {
            *x *= g(k);
        }
        &self.v * vs
    }

    fn pinv_u(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut c = self.f.transpose() * u;
        for (x, &l) in c.iter_mut().zip(self.f_eigs.iter()) {
            *x /= l;
        }
        &self.f * c
    }
}

/// Covariance-surface smoother for one design: the minimum-norm solution of
/// `Ω vec(C) = (Γᵀ⊗Γᵀ) vec(Σ − diag Σ)` and its leverage over the
/// off-diagonal data positions.
#[derive(Debug, Clone)]
pub struct CovSmoother {
    gamma: DMatrix<f64>,
    split: PenaltySplit,
    psi: DMatrix<f64>,
    psi_r: DMatrix<f64>,
    a_r: DMatrix<f64>,
    pairs: Vec<(usize, usize)>,
    sym: PairSmoother,
    anti: PairSmoother,
}

impl CovSmoother {
    pub fn new(gamma: &DMatrix<f64>, j: &RoughnessMatrix) -> Result<Self> {
        check_design(gamma, &j.matrix)?;
        let d = gamma.nrows();
        if d < 2 {
            return Err(Error::invalid("covariance smoothing needs at least two sites"));
        }
        let split = PenaltySplit::new(&j.matrix)?;
        let psi_r = gamma * &split.q_r;
        let psi_n = gamma * &split.q_n;
        let a_r = {
            let scaled = DMatrix::from_fn(d, split.omega.len(), |r, c| psi_r[(r, c)] / split.omega[c]);
            symmetrized(&(scaled * psi_r.transpose()))
        };
        let b_r = &psi_r * psi_r.transpose();
        let b_n = &psi_n * psi_n.transpose();
        let pairs = pairs(d);
        let sym = PairSmoother::new(&b_n, &b_r, &a_r, 1.0, &pairs);
        let anti = PairSmoother::new(&b_n, &b_r, &a_r, -1.0, &pairs);
        let psi = gamma * split.q();
        Ok(Self {
            gamma: gamma.clone(),
            split,
            psi,
            psi_r,
            a_r,
            pairs,
            sym,
            anti,
        })
    }

    pub fn d(&self) -> usize {
        self.gamma.nrows()
    }

    /// Number of ordered off-diagonal observations, `d(d − 1)`.
    pub fn n_obs(&self) -> usize {
        self.d() * (self.d() - 1)
    }

    /// Sum of the leverages of `H_C` over the off-diagonal positions.
    pub fn df(&self, xi: f64) -> f64 {
        self.sym.df(xi) + self.anti.df(xi)
    }

    /// Degrees of freedom of the fit restricted to symmetric inputs.
    pub fn df_symmetric(&self, xi: f64) -> f64 {
        self.sym.df(xi)
    }

    fn pair_vector(&self, sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
        let d = self.d();
        if sigma.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "Sigma is {}x{} for {d} sites",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if crate::linalg::max_asymmetry(sigma) > 1e-10 * sigma.amax().max(1.0) {
            return Err(Error::invalid("Sigma must be symmetric"));
        }
        Ok(DVector::from_iterator(
            self.pairs.len(),
            self.pairs.iter().map(|&(j, k)| 0.5 * (sigma[(j, k)] + sigma[(k, j)])),
        ))
    }

    fn pair_matrix(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let d = self.d();
        let mut m = DMatrix::zeros(d, d);
        for (&(j, k), &x) in self.pairs.iter().zip(v.iter()) {
            m[(j, k)] = x;
            m[(k, j)] = x;
        }
        m
    }

    fn check_xi(xi: f64) -> Result<()> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(Error::invalid(format!("covariance penalty {xi} must be positive")));
        }
        Ok(())
    }

    /// Off-diagonal residuals `Σ̂ⱼₖ − γ(sⱼ)ᵀĈγ(sₖ)` (zero diagonal).
    pub fn residuals(&self, sigma: &DMatrix<f64>, xi: f64) -> Result<DMatrix<f64>> {
        Self::check_xi(xi)?;
        let s = self.pair_vector(sigma)?;
        Ok(self.pair_matrix(&self.sym.apply(&s, |k| xi / (xi + k))))
    }

    pub fn gcv_point(&self, sigma: &DMatrix<f64>, xi: f64) -> Result<GcvPoint> {
        Self::check_xi(xi)?;
        let s = self.pair_vector(sigma)?;
        Ok(self.gcv_from_pairs(&s, xi))
    }

    fn gcv_from_pairs(&self, s: &DVector<f64>, xi: f64) -> GcvPoint {
        let e = self.sym.apply(s, |k| xi / (xi + k));
        let rss = 2.0 * e.norm_squared();
        let n = self.n_obs() as f64;
        let df = self.df(xi);
        let denom = 1.0 - df / n;
        let gcv = (denom > 1e-12).then(|| rss / n / (denom * denom));
        GcvPoint { xi, df, rss, gcv }
    }

    pub fn gcv(&self, sigma: &DMatrix<f64>, grid: &[f64]) -> Result<GcvChoice> {
        check_grid(grid)?;
        let s = self.pair_vector(sigma)?;
        choose(grid.iter().map(|&x| self.gcv_from_pairs(&s, x)).collect())
    }

    /// `Ĉ`, symmetrized.
    pub fn fit(&self, sigma: &DMatrix<f64>, xi: f64) -> Result<DMatrix<f64>> {
        Self::check_xi(xi)?;
        let s = self.pair_vector(sigma)?;
        let e_over = self.pair_matrix(&self.sym.apply(&s, |k| 1.0 / (xi + k)));
        let r = self.split.omega.len();
        let q = self.gamma.ncols();
        let mut y_rr = self.psi_r.transpose() * &e_over * &self.psi_r;
        for a in 0..r {
            for b in 0..r {
                y_rr[(a, b)] /= self.split.omega[a] * self.split.omega[b];
            }
        }
        let smooth = &self.a_r * &e_over * &self.a_r;
        let mut u = s.clone();
        for (i, &(j, k)) in self.pairs.iter().enumerate() {
            u[i] -= xi * e_over[(j, k)] + smooth[(j, k)];
        }
        let ymat = self.pair_matrix(&self.sym.pinv_u(&u));
        let mut y = self.psi.transpose() * ymat * &self.psi;
        y.view_mut((0, 0), (r, r)).copy_from(&y_rr);
        let qm = self.split.q();
        debug_assert_eq!(qm.nrows(), q);
        Ok(symmetrized(&(&qm * y * qm.transpose())))
    }
}

pub fn fit_cov_surface(
    sigma: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    j: &RoughnessMatrix,
    xi: f64,
) -> Result<DMatrix<f64>> {
    CovSmoother::new(gamma, j)?.fit(sigma, xi)
}

pub fn gcv_cov(sigma: &DMatrix<f64>, gamma: &DMatrix<f64>, j: &RoughnessMatrix, grid: &[f64]) -> Result<GcvChoice> {
    CovSmoother::new(gamma, j)?.gcv(sigma, grid)
}

/// `X ↦ ΓᵀΓXΓᵀΓ − Σⱼ (γⱼᵀXγⱼ) γⱼγⱼᵀ + ξ JXJ`, the action of `Ω` on
/// `vec(X)` written without forming any `q² × q²` matrix.
pub fn apply_omega(gamma: &DMatrix<f64>, j: &DMatrix<f64>, xi: f64, x: &DMatrix<f64>) -> DMatrix<f64> {
    let gtg = gamma.transpose() * gamma;
    let mut out = &gtg * x * &gtg + (j * x * j) * xi;
    for r in 0..gamma.nrows() {
        let g = gamma.row(r).transpose();
        let w = (g.transpose() * x * &g)[(0, 0)];
        out.ger(-w, &g, &g, 1.0);
    }
    out
}

/// Conjugate gradients on the covariance normal equations, started at zero
/// so that it converges to the minimum-norm solution. The input need not be
/// symmetric and the result is not symmetrized. Returns the solution and
/// the number of iterations.
pub fn solve_cov_cg(
    sigma: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    j: &RoughnessMatrix,
    xi: f64,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(DMatrix<f64>, usize)> {
    check_design(gamma, &j.matrix)?;
    let d = gamma.nrows();
    if sigma.shape() != (d, d) {
        return Err(Error::DimensionMismatch("Sigma does not match the design".into()));
    }
    let mut off = sigma.clone();
    off.fill_diagonal(0.0);
    let b = gamma.transpose() * off * gamma;
    let bnorm = b.norm();
    let q = gamma.ncols();
    let mut x = DMatrix::zeros(q, q);
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for it in 1..=max_iter {
        let ap = apply_omega(gamma, &j.matrix, xi, &p);
        let alpha = rr / p.dot(&ap);
        x += &p * alpha;
        r -= &ap * alpha;
        let rr_new = r.norm_squared();
        if rr_new.sqrt() <= rel_tol * bnorm {
            return Ok((x, it));
        }
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    Err(Error::Numerical(format!(
        "conjugate gradients did not reach {rel_tol:e} in {max_iter} iterations"
    )))
}

/// `μ̂(·, s₀)` coefficients `B̂γ(s₀)` and `m₀ⱼ = âⱼᵀ G B̂γ(s₀)`.
pub fn predict_mean_at(
    b: &DMatrix<f64>,
    sb: &SpatialBasis,
    gram: &GramMatrix,
    a: &DMatrix<f64>,
    s0: [f64; 2],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let g0 = sb.eval(s0)?;
    if b.ncols() != g0.len() || b.nrows() != gram.dim() || a.nrows() != gram.dim() {
        return Err(Error::DimensionMismatch("mean surface does not match the bases".into()));
    }
    let mu0 = b * g0;
    let m0 = a.transpose() * (gram.matrix() * &mu0);
    Ok((mu0, m0))
}

/// `σ₀ⱼ = γ(sⱼ)ᵀĈγ(s₀)` and the smooth-surface value `γ(s₀)ᵀĈγ(s₀)`.
pub fn predict_cov_at(
    c: &DMatrix<f64>,
    sb: &SpatialBasis,
    gamma: &DMatrix<f64>,
    s0: [f64; 2],
) -> Result<(DVector<f64>, f64)> {
    let g0 = sb.eval(s0)?;
    if c.shape() != (g0.len(), g0.len()) || gamma.ncols() != g0.len() {
        return Err(Error::DimensionMismatch("covariance surface does not match the basis".into()));
    }
    let cg = c * &g0;
    Ok((gamma * &cg, g0.dot(&cg)))
}

/// Smoothers for a fixed set of sites; reuse across data sets observed at
/// the same locations.
#[derive(Debug, Clone)]
pub struct SurfaceSmoothers {
    pub basis: SpatialBasis,
    pub gamma: DMatrix<f64>,
    pub mean: MeanSmoother,
    pub cov: CovSmoother,
}

impl SurfaceSmoothers {
    pub fn new(basis: &SpatialBasis, sites: &[[f64; 2]], j: &RoughnessMatrix) -> Result<Self> {
        let gamma = basis.design_matrix(sites)?;
        Ok(Self {
            mean: MeanSmoother::new(&gamma, j)?,
            cov: CovSmoother::new(&gamma, j)?,
            basis: basis.clone(),
            gamma,
        })
    }

    /// Fits both surfaces with penalties chosen by GCV over the grids.
    pub fn fit(&self, est: &MomentEstimates, grid_b: &[f64], grid_c: &[f64]) -> Result<SurfaceFits> {
        let gcv_b = self.mean.gcv(&est.a, grid_b)?;
        let gcv_c = self.cov.gcv(&est.sigma, grid_c)?;
        let b = self.mean.fit(&est.a, gcv_b.xi)?;
        let c = self.cov.fit(&est.sigma, gcv_c.xi)?;
        Ok(SurfaceFits {
            b,
            c,
            xi_b: gcv_b.xi,
            xi_c: gcv_c.xi,
            df_b: gcv_b.df,
            df_c: gcv_c.df,
            gamma: self.gamma.clone(),
            gcv_b,
            gcv_c,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SurfaceFits {
    /// `p × q` mean-surface coefficients.
    pub b: DMatrix<f64>,
    /// `q × q` covariance-surface coefficients.
    pub c: DMatrix<f64>,
    pub xi_b: f64,
    pub xi_c: f64,
    pub df_b: f64,
    pub df_c: f64,
    pub gamma: DMatrix<f64>,
    pub gcv_b: GcvChoice,
    pub gcv_c: GcvChoice,
}

impl SurfaceFits {
    /// `(μ̂(·,s₀) coefficients, m₀, σ₀, smooth σ₀₀)` at a new site.
    pub fn at(
        &self,
        sb: &SpatialBasis,
        est: &MomentEstimates,
        s0: [f64; 2],
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, f64)> {
        let (mu0, m0) = predict_mean_at(&self.b, sb, &est.gram, &est.a, s0)?;
        let (sigma0, sigma00) = predict_cov_at(&self.c, sb, &self.gamma, s0)?;
        Ok((mu0, m0, sigma0, sigma00))
    }
}
