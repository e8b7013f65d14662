//! Log-Gaussian Cox process simulation, exact moment oracles and the Monte
//! Carlo study driver.
//!
//! Each replicate draws a shared factor `W ~ N(0, var_W)` and independent
//! `E_j ~ N(0, var_E)`, sets `U_j = g(s_j) W + E_j` and, given `U_j`, samples a
//! Poisson process on `[0, 1]` with intensity
//! `λ_j(t) = exp{ν(t) + U_j φ(t)}`, where `ν(t) = sin(πt) + ln 20` and
//! `φ(t) = √2 sin(πt)`.
//!
//! Random streams are derived from a master seed and the indices
//! `(cell, mc_rep, replicate)` through a splitmix64 hash, so results do not
//! depend on the number of threads.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::basis::{make_spatial_basis, make_time_basis, roughness_matrix, GramMatrix, Rect, SplineBasis, TimeDomain};
use crate::config::{parse_xi_grid, KeyValues};
use crate::data::{PointPattern, SiteSet};
use crate::error::{Error, Result};
use crate::krige::{solve_kriging, DEFAULT_THRESHOLD};
use crate::moments::MomentEstimates;
use crate::quadrature::GaussLegendre;
use crate::spatial::{default_xi_grid, SurfaceSmoothers};

/// splitmix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the stream identified by `path` under `master`.
pub fn stream_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |h, &i| splitmix64(h ^ splitmix64(i)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    /// 4 × 4 sites on `[−0.5, 0.5]²`.
    I,
    /// 4 × 4 sites on `[−0.2, 0.2]²`.
    II,
    /// 8 × 8 sites on `[−0.5, 0.5]²`.
    III,
    Custom { label: String, sites: SiteSet, region: Rect },
}

fn square_grid(k: usize, half: f64) -> Vec<[f64; 2]> {
    let step = 2.0 * half / (k - 1) as f64;
    let mut out = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            out.push([-half + step * i as f64, -half + step * j as f64]);
        }
    }
    out
}

impl Grid {
    pub fn label(&self) -> &str {
        match self {
            Grid::I => "i",
            Grid::II => "ii",
            Grid::III => "iii",
            Grid::Custom { label, .. } => label,
        }
    }

    pub fn sites(&self) -> SiteSet {
        match self {
            Grid::I => SiteSet::from_coords(square_grid(4, 0.5)),
            Grid::II => SiteSet::from_coords(square_grid(4, 0.2)),
            Grid::III => SiteSet::from_coords(square_grid(8, 0.5)),
            Grid::Custom { sites, .. } => Ok(sites.clone()),
        }
        .expect("grid sites are distinct")
    }

    /// Region carrying the spatial basis.
    pub fn region(&self) -> Rect {
        let h = match self {
            Grid::I | Grid::III => 0.5,
            Grid::II => 0.2,
            Grid::Custom { region, .. } => return *region,
        };
        Rect::new(-h, h, -h, h).expect("static region")
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(Grid::I),
            "ii" | "2" => Ok(Grid::II),
            "iii" | "3" => Ok(Grid::III),
            other => Err(Error::invalid(format!("unknown grid `{other}` (use i, ii or iii)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    /// `g(s) = 1 / (1 + ‖s‖)`.
    One,
    /// `g(s) = 1`.
    Two,
}

impl Model {
    pub fn g(self, s: [f64; 2]) -> f64 {
        match self {
            Model::One => 1.0 / (1.0 + s[0].hypot(s[1])),
            Model::Two => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Model::One => "1",
            Model::Two => "2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Model::One),
            "2" => Ok(Model::Two),
            other => Err(Error::invalid(format!("unknown model `{other}` (use 1 or 2)"))),
        }
    }
}

/// Variances of the latent factor and of the site-specific noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgcpParams {
    pub var_w: f64,
    pub var_e: f64,
}

impl Default for LgcpParams {
    fn default() -> Self {
        Self {
            var_w: 0.072,
            var_e: 0.018,
        }
    }
}

impl LgcpParams {
    pub fn new(var_w: f64, var_e: f64) -> Result<Self> {
        if !(var_w >= 0.0 && var_e >= 0.0 && var_w.is_finite() && var_e.is_finite()) {
            return Err(Error::invalid("latent variances must be finite and non-negative"));
        }
        Ok(Self { var_w, var_e })
    }

    pub fn domain() -> TimeDomain {
        TimeDomain::new(0.0, 1.0).expect("unit interval")
    }

    pub fn nu(t: f64) -> f64 {
        (std::f64::consts::PI * t).sin() + 20f64.ln()
    }

    pub fn phi(t: f64) -> f64 {
        std::f64::consts::SQRT_2 * (std::f64::consts::PI * t).sin()
    }

    pub fn intensity(t: f64, u: f64) -> f64 {
        (Self::nu(t) + u * Self::phi(t)).exp()
    }

    /// `sup_t λ(t)`; both `ν` and `φ` peak at `t = 1/2`.
    pub fn intensity_bound(u: f64) -> f64 {
        (Self::nu(0.5) + (u * Self::phi(0.5)).max(0.0)).exp()
    }

    /// `var(U_j)` for a site with loading `g`.
    pub fn var_u(&self, g: f64) -> f64 {
        g * g * self.var_w + self.var_e
    }
}

/// Poisson process on `domain` with intensity `lambda` bounded by `bound`,
/// sampled by thinning a homogeneous process. Times are sorted.
pub fn thin(rng: &mut impl Rng, domain: TimeDomain, lambda: impl Fn(f64) -> f64, bound: f64) -> Vec<f64> {
    let mass = bound * domain.length();
    if mass <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(mass).expect("positive mean").sample(rng) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let t = domain.start() + domain.length() * rng.random::<f64>();
        if rng.random::<f64>() * bound < lambda(t) {
            out.push(t);
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// A simulated data set together with its latent `U` values (`n × d`).
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub pattern: PointPattern,
    pub latent: Vec<Vec<f64>>,
}

/// One replicate: latent draw and thinned events at each site.
pub fn simulate_replicate(
    rng: &mut impl Rng,
    loadings: &[f64],
    params: &LgcpParams,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let w = if params.var_w > 0.0 {
        Normal::new(0.0, params.var_w.sqrt()).expect("finite").sample(rng)
    } else {
        0.0
    };
    let noise = Normal::new(0.0, params.var_e.sqrt()).expect("finite");
    let dom = LgcpParams::domain();
    let mut events = Vec::with_capacity(loadings.len());
    let mut us = Vec::with_capacity(loadings.len());
    for &g in loadings {
        let e = if params.var_e > 0.0 { noise.sample(rng) } else { 0.0 };
        let u = g * w + e;
        events.push(thin(rng, dom, |t| LgcpParams::intensity(t, u), LgcpParams::intensity_bound(u)));
        us.push(u);
    }
    (events, us)
}

/// `n` replicates; replicate `i` uses the stream `stream_seed(dataset_seed, [i])`.
pub fn simulate_dataset(
    sites: &SiteSet,
    model: Model,
    params: &LgcpParams,
    n: usize,
    dataset_seed: u64,
) -> Result<SimulatedData> {
    let loadings: Vec<f64> = sites.coords().iter().map(|&s| model.g(s)).collect();
    let mut events = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(dataset_seed, &[i as u64]));
        let (ev, u) = simulate_replicate(&mut rng, &loadings, params);
        events.push(ev);
        latent.push(u);
    }
    let pattern = PointPattern::unlabelled(LgcpParams::domain(), sites.clone(), events)?;
    Ok(SimulatedData { pattern, latent })
}

/// Exact first and second moments of the latent intensities and the
/// kriging quantities they induce at a target site.
#[derive(Debug, Clone)]
pub struct TrueMoments {
    /// `cov(U_j, U_k)`; the last row and column belong to the target.
    pub cov_u: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub m0: DVector<f64>,
    /// `∫ μ(t, s₀)² dt`.
    pub m00: f64,
    pub sigma: DMatrix<f64>,
    pub sigma0: DVector<f64>,
    pub sigma00: f64,
    /// Weights of the kriging solve with exact moments, truncated at the
    /// thresholds last passed to [`TrueMoments::resolve`].
    pub c0: DVector<f64>,
    /// Prediction error of `c0`.
    pub spe0: f64,
}

impl TrueMoments {
    pub fn d(&self) -> usize {
        self.m.nrows()
    }

    /// `μ(t, s_j)`; index `d` is the target.
    pub fn mean(&self, j: usize, t: f64) -> f64 {
        (LgcpParams::nu(t) + 0.5 * LgcpParams::phi(t).powi(2) * self.cov_u[(j, j)]).exp()
    }

    /// `cov{Λ(t, s_j), Λ(t', s_k)}`.
    pub fn covariance(&self, j: usize, k: usize, t: f64, t2: f64) -> f64 {
        self.mean(j, t) * self.mean(k, t2) * (LgcpParams::phi(t) * LgcpParams::phi(t2) * self.cov_u[(j, k)]).exp_m1()
    }

    /// `E{Λ(t, s_j) Λ(t', s_k)}`.
    pub fn second_moment(&self, j: usize, k: usize, t: f64, t2: f64) -> f64 {
        self.mean(j, t) * self.mean(k, t2) * (LgcpParams::phi(t) * LgcpParams::phi(t2) * self.cov_u[(j, k)]).exp()
    }

    /// `E ∫ {Λ(t, s₀) − Σ c_j Λ(t, s_j)}² dt` for arbitrary weights: the
    /// covariance part plus the squared bias of the predictor's mean.
    /// Recompute `c0` and `spe0` with the exact moments truncated at the
    /// given thresholds, so the reference is built the same way as the
    /// estimate it is compared with.
    pub fn resolve(&mut self, threshold_m: f64, threshold_sigma: f64) -> Result<()> {
        let sol = solve_kriging(
            &self.sigma,
            &self.m,
            &self.sigma0,
            &self.m0,
            self.sigma00,
            threshold_m,
            threshold_sigma,
        )?;
        self.spe0 = self.prediction_error(&sol.c_star);
        self.c0 = sol.c_star;
        Ok(())
    }

    pub fn prediction_error(&self, c: &DVector<f64>) -> f64 {
        let var = c.dot(&(&self.sigma * c)) - 2.0 * c.dot(&self.sigma0) + self.sigma00;
        let bias = c.dot(&(&self.m * c)) - 2.0 * c.dot(&self.m0) + self.m00;
        var + bias
    }
}

/// Composite Gauss–Legendre nodes on `[0, 1]` used for the exact moments.
fn moment_nodes() -> Vec<(f64, f64)> {
    GaussLegendre::new(10).composite(0.0, 1.0, 40)
}

pub fn true_moments(sites: &[[f64; 2]], s0: [f64; 2], model: Model, params: &LgcpParams) -> Result<TrueMoments> {
    let d = sites.len();
    if d == 0 {
        return Err(Error::invalid("no sites"));
    }
    let mut all: Vec<[f64; 2]> = sites.to_vec();
    all.push(s0);
    let g: Vec<f64> = all.iter().map(|&s| model.g(s)).collect();
    let cov_u = DMatrix::from_fn(d + 1, d + 1, |j, k| {
        g[j] * g[k] * params.var_w + if j == k { params.var_e } else { 0.0 }
    });
    let nodes = moment_nodes();
    let mut m_full = DMatrix::zeros(d + 1, d + 1);
    let mut s_full = DMatrix::zeros(d + 1, d + 1);
    for &(t, w) in &nodes {
        let nu = LgcpParams::nu(t);
        let phi = LgcpParams::phi(t);
        let mu: Vec<f64> = (0..=d).map(|j| (nu + 0.5 * phi * phi * cov_u[(j, j)]).exp()).collect();
        for j in 0..=d {
            for k in j..=d {
                let mm = w * mu[j] * mu[k];
                m_full[(j, k)] += mm;
                s_full[(j, k)] += mm * (phi * phi * cov_u[(j, k)]).exp_m1();
            }
        }
    }
    for j in 0..=d {
        for k in 0..j {
            m_full[(j, k)] = m_full[(k, j)];
            s_full[(j, k)] = s_full[(k, j)];
        }
    }
    let m = m_full.view((0, 0), (d, d)).into_owned();
    let sigma = s_full.view((0, 0), (d, d)).into_owned();
    let m0 = m_full.view((0, d), (d, 1)).column(0).into_owned();
    let sigma0 = s_full.view((0, d), (d, 1)).column(0).into_owned();
    let (m00, sigma00) = (m_full[(d, d)], s_full[(d, d)]);
    let mut truth = TrueMoments {
        cov_u,
        m,
        m0,
        m00,
        sigma,
        sigma0,
        sigma00,
        c0: DVector::zeros(d),
        spe0: 0.0,
    };
    truth.resolve(1.0, 1.0)?;
    Ok(truth)
}

/// Integrated squared errors of the moment estimators against the truth,
/// computed exactly from precomputed projections of the true functions.
#[derive(Debug, Clone)]
pub struct IseOracle {
    gram: DMatrix<f64>,
    // ∫ β μ_j, and ∫ μ_j².
    mean_proj: Vec<DVector<f64>>,
    mean_sq: Vec<f64>,
    // ∬ β(t) β(t')ᵀ R_jk(t, t'), and ∬ R_jk², for j <= k.
    second_proj: Vec<DMatrix<f64>>,
    second_sq: Vec<f64>,
    d: usize,
}

impl IseOracle {
    pub fn new(truth: &TrueMoments, basis: &SplineBasis) -> Result<Self> {
        let d = truth.d();
        let nodes: Vec<(f64, f64)> = GaussLegendre::new(8).composite(0.0, 1.0, 24);
        let nq = nodes.len();
        let b = DMatrix::from_fn(nq, basis.dim(), |i, a| {
            basis.eval(nodes[i].0).map(|v| v[a]).unwrap_or(0.0)
        });
        let w = DVector::from_iterator(nq, nodes.iter().map(|&(_, w)| w));
        let mut mean_proj = Vec::with_capacity(d);
        let mut mean_sq = Vec::with_capacity(d);
        for j in 0..d {
            let mu = DVector::from_iterator(nq, nodes.iter().map(|&(t, _)| truth.mean(j, t)));
            let wm = mu.component_mul(&w);
            mean_proj.push(b.transpose() * &wm);
            mean_sq.push(wm.dot(&mu));
        }
        let mut second_proj = Vec::new();
        let mut second_sq = Vec::new();
        let bw = DMatrix::from_fn(nq, basis.dim(), |i, a| b[(i, a)] * w[i]);
        for j in 0..d {
            for k in j..d {
                let r = DMatrix::from_fn(nq, nq, |x, y| truth.second_moment(j, k, nodes[x].0, nodes[y].0));
                second_proj.push(bw.transpose() * &r * &bw);
                let mut sq = 0.0;
                for x in 0..nq {
                    for y in 0..nq {
                        sq += w[x] * w[y] * r[(x, y)] * r[(x, y)];
                    }
                }
                second_sq.push(sq);
            }
        }
        Ok(Self {
            gram: basis.gram()?.matrix().clone(),
            mean_proj,
            mean_sq,
            second_proj,
            second_sq,
            d,
        })
    }

    /// Average over sites of `‖μ̂_j − μ_j‖²`.
    pub fn mean_ise(&self, est: &MomentEstimates) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.d {
            let a = est.a.column(j);
            acc += a.dot(&(&self.gram * a)) - 2.0 * a.dot(&self.mean_proj[j]) + self.mean_sq[j];
        }
        acc / self.d as f64
    }

    /// Average over pairs `j <= k` of `‖R̂_jk − R_jk‖²`.
    pub fn second_ise(&self, est: &MomentEstimates) -> f64 {
        let mut acc = 0.0;
        let mut idx = 0;
        for j in 0..self.d {
            for k in j..self.d {
                let r = est.second.get(j, k);
                let rg = &r * &self.gram;
                let quad = (rg.transpose() * &self.gram).component_mul(&r).sum();
                acc += quad - 2.0 * r.component_mul(&self.second_proj[idx]).sum() + self.second_sq[idx];
                idx += 1;
            }
        }
        acc / idx as f64
    }
}

/// Relative bias, standard deviation and root mean squared error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
}

/// Lower triangle, column by column, diagonal included.
pub fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for c in 0..n {
        for r in c..n {
            out.push(m[(r, c)]);
        }
    }
    DVector::from_vec(out)
}

/// Metrics of vector estimates relative to `‖truth‖`, with Monte Carlo
/// expectations taken as plain averages.
pub fn relative_errors(estimates: &[DVector<f64>], truth: &DVector<f64>) -> Result<ErrorMetrics> {
    if estimates.len() < 2 {
        return Err(Error::invalid("need at least two Monte Carlo replicates"));
    }
    let norm = truth.norm();
    if norm == 0.0 {
        return Err(Error::invalid("true value has zero norm"));
    }
    if estimates.iter().any(|e| e.len() != truth.len()) {
        return Err(Error::DimensionMismatch("estimate and truth lengths differ".into()));
    }
    let k = estimates.len() as f64;
    let mean = estimates.iter().fold(DVector::zeros(truth.len()), |acc, e| acc + e) / k;
    let var = estimates.iter().map(|e| (e - &mean).norm_squared()).sum::<f64>() / k;
    let mse = estimates.iter().map(|e| (e - truth).norm_squared()).sum::<f64>() / k;
    Ok(ErrorMetrics {
        bias: (&mean - truth).norm() / norm,
        sd: var.sqrt() / norm,
        rmse: mse.sqrt() / norm,
    })
}

/// Relative excess prediction error. Since estimated weights cannot beat
/// the optimal ones on average, the bias is reported as the rmse.
pub fn spe_errors(spe_hat: &[f64], spe0: f64) -> Result<ErrorMetrics> {
    if spe_hat.len() < 2 {
        return Err(Error::invalid("need at least two Monte Carlo replicates"));
    }
    if spe0 == 0.0 {
        return Err(Error::invalid("optimal prediction error is zero"));
    }
    let k = spe_hat.len() as f64;
    let mean = spe_hat.iter().sum::<f64>() / k;
    let var = spe_hat.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / k;
    let bias = (mean - spe0) / spe0;
    Ok(ErrorMetrics {
        bias,
        sd: var.sqrt() / spe0.abs(),
        rmse: bias,
    })
}

/// What one Monte Carlo replicate produced.
#[derive(Debug, Clone)]
pub struct RepEstimate {
    pub m: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma0: DVector<f64>,
    pub c_hat: DVector<f64>,
    /// True prediction error of the estimated weights.
    pub spe_hat: f64,
    pub xi_b: f64,
    pub xi_c: f64,
    pub rank_m: usize,
    pub rank_sigma: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMetrics {
    pub m: ErrorMetrics,
    pub m0: ErrorMetrics,
    pub sigma: ErrorMetrics,
    pub sigma0: ErrorMetrics,
    pub spe: ErrorMetrics,
}

pub fn error_metrics(reps: &[RepEstimate], truth: &TrueMoments) -> Result<CellMetrics> {
    let col = |f: &dyn Fn(&RepEstimate) -> DVector<f64>| reps.iter().map(f).collect::<Vec<_>>();
    Ok(CellMetrics {
        m: relative_errors(&col(&|r| vech(&r.m)), &vech(&truth.m))?,
        m0: relative_errors(&col(&|r| r.m0.clone()), &truth.m0)?,
        sigma: relative_errors(&col(&|r| vech(&r.sigma)), &vech(&truth.sigma))?,
        sigma0: relative_errors(&col(&|r| r.sigma0.clone()), &truth.sigma0)?,
        spe: spe_errors(&reps.iter().map(|r| r.spe_hat).collect::<Vec<_>>(), truth.spe0)?,
    })
}

/// Study configuration; the defaults are the published protocol except for
/// the number of Monte Carlo replicates.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub grids: Vec<Grid>,
    pub models: Vec<Model>,
    pub ns: Vec<usize>,
    pub mc_reps: usize,
    pub seed: u64,
    pub params: LgcpParams,
    pub threshold_m: f64,
    pub threshold_sigma: f64,
    pub xi_grid_b: Vec<f64>,
    pub xi_grid_c: Vec<f64>,
    pub temporal_order: usize,
    pub temporal_knots: usize,
    pub spatial_order: usize,
    pub spatial_knots: usize,
    pub target: [f64; 2],
    pub output: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            grids: vec![Grid::I, Grid::II, Grid::III],
            models: vec![Model::One, Model::Two],
            ns: vec![50, 100, 200, 400],
            mc_reps: 200,
            seed: 20_160_101,
            params: LgcpParams::default(),
            threshold_m: DEFAULT_THRESHOLD,
            threshold_sigma: DEFAULT_THRESHOLD,
            xi_grid_b: default_xi_grid(),
            xi_grid_c: default_xi_grid(),
            temporal_order: 4,
            temporal_knots: 5,
            spatial_order: 4,
            spatial_knots: 6,
            target: [0.0, 0.0],
            output: None,
        }
    }
}

const STUDY_KEYS: &[&str] = &[
    "grid",
    "model",
    "n",
    "mc_reps",
    "seed",
    "var_w",
    "var_e",
    "threshold_m",
    "threshold_sigma",
    "xi_grid_b",
    "xi_grid_c",
    "temporal_order",
    "temporal_knots",
    "spatial_order",
    "spatial_knots",
    "target",
    "output",
];

impl StudyConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.expect_only(STUDY_KEYS)?;
        let mut c = Self::default();
        if let Some(v) = kv.list::<String>("grid")? {
            c.grids = v.iter().map(|s| Grid::parse(s)).collect::<Result<_>>()?;
        }
        if let Some(v) = kv.list::<String>("model")? {
            c.models = v.iter().map(|s| Model::parse(s)).collect::<Result<_>>()?;
        }
        if let Some(v) = kv.list::<usize>("n")? {
            c.ns = v;
        }
        c.mc_reps = kv.get_or("mc_reps", c.mc_reps)?;
        c.seed = kv.get_or("seed", c.seed)?;
        c.params = LgcpParams::new(kv.get_or("var_w", c.params.var_w)?, kv.get_or("var_e", c.params.var_e)?)?;
        c.threshold_m = kv.get_or("threshold_m", c.threshold_m)?;
        c.threshold_sigma = kv.get_or("threshold_sigma", c.threshold_sigma)?;
        if let Some(g) = kv.raw("xi_grid_b") {
            c.xi_grid_b = parse_xi_grid(g)?;
        }
        if let Some(g) = kv.raw("xi_grid_c") {
            c.xi_grid_c = parse_xi_grid(g)?;
        }
        c.temporal_order = kv.get_or("temporal_order", c.temporal_order)?;
        c.temporal_knots = kv.get_or("temporal_knots", c.temporal_knots)?;
        c.spatial_order = kv.get_or("spatial_order", c.spatial_order)?;
        c.spatial_knots = kv.get_or("spatial_knots", c.spatial_knots)?;
        if let Some(t) = kv.list::<f64>("target")? {
            if t.len() != 2 {
                return Err(Error::invalid("target needs two coordinates"));
            }
            c.target = [t[0], t[1]];
        }
        c.output = kv.get::<PathBuf>("output")?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() || self.models.is_empty() || self.ns.is_empty() {
            return Err(Error::invalid("study needs at least one grid, model and sample size"));
        }
        if self.ns.contains(&0) {
            return Err(Error::invalid("sample sizes must be positive"));
        }
        if self.mc_reps < 2 {
            return Err(Error::invalid("mc_reps must be at least 2"));
        }
        for t in [self.threshold_m, self.threshold_sigma] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid(format!("threshold {t} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Everything about a (grid, model) pair that does not depend on the data.
pub struct CellSetup {
    pub sites: SiteSet,
    pub basis: SplineBasis,
    pub gram: GramMatrix,
    pub smoothers: SurfaceSmoothers,
    pub truth: TrueMoments,
}

impl CellSetup {
    pub fn new(cfg: &StudyConfig, grid: &Grid, model: Model) -> Result<Self> {
        let sites = grid.sites();
        let basis = make_time_basis(LgcpParams::domain(), cfg.temporal_order, cfg.temporal_knots, None)?;
        let gram = basis.gram()?;
        let sb = make_spatial_basis(grid.region(), cfg.spatial_order, cfg.spatial_knots)?;
        let j = roughness_matrix(&sb)?;
        let smoothers = SurfaceSmoothers::new(&sb, sites.coords(), &j)?;
        let mut truth = true_moments(sites.coords(), cfg.target, model, &cfg.params)?;
        truth.resolve(cfg.threshold_m, cfg.threshold_sigma)?;
        Ok(Self {
            sites,
            basis,
            gram,
            smoothers,
            truth,
        })
    }

    /// Runs the estimation pipeline on one data set.
    pub fn estimate(&self, cfg: &StudyConfig, pattern: &PointPattern) -> Result<(MomentEstimates, RepEstimate)> {
        let est = MomentEstimates::estimate_with_gram(pattern, &self.basis, self.gram.clone())?;
        let fits = self.smoothers.fit(&est, &cfg.xi_grid_b, &cfg.xi_grid_c)?;
        let (_, m0, sigma0, sigma00) = fits.at(&self.smoothers.basis, &est, cfg.target)?;
        let sol = solve_kriging(&est.sigma, &est.m, &sigma0, &m0, sigma00, cfg.threshold_m, cfg.threshold_sigma)?;
        let rep = RepEstimate {
            spe_hat: self.truth.prediction_error(&sol.c_star),
            m: est.m.clone(),
            m0,
            sigma: est.sigma.clone(),
            sigma0,
            c_hat: sol.c_star,
            xi_b: fits.xi_b,
            xi_c: fits.xi_c,
            rank_m: sol.rank_m,
            rank_sigma: sol.rank_sigma,
        };
        Ok((est, rep))
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub grid: String,
    pub model: Model,
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
    pub metrics: Option<CellMetrics>,
    pub spe0: f64,
    /// Smallest `SPE^ − SPE₀` over the replicates.
    pub min_spe_excess: f64,
    pub estimates: Vec<RepEstimate>,
}

/// Seed of Monte Carlo replicate `rep` in the cell `(grid, model, n)`.
pub fn dataset_seed(master: u64, grid: usize, model: Model, n: usize, rep: usize) -> u64 {
    let m = match model {
        Model::One => 1,
        Model::Two => 2,
    };
    stream_seed(master, &[grid as u64, m, n as u64, rep as u64])
}

pub fn run_cell(cfg: &StudyConfig, setup: &CellSetup, grid_index: usize, grid: &Grid, model: Model, n: usize) -> CellResult {
    let outcomes: Vec<Result<RepEstimate>> = (0..cfg.mc_reps)
        .into_par_iter()
        .map(|rep| {
            let seed = dataset_seed(cfg.seed, grid_index, model, n, rep);
            let data = simulate_dataset(&setup.sites, model, &cfg.params, n, seed)?;
            setup.estimate(cfg, &data.pattern).map(|(_, r)| r)
        })
        .collect();
    let mut estimates = Vec::with_capacity(outcomes.len());
    let mut failures = 0;
    let mut first_failure = None;
    for o in outcomes {
        match o {
            Ok(r) => estimates.push(r),
            Err(e) => {
                failures += 1;
                first_failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let metrics = error_metrics(&estimates, &setup.truth).ok();
    let min_spe_excess = estimates
        .iter()
        .map(|r| r.spe_hat - setup.truth.spe0)
        .fold(f64::INFINITY, f64::min);
    CellResult {
        grid: grid.label().to_string(),
        model,
        n,
        reps: estimates.len(),
        failures,
        first_failure,
        metrics,
        spe0: setup.truth.spe0,
        min_spe_excess,
        estimates,
    }
}

/// Runs every (grid, model, n) cell. A cell whose setup fails is reported
/// with zero replicates and the study continues.
pub fn run_study(cfg: &StudyConfig) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (gi, grid) in cfg.grids.iter().enumerate() {
        for &model in &cfg.models {
            let setup = CellSetup::new(cfg, grid, model);
            for &n in &cfg.ns {
                match &setup {
                    Ok(s) => out.push(run_cell(cfg, s, gi, grid, model, n)),
                    Err(e) => out.push(CellResult {
                        grid: grid.label().to_string(),
                        model,
                        n,
                        reps: 0,
                        failures: cfg.mc_reps,
                        first_failure: Some(e.to_string()),
                        metrics: None,
                        spe0: f64::NAN,
                        min_spe_excess: f64::NAN,
                        estimates: Vec::new(),
                    }),
                }
            }
        }
    }
    Ok(out)
}

const QUANTITIES: [&str; 5] = ["M", "m0", "Sigma", "sigma0", "SPE"];

fn metric_list(m: &CellMetrics) -> [ErrorMetrics; 5] {
    [m.m, m.m0, m.sigma, m.sigma0, m.spe]
}

/// Table of rmse values: one row per (grid, n), one block of five columns
/// per model. Failed cells are left empty.
pub fn format_table(results: &[CellResult]) -> String {
    let mut models: Vec<Model> = Vec::new();
    let mut rows: Vec<(String, usize)> = Vec::new();
    for r in results {
        if !models.contains(&r.model) {
            models.push(r.model);
        }
        if !rows.contains(&(r.grid.clone(), r.n)) {
            rows.push((r.grid.clone(), r.n));
        }
    }
    let mut s = String::from("grid,n");
    for m in &models {
        for q in QUANTITIES {
            s.push_str(&format!(",model{}_{q}", m.label()));
        }
    }
    s.push('\n');
    for (g, n) in rows {
        s.push_str(&format!("{g},{n}"));
        for m in &models {
            let cell = results.iter().find(|r| r.grid == g && r.n == n && r.model == *m);
            match cell.and_then(|c| c.metrics) {
                Some(cm) => {
                    for e in metric_list(&cm) {
                        s.push_str(&format!(",{:.3}", e.rmse));
                    }
                }
                None => s.push_str(",,,,,"),
            }
        }
        s.push('\n');
    }
    s
}

/// One line per (cell, quantity) with all three metrics.
pub fn format_long(results: &[CellResult]) -> String {
    let mut s = String::from("grid,model,n,quantity,bias,sd,rmse,reps,failures\n");
    for r in results {
        match r.metrics {
            Some(cm) => {
                for (q, e) in QUANTITIES.iter().zip(metric_list(&cm)) {
                    s.push_str(&format!(
                        "{},{},{},{q},{:?},{:?},{:?},{},{}\n",
                        r.grid,
                        r.model.label(),
                        r.n,
                        e.bias,
                        e.sd,
                        e.rmse,
                        r.reps,
                        r.failures
                    ));
                }
            }
            None => {
                for q in QUANTITIES {
                    s.push_str(&format!("{},{},{},{q},,,,{},{}\n", r.grid, r.model.label(), r.n, r.reps, r.failures));
                }
            }
        }
    }
    s
}
