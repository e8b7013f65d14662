//! Temporal B-spline bases, tensor-product spatial bases, and their Gram and
//! roughness matrices.
//!
//! All bases are clamped: the boundary knots are repeated `order` times, so
//! the basis spans every polynomial of degree `< order` on the domain and
//! the first basis function equals 1 at the left end.
//!
//! Spatial bases index the tensor product with the second coordinate varying
//! fastest: `gamma[a * p_y + b] = beta_x[a](s.x) * beta_y[b](s.y)`, which is
//! the ordering of the Kronecker product `beta_x ⊗ beta_y`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// A closed time interval `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeDomain {
    a: f64,
    b: f64,
}

impl TimeDomain {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::invalid(format!(
                "time domain must satisfy a < b, got [{a}, {b}]"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn start(&self) -> f64 {
        self.a
    }

    pub fn end(&self) -> f64 {
        self.b
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.a && t <= self.b
    }

    pub(crate) fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                value: t,
                lo: self.a,
                hi: self.b,
            })
        }
    }
}

/// Clamped B-spline basis of a given order (degree + 1) on a [`TimeDomain`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    domain: TimeDomain,
    order: usize,
    interior: Vec<f64>,
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Basis with `k` equally spaced interior knots.
    pub fn uniform(domain: TimeDomain, order: usize, k: usize) -> Result<Self> {
        let h = domain.length() / (k + 1) as f64;
        let interior = (1..=k).map(|i| domain.a + h * i as f64).collect();
        Self::with_interior_knots(domain, order, interior)
    }

    /// Basis from an explicit list of interior knots.
    pub fn with_interior_knots(domain: TimeDomain, order: usize, interior: Vec<f64>) -> Result<Self> {
        if order < 1 {
            return Err(Error::invalid("spline order must be at least 1"));
        }
        for w in interior.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("interior knots must be strictly increasing"));
            }
        }
        if let (Some(&lo), Some(&hi)) = (interior.first(), interior.last()) {
            if lo <= domain.a || hi >= domain.b {
                return Err(Error::invalid(format!(
                    "interior knots must lie strictly inside ({}, {})",
                    domain.a, domain.b
                )));
            }
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * order);
        knots.extend(std::iter::repeat_n(domain.a, order));
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat_n(domain.b, order));
        Ok(Self {
            domain,
            order,
            interior,
            knots,
        })
    }

    pub fn domain(&self) -> TimeDomain {
        self.domain
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    /// Full clamped knot vector, of length `dim() + order()`.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.order + self.interior.len()
    }

    /// Greville abscissae; the coefficients of the identity function `t`.
    pub fn greville(&self) -> Vec<f64> {
        let deg = self.order - 1;
        if deg == 0 {
            return (0..self.dim())
                .map(|i| 0.5 * (self.knots[i] + self.knots[i + 1]))
                .collect();
        }
        (0..self.dim())
            .map(|i| self.knots[i + 1..=i + deg].iter().sum::<f64>() / deg as f64)
            .collect()
    }

    fn span(&self, t: f64) -> usize {
        let p = self.dim();
        let idx = self.knots.partition_point(|&k| k <= t);
        idx.saturating_sub(1).clamp(self.order - 1, p - 1)
    }

    /// Values of the `order` basis functions that may be nonzero at `t`.
    ///
    /// Writes them into `out` and returns the index of the first one. The
    /// caller must ensure `t` lies in the domain.
    pub fn eval_nonzero_into(&self, t: f64, out: &mut Vec<f64>) -> usize {
        let deg = self.order - 1;
        let mu = self.span(t);
        let u = &self.knots;
        out.clear();
        out.resize(deg + 1, 0.0);
        out[0] = 1.0;
        let mut left = vec![0.0; deg + 1];
        let mut right = vec![0.0; deg + 1];
        for j in 1..=deg {
            left[j] = t - u[mu + 1 - j];
            right[j] = u[mu + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        mu - deg
    }

    /// The full basis vector `beta(t)`.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        self.domain.check(t)?;
        let mut buf = Vec::with_capacity(self.order);
        let first = self.eval_nonzero_into(t, &mut buf);
        let mut v = DVector::zeros(self.dim());
        for (m, &x) in buf.iter().enumerate() {
            v[first + m] = x;
        }
        Ok(v)
    }

    /// Derivatives `0..=nd` of the nonzero basis functions at `t`.
    ///
    /// Returns the first index and a table `ders[k][m]` holding the `k`-th
    /// derivative of basis function `first + m`.
    pub fn eval_derivatives(&self, t: f64, nd: usize) -> (usize, Vec<Vec<f64>>) {
        let deg = self.order - 1;
        let mu = self.span(t);
        let u = &self.knots;
        // ndu holds basis values (upper triangle) and knot differences (lower).
        let mut ndu = vec![vec![0.0; deg + 1]; deg + 1];
        let mut left = vec![0.0; deg + 1];
        let mut right = vec![0.0; deg + 1];
        ndu[0][0] = 1.0;
        for j in 1..=deg {
            left[j] = t - u[mu + 1 - j];
            right[j] = u[mu + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; deg + 1]; nd + 1];
        for j in 0..=deg {
            ders[0][j] = ndu[j][deg];
        }
        let mut a = vec![vec![0.0; deg + 1]; 2];
        for r in 0..=deg {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd.min(deg) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = deg - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { deg - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = deg as f64;
        for k in 1..=nd.min(deg) {
            for x in ders[k].iter_mut() {
                *x *= factor;
            }
            factor *= (deg - k) as f64;
        }
        (mu - deg, ders)
    }

    /// Non-degenerate knot spans `[knots[i], knots[i+1]]`.
    pub(crate) fn spans(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.knots
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| (w[0], w[1]))
    }

    /// `∫ β^{(deriv)}(t) β^{(deriv)}(t)ᵀ dt`, exact up to rounding.
    pub fn derivative_gram(&self, deriv: usize) -> DMatrix<f64> {
        self.derivative_gram_with_nodes(deriv, self.order)
    }

    pub(crate) fn derivative_gram_with_nodes(&self, deriv: usize, nodes: usize) -> DMatrix<f64> {
        let p = self.dim();
        let mut g = DMatrix::zeros(p, p);
        if deriv >= self.order {
            return g;
        }
        let gl = GaussLegendre::new(nodes);
        for (lo, hi) in self.spans() {
            for (x, w) in gl.on_interval(lo, hi) {
                let (first, ders) = self.eval_derivatives(x, deriv);
                let v = &ders[deriv];
                for (i, &vi) in v.iter().enumerate() {
                    for (j, &vj) in v.iter().enumerate() {
                        g[(first + i, first + j)] += w * vi * vj;
                    }
                }
            }
        }
        g
    }

    /// The Gram matrix `G = ∫ β βᵀ`.
    pub fn gram(&self) -> Result<GramMatrix> {
        GramMatrix::new(self.derivative_gram(0))
    }
}

/// Builds a temporal basis with `k` interior knots placed at the quantiles
/// of a knot density.
///
/// With `density = None` the knots are equally spaced. Otherwise knot `i`
/// solves `∫_a^τ g = i/(k+1)` after normalizing `g` to integrate to one.
pub fn make_time_basis(
    domain: TimeDomain,
    order: usize,
    k: usize,
    density: Option<&dyn Fn(f64) -> f64>,
) -> Result<SplineBasis> {
    if order < 2 {
        return Err(Error::invalid(format!("temporal order must be >= 2, got {order}")));
    }
    let Some(g) = density else {
        return SplineBasis::uniform(domain, order, k);
    };
    let (a, b) = (domain.start(), domain.end());
    // Positive on the open interval; the endpoints may touch zero.
    let probes = 1000;
    for i in 0..=probes {
        let t = a + domain.length() * i as f64 / probes as f64;
        let v = g(t);
        let interior = i > 0 && i < probes;
        if !v.is_finite() || v < 0.0 || (interior && v <= 0.0) {
            return Err(Error::invalid(format!(
                "knot density must be strictly positive on ({a}, {b}); g({t}) = {v}"
            )));
        }
    }
    let gl = GaussLegendre::new(10);
    let cdf = |tau: f64| -> f64 {
        gl.composite(a, tau, 200)
            .into_iter()
            .map(|(x, w)| w * g(x))
            .sum()
    };
    let total = cdf(b);
    let mut interior = Vec::with_capacity(k);
    for i in 1..=k {
        let target = total * i as f64 / (k + 1) as f64;
        let (mut lo, mut hi) = (a, b);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * b.abs().max(a.abs()).max(1.0) {
                break;
            }
        }
        interior.push(0.5 * (lo + hi));
    }
    SplineBasis::with_interior_knots(domain, order, interior)
}

/// `G = ∫ β βᵀ` together with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GramMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(matrix.clone()).ok_or_else(|| Error::Singular {
            what: "Gram matrix is not positive definite".into(),
            condition: crate::linalg::condition_estimate(&matrix),
        })?;
        Ok(Self { matrix, chol })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `G⁻¹ v` via the Cholesky factor.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// `G⁻¹ X`.
    pub fn solve_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(x)
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        let ok = [x0, x1, y0, y1].iter().all(|v| v.is_finite()) && x1 > x0 && y1 > y0;
        if !ok {
            return Err(Error::invalid(format!(
                "degenerate rectangle [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        Ok(Self { x0, x1, y0, y1 })
    }

    pub fn contains(&self, s: [f64; 2]) -> bool {
        s[0] >= self.x0 && s[0] <= self.x1 && s[1] >= self.y0 && s[1] <= self.y1
    }

    /// Smallest rectangle containing all points, padded by `pad` on each side.
    pub fn bounding(points: &[[f64; 2]], pad: f64) -> Result<Self> {
        let mut r = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for p in points {
            r[0] = r[0].min(p[0]);
            r[1] = r[1].max(p[0]);
            r[2] = r[2].min(p[1]);
            r[3] = r[3].max(p[1]);
        }
        Self::new(r[0] - pad, r[1] + pad, r[2] - pad, r[3] + pad)
    }
}

/// Tensor product of two clamped spline bases over a rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialBasis {
    region: Rect,
    bx: SplineBasis,
    by: SplineBasis,
}

impl SpatialBasis {
    pub fn new(region: Rect, bx: SplineBasis, by: SplineBasis) -> Result<Self> {
        let same = |d: TimeDomain, lo: f64, hi: f64| d.start() == lo && d.end() == hi;
        if !same(bx.domain(), region.x0, region.x1) || !same(by.domain(), region.y0, region.y1) {
            return Err(Error::invalid("marginal bases must span the region"));
        }
        Ok(Self { region, bx, by })
    }

    pub fn region(&self) -> Rect {
        self.region
    }

    pub fn marginals(&self) -> (&SplineBasis, &SplineBasis) {
        (&self.bx, &self.by)
    }

    pub fn dim(&self) -> usize {
        self.bx.dim() * self.by.dim()
    }

    /// `gamma(s)`; rejects points outside the region.
    pub fn eval(&self, s: [f64; 2]) -> Result<DVector<f64>> {
        if !self.region.contains(s) {
            return Err(Error::OutsideRegion { x: s[0], y: s[1] });
        }
        let py = self.by.dim();
        let mut vx = Vec::new();
        let mut vy = Vec::new();
        let fx = self.bx.eval_nonzero_into(s[0], &mut vx);
        let fy = self.by.eval_nonzero_into(s[1], &mut vy);
        let mut g = DVector::zeros(self.dim());
        for (i, &x) in vx.iter().enumerate() {
            for (j, &y) in vy.iter().enumerate() {
                g[(fx + i) * py + fy + j] = x * y;
            }
        }
        Ok(g)
    }

    /// Design matrix with rows `gamma(s_j)ᵀ`.
    pub fn design_matrix(&self, sites: &[[f64; 2]]) -> Result<DMatrix<f64>> {
        let mut gamma = DMatrix::zeros(sites.len(), self.dim());
        for (j, &s) in sites.iter().enumerate() {
            gamma.set_row(j, &self.eval(s)?.transpose());
        }
        Ok(gamma)
    }
}

/// Square-grid spatial basis: same order and `k_per_axis` equally spaced
/// interior knots on both axes.
pub fn make_spatial_basis(region: Rect, order: usize, k_per_axis: usize) -> Result<SpatialBasis> {
    let region = Rect::new(region.x0, region.x1, region.y0, region.y1)?;
    let bx = SplineBasis::uniform(TimeDomain::new(region.x0, region.x1)?, order, k_per_axis)?;
    let by = SplineBasis::uniform(TimeDomain::new(region.y0, region.y1)?, order, k_per_axis)?;
    SpatialBasis::new(region, bx, by)
}

/// Gram matrix of the second partial derivatives of `gamma`:
/// `J = Σ_{i,j} ∬ γ^{(ij)} γ^{(ij)ᵀ}`, with both mixed partials counted.
#[derive(Debug, Clone)]
pub struct RoughnessMatrix {
    pub matrix: DMatrix<f64>,
}

pub fn roughness_matrix(sb: &SpatialBasis) -> Result<RoughnessMatrix> {
    roughness_with_nodes(sb, None)
}

pub(crate) fn roughness_with_nodes(sb: &SpatialBasis, nodes: Option<usize>) -> Result<RoughnessMatrix> {
    let (bx, by) = sb.marginals();
    if bx.order() < 3 || by.order() < 3 {
        return Err(Error::invalid(
            "roughness penalty needs marginal order >= 3 (second derivatives)",
        ));
    }
    let gx = |d| bx.derivative_gram_with_nodes(d, nodes.unwrap_or(bx.order()));
    let gy = |d| by.derivative_gram_with_nodes(d, nodes.unwrap_or(by.order()));
    let (x0, x1, x2) = (gx(0), gx(1), gx(2));
    let (y0, y1, y2) = (gy(0), gy(1), gy(2));
    let matrix = x2.kronecker(&y0) + x1.kronecker(&y1) * 2.0 + x0.kronecker(&y2);
    Ok(RoughnessMatrix { matrix })
}
