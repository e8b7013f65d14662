//! Gauss–Legendre quadrature.

use std::f64::consts::PI;

/// Nodes and weights of the `m`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// The rule integrates polynomials of degree `2m - 1` exactly. Nodes are
/// returned in increasing order.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; m];
        let mut weights = vec![0.0; m];
        let mf = m as f64;
        for i in 0..m.div_ceil(2) {
            // Tricomi's initial guess, refined by Newton on P_m.
            let mut x = (PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(m, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(m, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[m - 1 - i] = x;
            weights[i] = w;
            weights[m - 1 - i] = w;
        }
        if m % 2 == 1 {
            nodes[m / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Smallest rule exact for polynomials of the given degree.
    pub fn exact_for_degree(degree: usize) -> Self {
        Self::new(degree / 2 + 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[lo, hi]`.
    pub fn on_interval(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    /// Composite rule with `panels` equal sub-intervals of `[lo, hi]`.
    pub fn composite(&self, lo: f64, hi: f64, panels: usize) -> Vec<(f64, f64)> {
        let h = (hi - lo) / panels as f64;
        let mut out = Vec::with_capacity(panels * self.len());
        for k in 0..panels {
            let a = lo + k as f64 * h;
            let b = if k + 1 == panels { hi } else { a + h };
            out.extend(self.on_interval(a, b));
        }
        out
    }

    pub fn integrate(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.on_interval(lo, hi).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        for m in 1..=20 {
            let gl = GaussLegendre::new(m);
            let s: f64 = gl.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-14, "m={m} sum={s}");
        }
    }

    #[test]
    fn exact_for_monomials() {
        for m in 1..=12 {
            let gl = GaussLegendre::new(m);
            for deg in 0..=(2 * m - 1) {
                let got = gl.integrate(0.0, 1.0, |x| x.powi(deg as i32));
                let want = 1.0 / (deg as f64 + 1.0);
                assert!((got - want).abs() < 1e-14, "m={m} deg={deg}");
            }
        }
    }

    #[test]
    fn nodes_sorted_and_symmetric() {
        let gl = GaussLegendre::new(7);
        for w in gl.nodes.windows(2) {
            assert!(w[0] < w[1]);
        }
        for i in 0..7 {
            assert!((gl.nodes[i] + gl.nodes[6 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn composite_integrates_smooth_function() {
        let gl = GaussLegendre::new(8);
        let got: f64 = gl
            .composite(0.0, 1.0, 16)
            .into_iter()
            .map(|(x, w)| w * (std::f64::consts::PI * x).sin().exp())
            .sum();
        let reference = GaussLegendre::new(40)
            .composite(0.0, 1.0, 64)
            .into_iter()
            .map(|(x, w)| w * (std::f64::consts::PI * x).sin().exp())
            .sum::<f64>();
        assert!((got - reference).abs() < 1e-14);
    }
}
