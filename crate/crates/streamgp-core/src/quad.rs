//! Gauss–Legendre quadrature.
//!
//! Used as the slow, independent reference for every recurrence in this
//! crate: projection coefficients, `K_fu` rows and `K_uu` double integrals
//! are all checked against rules built here.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// A quadrature rule on an interval `[a, b]`: sum `w_i * f(x_i)`.
#[derive(Debug, Clone)]
pub struct Rule {
    /// Quadrature nodes, ascending.
    pub nodes: Vec<f64>,
    /// Matching weights.
    pub weights: Vec<f64>,
}

impl Rule {
    /// Apply the rule to a function.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Nodes are the roots of the Legendre polynomial `P_n`, found by Newton
/// iteration from the Chebyshev-like initial guess; weights are
/// `2 / ((1 - x^2) P_n'(x)^2)`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "quadrature rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = math::cos(core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let delta = p / d;
            x -= delta;
            if math::abs(delta) < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x.abs();
        weights[i] = w;
        nodes[n - 1 - i] = x.abs();
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        let (_, d) = legendre_with_derivative(n, 0.0);
        nodes[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (d * d);
    }
    Rule { nodes, weights }
}

/// The same rule mapped onto `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Rule {
    let base = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Rule {
        nodes: base.nodes.iter().map(|&x| mid + half * x).collect(),
        weights: base.weights.iter().map(|&w| w * half).collect(),
    }
}

/// Composite rule: `panels` Gauss–Legendre panels of `n` points each on
/// `[a, b]`. Handy when the integrand oscillates or decays over a long
/// interval.
pub fn composite_gauss_legendre(n: usize, a: f64, b: f64, panels: usize) -> Rule {
    assert!(panels >= 1);
    let width = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(n * panels);
    let mut weights = Vec::with_capacity(n * panels);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let rule = gauss_legendre_on(n, lo, lo + width);
        nodes.extend(rule.nodes);
        weights.extend(rule.weights);
    }
    Rule { nodes, weights }
}

/// Value and derivative of the Legendre polynomial `P_n` at `x` via the
/// three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
