//! Gauss–Legendre rules on [-1, 1], mapped to [0, T] for cumulative hazards.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Rule with `order` points, roots found by Newton iteration on P_n.
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::Config(format!(
                "quadrature order must be at least 2, got {order}"
            )));
        }
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess for the i-th largest root.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let step = p / d;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights for the interval [0, upper].
    pub fn mapped(&self, upper: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * upper;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (half * (x + 1.0), half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, upper: f64, mut f: F) -> f64 {
        self.mapped(upper).map(|(s, w)| w * f(s)).sum()
    }

    /// Nodes and weights for [0, upper] after the substitution
    /// `s = upper * y^power`, `y` in [0, 1].
    ///
    /// With `power = 2 / shape` a Weibull hazard `shape * s^(shape - 1)` times
    /// any constant is integrated exactly, and smooth multipliers stay smooth
    /// in `y`.
    pub fn mapped_power(&self, upper: f64, power: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| {
            let y = 0.5 * (x + 1.0);
            let y_pow = y.powf(power - 1.0);
            (upper * y_pow * y, 0.5 * w * upper * power * y_pow)
        })
    }

    /// Exponent of the substitution used for Weibull hazards of `shape`.
    pub fn weibull_power(shape: f64) -> f64 {
        WEIBULL_GRADING / shape
    }
}

/// Integer grading `j` in `s = T y^(j / shape)`; the Weibull factor becomes
/// `j y^(j-1)`, a polynomial.
pub const WEIBULL_GRADING: f64 = 2.0;

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let dp = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        for order in 2..40 {
            let rule = GaussLegendre::new(order).unwrap();
            let s: f64 = rule.weights().iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "order {order}: {s}");
        }
    }

    #[test]
    fn known_two_point_rule() {
        let rule = GaussLegendre::new(2).unwrap();
        let r = 1.0 / 3f64.sqrt();
        assert!((rule.nodes()[0] + r).abs() < 1e-15);
        assert!((rule.nodes()[1] - r).abs() < 1e-15);
        assert!((rule.weights()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        for order in [2usize, 5, 15, 20] {
            let rule = GaussLegendre::new(order).unwrap();
            for k in 0..(2 * order) {
                for &upper in &[0.3f64, 1.0, 7.5, 17.5] {
                    let exact = upper.powi(k as i32 + 1) / (k as f64 + 1.0);
                    let approx = rule.integrate(upper, |s| s.powi(k as i32));
                    let rel = ((approx - exact) / exact).abs();
                    assert!(rel < 1e-12, "order {order} k {k} T {upper}: rel {rel}");
                }
            }
        }
    }

    #[test]
    fn graded_rule_exact_for_weibull_hazards() {
        let rule = GaussLegendre::new(15).unwrap();
        for &shape in &[0.3, 0.5, 1.0, 1.4, 1.8, 3.0, 7.0] {
            for &upper in &[0.01f64, 1.0, 10.0, 17.5] {
                let power = GaussLegendre::weibull_power(shape);
                let approx: f64 = rule
                    .mapped_power(upper, power)
                    .map(|(s, w)| w * shape * s.powf(shape - 1.0))
                    .sum();
                let exact = upper.powf(shape);
                assert!(((approx - exact) / exact).abs() < 1e-12, "{shape} {upper}");
            }
        }
    }

    #[test]
    fn graded_rule_integrates_smooth_functions() {
        let rule = GaussLegendre::new(15).unwrap();
        let approx: f64 = rule.mapped_power(3.0, 1.0).map(|(s, w)| w * s.cos()).sum();
        assert!((approx - 3f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn order_below_two_rejected() {
        assert!(GaussLegendre::new(1).is_err());
        assert!(GaussLegendre::new(0).is_err());
    }
}
