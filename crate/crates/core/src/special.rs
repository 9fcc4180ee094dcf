//! Exponential integrals and Gauss-Legendre rules.

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EPS: f64 = 1e-16;
const MAX_TERMS: usize = 500;

/// Exponential integral `E_n(x)` for `n` in `{1, 2, 3}`.
///
/// `E1` is evaluated by its power series for `x <= 1` and by a Lentz continued
/// fraction beyond; `E2` and `E3` follow from the upward recurrence
/// `E_{n+1}(x) = (exp(-x) - x E_n(x)) / n`.
pub fn exp_integral(order: u32, x: f64) -> Result<f64> {
    if !(1..=3).contains(&order) {
        return Err(Error::Domain(format!(
            "exponential integral order {order} not supported"
        )));
    }
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("exponential integral at x = {x}")));
    }
    if x == 0.0 {
        return if order == 1 {
            Err(Error::Domain("E1 diverges at x = 0".into()))
        } else {
            Ok(1.0 / f64::from(order - 1))
        };
    }
    let mut value = e1(x);
    let decay = (-x).exp();
    for n in 1..order {
        value = (decay - x * value) / f64::from(n);
    }
    Ok(value)
}

/// `[E1(x), E2(x), E3(x)]` for `x > 0` from a single `E1` evaluation.
pub(crate) fn exp_integrals_123(x: f64) -> [f64; 3] {
    let e1 = e1(x);
    let decay = (-x).exp();
    let e2 = decay - x * e1;
    [e1, e2, 0.5 * (decay - x * e2)]
}

fn e1(x: f64) -> f64 {
    if x <= 1.0 {
        // E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..MAX_TERMS {
            let kf = k as f64;
            term *= -x / kf;
            let contrib = term / kf;
            sum += contrib;
            if contrib.abs() < EPS * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER_GAMMA - x.ln() - sum
    } else {
        continued_fraction(1, x)
    }
}

/// Modified Lentz evaluation of the continued fraction for `E_n(x)`, `x > 1`.
fn continued_fraction(order: u32, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let nm1 = f64::from(order - 1);
    let mut b = x + f64::from(order);
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_TERMS {
        let fi = i as f64;
        let an = -fi * (nm1 + fi);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h * (-x).exp()
}

/// `E_n(x)` for any order `n >= 1`, each order computed directly (series for
/// `x <= 1`, continued fraction otherwise). Used for the higher kernel moments.
pub(crate) fn exp_integral_any(order: u32, x: f64) -> f64 {
    debug_assert!(order >= 1 && x >= 0.0);
    if x == 0.0 {
        return if order == 1 {
            f64::INFINITY
        } else {
            1.0 / f64::from(order - 1)
        };
    }
    if x > 1.0 {
        return continued_fraction(order, x);
    }
    let nm1 = order - 1;
    let mut ans = if nm1 != 0 {
        1.0 / f64::from(nm1)
    } else {
        -x.ln() - EULER_GAMMA
    };
    let mut fact = 1.0;
    for i in 1..MAX_TERMS as u32 {
        fact *= -x / f64::from(i);
        let del = if i != nm1 {
            -fact / (f64::from(i) - f64::from(nm1))
        } else {
            let psi = -EULER_GAMMA + (1..=nm1).map(|k| 1.0 / f64::from(k)).sum::<f64>();
            fact * (-x.ln() + psi)
        };
        ans += del;
        if del.abs() < ans.abs() * EPS {
            break;
        }
    }
    ans
}

/// Quadrature nodes and weights on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Affine map of the rule from `[-1, 1]` onto `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> QuadratureRule {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        QuadratureRule {
            nodes: self.nodes.iter().map(|&t| mid + half * t).collect(),
            weights: self.weights.iter().map(|&w| half * w).collect(),
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss-Legendre rule with `n` points on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::Domain("Gauss-Legendre rule needs n >= 1".into()));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadratureRule { nodes, weights })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent route: E_n(x) = int_0^1 mu^(n-2) exp(-x/mu) dmu, by
    // composite Gauss-Legendre on geometrically graded panels.
    fn quadrature_oracle(order: i32, x: f64) -> f64 {
        let rule = gauss_legendre(20).unwrap();
        let mut total = 0.0;
        let mut hi = 1.0;
        for _ in 0..60 {
            let lo = hi * 0.5;
            total += rule
                .mapped(lo, hi)
                .integrate(|mu| mu.powi(order - 2) * (-x / mu).exp());
            hi = lo;
        }
        total
    }

    #[test]
    fn closed_form_values_at_zero() {
        assert_eq!(exp_integral(2, 0.0).unwrap(), 1.0);
        assert_eq!(exp_integral(3, 0.0).unwrap(), 0.5);
        assert!(exp_integral(1, 0.0).is_err());
        assert!(exp_integral(4, 1.0).is_err());
        assert!(exp_integral(2, -1.0).is_err());
    }

    #[test]
    fn e1_at_one() {
        let v = exp_integral(1, 1.0).unwrap();
        assert!((v - 0.219_383_934_395_520_27).abs() < 1e-15);
        assert!((quadrature_oracle(1, 1.0) - v).abs() < 1e-13);
    }

    #[test]
    fn matches_quadrature_oracle() {
        for &x in &[1e-3, 0.05, 0.3, 0.99, 1.01, 2.5, 7.0, 20.0, 45.0] {
            for n in 1..=3u32 {
                let v = exp_integral(n, x).unwrap();
                let o = quadrature_oracle(n as i32, x);
                assert!(((v - o) / o).abs() < 1e-12, "E{n}({x}) = {v} vs {o}");
            }
        }
    }

    #[test]
    fn direct_orders_agree_with_recurrence() {
        for &x in &[1e-4, 0.2, 0.8, 1.0, 1.5, 4.0, 30.0] {
            for n in 1..=3u32 {
                let a = exp_integral(n, x).unwrap();
                let b = exp_integral_any(n, x);
                assert!(((a - b) / b).abs() < 1e-12);
            }
            for n in 3..=6u32 {
                let lhs = exp_integral_any(n + 1, x);
                let rhs = ((-x).exp() - x * exp_integral_any(n, x)) / f64::from(n);
                assert!(((lhs - rhs) / lhs).abs() < 1e-9, "n={n} x={x}");
            }
        }
    }

    #[test]
    fn gauss_legendre_small_rules() {
        let r1 = gauss_legendre(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert!((r1.weights[0] - 2.0).abs() < 1e-15);
        let r2 = gauss_legendre(2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!((r2.nodes[0] + s).abs() < 1e-15 && (r2.nodes[1] - s).abs() < 1e-15);
        assert!((r2.weights[0] - 1.0).abs() < 1e-15);
        let r3 = gauss_legendre(3).unwrap();
        assert!((r3.integrate(|x| x.powi(4)) - 0.4).abs() < 1e-13);
        assert!(gauss_legendre(0).is_err());
    }

    #[test]
    fn gauss_legendre_exactness_and_order() {
        for n in [4usize, 7, 16, 33, 64] {
            let r = gauss_legendre(n).unwrap();
            assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(r.nodes[0] > -1.0 && r.nodes[n - 1] < 1.0);
            let deg = (2 * n - 1) as i32;
            for p in [deg - 1, deg] {
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / f64::from(p + 1) };
                assert!((r.integrate(|x| x.powi(p)) - exact).abs() < 1e-13);
            }
        }
    }
}
