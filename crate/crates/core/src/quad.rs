//! Quadrature utilities shared by kernel assembly, exterior integrals and the
//! operator oracle: Gauss-Legendre panel rules, graded panel layouts for
//! endpoint singularities, and a bisection-based adaptive integrator.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Computed by Newton iteration on the Legendre recurrence; accurate to
/// machine precision for the orders used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = -p / d;
            x += dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
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
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

fn gl8() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(8))
}

/// 16-point Gauss-Legendre approximation of `int_a^b f`.
pub fn integrate_gl16<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = gl16();
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * f(c + r * x);
    }
    acc * r
}

fn integrate_gl8<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = gl8();
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * f(c + r * x);
    }
    acc * r
}

/// Integrates over consecutive panels given by `edges`.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: &F, edges: &[f64]) -> f64 {
    edges
        .windows(2)
        .map(|e| integrate_gl16(f, e[0], e[1]))
        .sum()
}

/// Panel edges from `a` to `b` geometrically graded toward `a`, with `n`
/// panels and first panel width `(b - a) * 2^{-(n-1)}`.
pub fn graded_edges_toward(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(a);
    for k in (0..n).rev() {
        edges.push(a + (b - a) * 0.5f64.powi(k as i32));
    }
    edges
}

/// Adaptive quadrature of `f` on `[a, b]` to relative tolerance `rel_tol`,
/// by recursive bisection with an 8/16-point Gauss-Legendre error estimate.
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    let coarse = integrate_gl8(f, a, b);
    let scale = coarse.abs().max(1e-300);
    let mut total = 0.0;
    let mut stack = vec![(a, b, coarse, 0u32)];
    let mut evals = 0usize;
    while let Some((lo, hi, est, depth)) = stack.pop() {
        let fine = integrate_gl16(f, lo, hi);
        evals += 1;
        if (fine - est).abs() <= rel_tol * scale.max(fine.abs()) || depth >= 52 {
            if depth >= 52 && (fine - est).abs() > 1e3 * rel_tol * scale.max(fine.abs()) {
                return Err(Error::Quadrature(format!(
                    "max refinement depth reached on [{lo}, {hi}], residual {:e}",
                    (fine - est).abs()
                )));
            }
            total += fine;
            continue;
        }
        if evals > 2_000_000 {
            return Err(Error::Quadrature("evaluation budget exhausted".into()));
        }
        let mid = 0.5 * (lo + hi);
        stack.push((lo, mid, integrate_gl8(f, lo, mid), depth + 1));
        stack.push((mid, hi, integrate_gl8(f, mid, hi), depth + 1));
    }
    Ok(total)
}

/// Exact integral of `r -> r^{-(1+ps)}` over a positive distance interval
/// `[lo, hi]`; `hi = +inf` is allowed.
pub fn power_tail_integral(lo: f64, hi: f64, ps: f64) -> f64 {
    debug_assert!(lo > 0.0 && hi > lo);
    if hi.is_infinite() {
        lo.powf(-ps) / ps
    } else {
        (lo.powf(-ps) - hi.powf(-ps)) / ps
    }
}

/// Integral of `y -> f(y) * |y - x0|^{-(1+ps)}` over the half-line going away
/// from `x0`, starting at `start` (with `|start - x0| > 0`), where `f` is
/// bounded with a finite limit at infinity.
///
/// Geometric panels in distance, stopping once panel contributions fall below
/// `rel_tol` of the accumulated value, then an exact tail with the limit
/// value `f_inf`.
pub fn half_line_weighted<F: Fn(f64) -> f64>(
    f: &F,
    x0: f64,
    start: f64,
    direction: f64,
    ps: f64,
    f_inf: f64,
    rel_tol: f64,
) -> Result<f64> {
    let d0 = (start - x0).abs();
    debug_assert!(d0 > 0.0);
    let sign = direction.signum();
    let weighted = |d: f64| f(x0 + sign * d) * d.powf(-(1.0 + ps));
    let mut acc = 0.0;
    let mut lo = d0;
    let mut quiet = 0;
    for _ in 0..400 {
        let hi = lo * 2.0;
        let part = adaptive(&weighted, lo, hi, rel_tol)?;
        acc += part;
        // conservative remainder bound: sup|f| on the tail is unknown, use the
        // decaying panel contributions as the stopping signal
        if part.abs() <= rel_tol * acc.abs().max(1e-300) {
            quiet += 1;
            if quiet >= 3 {
                lo = hi;
                break;
            }
        } else {
            quiet = 0;
        }
        lo = hi;
    }
    acc += f_inf * power_tail_integral(lo, f64::INFINITY, ps);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // GL-16 is exact through degree 31
        let f = |x: f64| 3.0 * x.powi(7) - x.powi(4) + 2.0 * x - 5.0;
        let exact = |a: f64, b: f64| {
            let af = |x: f64| 3.0 * x.powi(8) / 8.0 - x.powi(5) / 5.0 + x * x - 5.0 * x;
            af(b) - af(a)
        };
        let got = integrate_gl16(&f, -0.3, 1.7);
        assert!((got - exact(-0.3, 1.7)).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_mild_singularity() {
        // int_0^1 x^{-1/2} dx = 2
        let f = |x: f64| x.max(1e-300).powf(-0.5);
        let got = adaptive(&f, 1e-14, 1.0, 1e-11).unwrap();
        assert!((got - (2.0 - 2.0 * 1e-7)).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn half_line_matches_closed_form() {
        // f = 1: int_{d0}^inf r^{-(1+ps)} dr = d0^{-ps}/ps
        let ps = 0.75;
        let got = half_line_weighted(&|_| 1.0, 0.0, 1.5, 1.0, ps, 1.0, 1e-11).unwrap();
        let exact = 1.5f64.powf(-ps) / ps;
        assert!((got - exact).abs() < 1e-9 * exact, "{got} vs {exact}");
    }

    #[test]
    fn graded_edges_are_monotone() {
        let e = graded_edges_toward(2.0, 3.0, 10);
        assert_eq!(e.len(), 11);
        assert!(e.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(e[0], 2.0);
        assert_eq!(*e.last().unwrap(), 3.0);
    }
}
