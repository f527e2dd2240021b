//! The discrete nonlocal operator, the fractional p-Dirichlet energy whose
//! gradient it is, and an independent quadrature oracle for convergence
//! studies.
//!
//! Units bookkeeping: cell measures are folded into the kernel weights at
//! assembly, so `apply` is a plain weighted sum and the exact identity
//! `grad E = h * apply` holds (this is tested, not assumed).

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::kernel::KernelWeights;
use crate::quad;

/// Regularized singular nonlinearity `Phi_eps(d) = (d^2 + eps^2)^{(p-2)/2} d`.
///
/// At `eps = 0` this is `|d|^{p-2} d` extended by `Phi_0(0) = 0`, continuous
/// (but with unbounded slope at 0) throughout the singular range `p < 2`.
#[inline]
pub fn phi(d: f64, p: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        if d == 0.0 {
            0.0
        } else {
            d.abs().powf(p - 1.0) * d.signum()
        }
    } else {
        (d * d + eps * eps).powf(0.5 * (p - 2.0)) * d
    }
}

/// Derivative `Phi_eps'(d) = (d^2+eps^2)^{(p-4)/2} ((p-1) d^2 + eps^2)`,
/// strictly positive for `eps > 0`.
#[inline]
pub fn phi_prime(d: f64, p: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        if d == 0.0 {
            // the exact nonlinearity has unbounded slope at the origin;
            // Newton always runs with eps > 0
            f64::INFINITY
        } else {
            (p - 1.0) * d.abs().powf(p - 2.0)
        }
    } else {
        let t = d * d + eps * eps;
        t.powf(0.5 * (p - 4.0)) * ((p - 1.0) * d * d + eps * eps)
    }
}

/// Pair potential `Psi_eps(d) = (d^2 + eps^2)^{p/2} - eps^p`, normalized so
/// `Psi_eps(0) = 0`; satisfies `Psi_eps' = p Phi_eps` and `Psi_0(d) = |d|^p`.
#[inline]
pub fn psi(d: f64, p: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        d.abs().powf(p)
    } else {
        (d * d + eps * eps).powf(0.5 * p) - eps.powf(p)
    }
}

/// Evaluation context: weights, regularization and the exterior switch.
#[derive(Clone, Copy)]
pub struct OperatorContext<'a> {
    pub weights: &'a KernelWeights,
    pub epsilon_reg: f64,
    pub include_exterior: bool,
}

impl<'a> OperatorContext<'a> {
    pub fn new(weights: &'a KernelWeights) -> Self {
        OperatorContext {
            weights,
            epsilon_reg: 0.0,
            include_exterior: true,
        }
    }

    pub fn interior_only(weights: &'a KernelWeights) -> Self {
        OperatorContext {
            weights,
            epsilon_reg: 0.0,
            include_exterior: false,
        }
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon_reg = eps;
        self
    }

    pub fn p(&self) -> f64 {
        self.weights.spec.p
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.weights.cells {
            return Err(Error::DimensionMismatch {
                expected: self.weights.cells,
                got: len,
            });
        }
        Ok(())
    }

    /// `(L u)_i = 2 m(t) [ sum_j Phi_eps(u_i - u_j) W_ij + ext_i(u_i) ]`.
    pub fn apply(&self, gf: &GridFunction, t: f64) -> Result<GridFunction> {
        self.check_len(gf.len())?;
        let p = self.p();
        let eps = self.epsilon_reg;
        let w = self.weights;
        let mfac = w.time_factor(t);
        let u = &gf.values;
        let mut out = vec![0.0; u.len()];
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let ui = u[i];
            let row = w.row(i);
            // sequential fold within the row keeps results bit-reproducible
            let mut acc = 0.0;
            for (j, &wij) in row.iter().enumerate() {
                if wij != 0.0 {
                    acc += phi(ui - u[j], p, eps) * wij;
                }
            }
            if self.include_exterior {
                acc += w.exterior.weighted_sum(i, ui, &|d| phi(d, p, eps));
            }
            *o = 2.0 * mfac * acc;
        });
        GridFunction::new(out, gf.time)
    }

    /// Energy whose discrete gradient is `h * apply`:
    /// `E(u) = (m(t)/p) [ sum_{i<j} 2 h W_ij Psi(u_i - u_j) + 2 h sum_i X_i(u_i) ]`.
    pub fn energy(&self, gf: &GridFunction, t: f64) -> Result<f64> {
        self.check_len(gf.len())?;
        let p = self.p();
        let eps = self.epsilon_reg;
        let w = self.weights;
        let h = w.cell_width;
        let mfac = w.time_factor(t);
        let u = &gf.values;
        let m = u.len();
        let partials: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|i| {
                let ui = u[i];
                let row = w.row(i);
                let mut acc = 0.0;
                for j in (i + 1)..m {
                    let wij = row[j];
                    if wij != 0.0 {
                        acc += 2.0 * wij * psi(ui - u[j], p, eps);
                    }
                }
                if self.include_exterior {
                    acc += 2.0 * w.exterior.weighted_sum(i, ui, &|d| psi(d, p, eps));
                }
                acc
            })
            .collect();
        let total: f64 = partials.iter().sum();
        Ok(mfac * h * total / p)
    }

    /// Hessian of the energy (dense, symmetric); positive semidefinite for
    /// `eps > 0` by diagonal dominance.
    pub fn energy_hessian(&self, u: &[f64], t: f64) -> Result<DMatrix<f64>> {
        self.check_len(u.len())?;
        let p = self.p();
        let eps = self.epsilon_reg;
        let w = self.weights;
        let h = w.cell_width;
        let mfac = w.time_factor(t);
        let m = u.len();
        let mut data = vec![0.0; m * m];
        data.par_chunks_mut(m).enumerate().for_each(|(i, row_out)| {
            let ui = u[i];
            let row = w.row(i);
            let mut diag = 0.0;
            for j in 0..m {
                if j == i {
                    continue;
                }
                let wij = row[j];
                if wij != 0.0 {
                    let d = phi_prime(ui - u[j], p, eps) * wij;
                    row_out[j] = -2.0 * h * mfac * d;
                    diag += d;
                }
            }
            if self.include_exterior {
                diag += w.exterior.weighted_sum(i, ui, &|d| phi_prime(d, p, eps));
            }
            row_out[i] = 2.0 * h * mfac * diag;
        });
        Ok(DMatrix::from_row_slice(m, m, &data))
    }
}

/// Options for the quadrature oracle.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceOptions {
    pub rel_tol: f64,
    /// Restrict the integration to `(a, b)` (no exterior contribution);
    /// `None` integrates over the whole line assuming `u` decays.
    pub interior: Option<(f64, f64)>,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions {
            rel_tol: 1e-9,
            interior: None,
        }
    }
}

/// Ground-truth evaluation of the prototype operator
/// `2 pv int Phi_0(u(x) - u(y)) |x - y|^{-(1+ps)} dy` at one point, for an
/// analytic state supplied as a closure.
///
/// The integral is taken in the symmetric principal-value form
/// `2 int_0^inf [Phi_0(u(x)-u(x+z)) + Phi_0(u(x)-u(x-z))] z^{-(1+ps)} dz`;
/// sign changes of either difference are located by scan plus bisection and
/// the panels are graded into the origin and into each sign-change point.
/// `p = 2` is admitted here for cross-validation against the linear theory.
pub fn reference_apply<U: Fn(f64) -> f64>(
    u: &U,
    x: f64,
    p: f64,
    s: f64,
    opts: ReferenceOptions,
) -> Result<f64> {
    if !(p > 1.0 && p <= 2.0) || !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "oracle requires p in (1,2] and s in (0,1), got ({p}, {s})"
        )));
    }
    let ps = p * s;
    let u0 = u(x);

    // reach of the integral and the analytic far tail
    let (z_hi, tail, right_cap, left_cap) = match opts.interior {
        Some((a, b)) => {
            if !(a < x && x < b) {
                return Err(Error::InvalidArgument(format!(
                    "evaluation point {x} outside the interior region ({a}, {b})"
                )));
            }
            ((b - x).max(x - a), 0.0, b - x, x - a)
        }
        None => {
            let mut z = 1.0f64.max(2.0 * x.abs());
            let mut ok = false;
            for _ in 0..80 {
                let reach = u(x + z).abs().max(u(x - z).abs());
                if reach <= 1e-16 * u0.abs().max(1e-300) {
                    ok = true;
                    break;
                }
                z *= 2.0;
            }
            if !ok {
                return Err(Error::Quadrature(
                    "state does not decay; supply an interior region".into(),
                ));
            }
            let tail = 2.0 * phi(u0, p, 0.0) * quad::power_tail_integral(z, f64::INFINITY, ps);
            (z, tail, f64::INFINITY, f64::INFINITY)
        }
    };

    let masked = move |z: f64, side: f64, cap: f64| -> f64 {
        if z >= cap {
            0.0
        } else {
            phi(u0 - u(x + side * z), p, 0.0)
        }
    };
    let integrand = move |z: f64| {
        (masked(z, 1.0, right_cap) + masked(z, -1.0, left_cap)) * z.powf(-(1.0 + ps))
    };

    // locate sign changes of each difference branch
    let mut kinks: Vec<f64> = Vec::new();
    let z_lo = z_hi * 1e-14;
    let scan: Vec<f64> = (0..=1200)
        .map(|k| z_lo * (z_hi / z_lo).powf(k as f64 / 1200.0))
        .collect();
    for (side, cap) in [(1.0, right_cap), (-1.0, left_cap)] {
        let branch = |z: f64| u0 - u(x + side * z);
        let mut z_prev = scan[0];
        let mut prev = branch(z_prev);
        for &z in &scan[1..] {
            if z >= cap {
                break;
            }
            let cur = branch(z);
            if prev != 0.0 && cur != 0.0 && prev.signum() != cur.signum() {
                let (mut lo, mut hi) = (z_prev, z);
                let lo_sign = prev.signum();
                for _ in 0..90 {
                    let mid = 0.5 * (lo + hi);
                    if branch(mid).signum() == lo_sign {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                kinks.push(0.5 * (lo + hi));
            }
            if cur != 0.0 {
                prev = cur;
                z_prev = z;
            }
        }
    }

    // panel edges: geometric into the origin, graded into each kink
    let mut edges: Vec<f64> = Vec::new();
    let mut z = z_hi;
    for _ in 0..160 {
        edges.push(z);
        z *= 0.5;
    }
    edges.push(z);
    let floor = z;
    for &k in &kinks {
        if k <= floor || k >= z_hi {
            continue;
        }
        for j in 0..54 {
            let w = k * 0.5f64.powi(j);
            if k - w > floor {
                edges.push(k - w);
            }
            if k + w < z_hi {
                edges.push(k + w);
            }
        }
        edges.push(k);
    }
    if let Some((a, b)) = opts.interior {
        for cap in [b - x, x - a] {
            if cap > floor && cap < z_hi {
                edges.push(cap);
            }
        }
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup();

    let mut total = 0.0;
    for pair in edges.windows(2) {
        total += quad::integrate_gl16(&integrand, pair[0], pair[1]);
    }
    let value = 2.0 * (total + tail);
    if !value.is_finite() {
        return Err(Error::Quadrature(format!(
            "oracle integral not finite at x = {x}"
        )));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Domain;
    use crate::kernel::{assemble_weights, exterior_coefficients, ExteriorProfile, KernelSpec};

    fn setup(m: usize, p: f64, s: f64) -> (Domain, KernelWeights) {
        let d = Domain::build(-1.0, 1.0, 1, m).unwrap();
        let spec = KernelSpec::prototype(p, s).unwrap();
        let w = assemble_weights(&d, &spec).unwrap();
        (d, w)
    }

    #[test]
    fn constant_state_interior_only_vanishes() {
        let (_, w) = setup(16, 1.5, 0.5);
        let ctx = OperatorContext::interior_only(&w);
        let gf = GridFunction::new(vec![3.25; 16], 0.0).unwrap();
        let out = ctx.apply(&gf, 0.0).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_state_with_dirichlet_term() {
        // (L u)_i = 2 c^{p-1} E0_i for u = c with zero exterior datum
        let (_, w) = setup(16, 1.5, 0.5);
        let ctx = OperatorContext::new(&w);
        let c = 0.7;
        let gf = GridFunction::new(vec![c; 16], 0.0).unwrap();
        let out = ctx.apply(&gf, 0.0).unwrap();
        for i in 0..16 {
            let expect = 2.0 * c.powf(0.5) * w.exterior.total_mass(i);
            assert!((out.values[i] - expect).abs() < 1e-12 * expect);
            assert!(out.values[i] > 0.0);
        }
    }

    #[test]
    fn antisymmetry_under_negation() {
        let (_, w) = setup(24, 1.5, 0.5);
        let ctx = OperatorContext::new(&w);
        let vals: Vec<f64> = (0..24).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect();
        let gf = GridFunction::new(vals.clone(), 0.0).unwrap();
        let neg = GridFunction::new(vals.iter().map(|v| -v).collect(), 0.0).unwrap();
        let a = ctx.apply(&gf, 0.0).unwrap();
        let b = ctx.apply(&neg, 0.0).unwrap();
        for i in 0..24 {
            assert!((a.values[i] + b.values[i]).abs() < 1e-12 * a.values[i].abs().max(1e-12));
        }
    }

    #[test]
    fn homogeneity_degree_p_minus_one() {
        let (_, w) = setup(24, 1.6, 0.4);
        let ctx = OperatorContext::new(&w);
        let vals: Vec<f64> = (0..24).map(|i| (i as f64 * 0.7).sin().max(0.0)).collect();
        let gf = GridFunction::new(vals.clone(), 0.0).unwrap();
        let k = 3.7;
        let scaled = GridFunction::new(vals.iter().map(|v| k * v).collect(), 0.0).unwrap();
        let a = ctx.apply(&gf, 0.0).unwrap();
        let b = ctx.apply(&scaled, 0.0).unwrap();
        let factor = k.powf(0.6);
        for i in 0..24 {
            assert!(
                (b.values[i] - factor * a.values[i]).abs()
                    <= 1e-12 * a.values[i].abs().max(1e-12)
            );
        }
    }

    #[test]
    fn interior_mass_conservation() {
        // pairwise cancellation: sum_i h (L u)_i = 0 with exterior disabled
        let (d, w) = setup(32, 1.5, 0.5);
        let ctx = OperatorContext::interior_only(&w);
        let vals: Vec<f64> = (0..32).map(|i| (i as f64 * 1.3).cos()).collect();
        let gf = GridFunction::new(vals, 0.0).unwrap();
        let out = ctx.apply(&gf, 0.0).unwrap();
        let mass: f64 = out.values.iter().map(|v| v * d.cell_width()).sum();
        let scale: f64 = out.values.iter().map(|v| v.abs() * d.cell_width()).sum();
        assert!(mass.abs() <= 1e-12 * scale.max(1.0), "mass = {mass:e}");
    }

    #[test]
    fn two_point_toy_energy_and_gradient() {
        // u = (1, 0), single weight w, eps = 0: E = (2/p) h w, grad = 2 h w (1, -1)
        let d = Domain::build(0.0, 16.0, 1, 16).unwrap();
        let spec = KernelSpec::prototype(1.5, 0.5).unwrap();
        let mut kw = assemble_weights(&d, &spec).unwrap();
        // strip to a two-point coupling: zero all weights except (0,1)
        let keep = kw.at(0, 1);
        kw.w.iter_mut().for_each(|v| *v = 0.0);
        kw.w[1] = keep;
        kw.w[16] = keep;
        let ctx = OperatorContext::interior_only(&kw);
        let mut vals = vec![0.0; 16];
        vals[0] = 1.0;
        let gf = GridFunction::new(vals, 0.0).unwrap();
        let e = ctx.energy(&gf, 0.0).unwrap();
        let h = d.cell_width();
        assert!((e - 2.0 / 1.5 * h * keep).abs() < 1e-14);
        let lu = ctx.apply(&gf, 0.0).unwrap();
        assert!((h * lu.values[0] - 2.0 * h * keep).abs() < 1e-13);
        assert!((h * lu.values[1] + 2.0 * h * keep).abs() < 1e-13);
    }

    #[test]
    fn zero_energy_for_zero_state() {
        let (_, w) = setup(16, 1.5, 0.5);
        let ctx = OperatorContext::new(&w);
        let gf = GridFunction::zeros(16, 0.0);
        assert_eq!(ctx.energy(&gf, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn energy_gradient_matches_apply_and_finite_differences() {
        let (d, w) = setup(20, 1.5, 0.5);
        let eps = 1e-3;
        let ctx = OperatorContext::new(&w).with_epsilon(eps);
        let h = d.cell_width();
        let vals: Vec<f64> = (0..20).map(|i| 0.5 + 0.3 * (i as f64 * 0.9).sin()).collect();
        let gf = GridFunction::new(vals.clone(), 0.0).unwrap();
        let lu = ctx.apply(&gf, 0.0).unwrap();

        // directional derivative against central finite differences
        let dir: Vec<f64> = (0..20).map(|i| ((i * 13 % 7) as f64 - 3.0) / 3.0).collect();
        let step = 1e-6;
        let mut up = vals.clone();
        let mut dn = vals.clone();
        for i in 0..20 {
            up[i] += step * dir[i];
            dn[i] -= step * dir[i];
        }
        let ep = ctx.energy(&GridFunction::new(up, 0.0).unwrap(), 0.0).unwrap();
        let en = ctx.energy(&GridFunction::new(dn, 0.0).unwrap(), 0.0).unwrap();
        let fd = (ep - en) / (2.0 * step);
        let analytic: f64 = (0..20).map(|i| h * lu.values[i] * dir[i]).sum();
        assert!(
            (fd - analytic).abs() <= 1e-6 * analytic.abs().max(1e-8),
            "fd {fd} vs analytic {analytic}"
        );
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let (d, w) = setup(12, 1.5, 0.5);
        let eps = 1e-2;
        let ctx = OperatorContext::new(&w).with_epsilon(eps);
        let h = d.cell_width();
        let vals: Vec<f64> = (0..12).map(|i| (i as f64 * 0.31).cos() * 0.4 + 0.5).collect();
        let hess = ctx.energy_hessian(&vals, 0.0).unwrap();
        let step = 1e-7;
        for k in [0usize, 5, 11] {
            let mut up = vals.clone();
            let mut dn = vals.clone();
            up[k] += step;
            dn[k] -= step;
            let gu = ctx.apply(&GridFunction::new(up, 0.0).unwrap(), 0.0).unwrap();
            let gd = ctx.apply(&GridFunction::new(dn, 0.0).unwrap(), 0.0).unwrap();
            for i in 0..12 {
                let fd = h * (gu.values[i] - gd.values[i]) / (2.0 * step);
                assert!(
                    (hess[(i, k)] - fd).abs() <= 1e-5 * fd.abs().max(1e-6),
                    "H[{i},{k}] = {} vs fd {fd}",
                    hess[(i, k)]
                );
            }
        }
    }

    #[test]
    fn oracle_matches_linear_closed_form_at_p2() {
        // p = 2, s = 1/2, u = exp(-x^2): the operator at 0 equals 4 sqrt(pi)
        let u = |x: f64| (-x * x).exp();
        let got = reference_apply(&u, 0.0, 2.0, 0.5, ReferenceOptions::default()).unwrap();
        let exact = 4.0 * std::f64::consts::PI.sqrt();
        assert!((got - exact).abs() < 1e-8 * exact, "{got} vs {exact}");
    }

    #[test]
    fn oracle_matches_fourier_route_at_p2() {
        // independent route: (-Delta)^s exp(-x^2)(0) = 4^s Gamma(s+1/2)/sqrt(pi),
        // rescaled by the kernel normalization 2 / C(1,s),
        // C(1,s) = s 4^s Gamma(s+1/2) / (sqrt(pi) Gamma(1-s))
        use statrs::function::gamma::gamma;
        let s = 0.5;
        let u = |x: f64| (-x * x).exp();
        let frac_lap = 4f64.powf(s) * gamma(s + 0.5) / std::f64::consts::PI.sqrt();
        let c1s = s * 4f64.powf(s) * gamma(s + 0.5)
            / (std::f64::consts::PI.sqrt() * gamma(1.0 - s));
        let expect = 2.0 / c1s * frac_lap;
        let got = reference_apply(&u, 0.0, 2.0, s, ReferenceOptions::default()).unwrap();
        assert!((got - expect).abs() < 1e-4 * expect, "{got} vs {expect}");
    }

    #[test]
    fn oracle_trivial_cases() {
        let c = |_: f64| 2.0;
        let opts = ReferenceOptions {
            rel_tol: 1e-9,
            interior: Some((-1.0, 1.0)),
        };
        let got = reference_apply(&c, 0.1, 1.5, 0.5, opts).unwrap();
        assert!(got.abs() < 1e-12);

        let lin = |x: f64| x;
        let got = reference_apply(&lin, 0.0, 1.5, 0.5, opts).unwrap();
        assert!(got.abs() < 1e-10, "odd symmetry should cancel, got {got}");
    }

    #[test]
    fn time_modulated_weights_rescale_apply() {
        let d = Domain::build(-1.0, 1.0, 1, 16).unwrap();
        let spec = KernelSpec {
            p: 1.5,
            s: 0.5,
            c1: 1.0,
            c2: 2.0,
            multiplier: crate::kernel::Multiplier::TimeModulated {
                low: 1.0,
                high: 2.0,
                frequency: 0.25,
            },
        };
        let w = assemble_weights(&d, &spec).unwrap();
        let ctx = OperatorContext::new(&w);
        let vals: Vec<f64> = (0..16).map(|i| (i as f64 * 0.4).sin() + 1.0).collect();
        let gf = GridFunction::new(vals, 0.0).unwrap();
        let at0 = ctx.apply(&gf, 0.0).unwrap();
        let t = 1.0;
        let att = ctx.apply(&gf, t).unwrap();
        let ratio = w.time_factor(t) / w.time_factor(0.0);
        for i in 0..16 {
            assert!((att.values[i] - ratio * at0.values[i]).abs() < 1e-12 * at0.values[i].abs().max(1e-12));
        }
    }
}
