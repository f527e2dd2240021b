//! Scalar quantities the estimates are phrased in: exponent bookkeeping,
//! nonlocal tails, perturbation terms, and windowed masses/suprema.
//!
//! Temporal suprema, infima and integrals are taken over stored snapshots
//! inside the requested window (the stepper densifies the schedule near
//! extinction so this discretization is controlled); every estimate report
//! records the snapshot count it saw.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{windowed_mass, BallWindow, GridFunction, SignPart};
use crate::kernel::ExteriorProfile;
use crate::quad;
use crate::stepper::Trajectory;

/// Critical/structural exponents for dimension `n`, growth `p`, order `s`
/// and integrability `r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub n: u32,
    pub p: f64,
    pub s: f64,
    pub r: f64,
    /// `lambda_r = N(p-2) + r p s`
    pub lambda_r: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    /// critical growth `p_c = 2N/(N+2s)`
    pub p_c: f64,
    /// Sobolev exponent `Np/(N-ps)`, undefined when `N <= ps`
    pub p_star_s: Option<f64>,
    /// extinction-norm exponent `q = N(2-p)/(ps)`
    pub q_ext: f64,
    pub regime: Regime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `p < p_c`
    Subcritical,
    /// `p >= p_c` but `lambda_1 <= 0`
    Supercritical,
    /// `p > 2N/(N+s)`, equivalently `lambda_1 > 0`
    RestrictedSupercritical,
}

/// `lambda_r = N(p-2) + r p s`.
pub fn lambda(n: u32, p: f64, s: f64, r: f64) -> f64 {
    n as f64 * (p - 2.0) + r * p * s
}

pub fn compute_exponents(n: u32, p: f64, s: f64, r: f64) -> Result<Exponents> {
    if n < 1 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    if !(p > 1.0 && p < 2.0) || !(s > 0.0 && s < 1.0) || !(r >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "exponents require p in (1,2), s in (0,1), r >= 1; got ({p}, {s}, {r})"
        )));
    }
    let nf = n as f64;
    let ps = p * s;
    let p_c = 2.0 * nf / (nf + 2.0 * s);
    let lambda_1 = lambda(n, p, s, 1.0);
    let exps = Exponents {
        n,
        p,
        s,
        r,
        lambda_r: lambda(n, p, s, r),
        lambda_1,
        lambda_2: lambda(n, p, s, 2.0),
        p_c,
        p_star_s: if nf > ps { Some(nf * p / (nf - ps)) } else { None },
        q_ext: nf * (2.0 - p) / ps,
        regime: if p < p_c {
            Regime::Subcritical
        } else if lambda_1 > 0.0 {
            Regime::RestrictedSupercritical
        } else {
            Regime::Supercritical
        },
    };
    Ok(exps)
}

fn part_value(v: f64, part: SignPart) -> f64 {
    match part {
        SignPart::Positive => v.max(0.0),
        SignPart::Negative => (-v).max(0.0),
        SignPart::Absolute => v.abs(),
    }
}

/// Nonlocal tail
/// `sup_{t1<tau<t2} [rho^{ps} int_{|y-x0|>rho} |u_part|^{p-1} |y-x0|^{-(N+ps)} dy]^{1/(p-1)}`
/// of a trajectory together with its exterior datum.
pub fn tail(traj: &Trajectory, window: &BallWindow, part: SignPart) -> Result<f64> {
    tail_mapped(traj, window, &|v| part_value(v, part))
}

/// Tail of `map(u)` for a nonnegative pointwise map (level shifts and sign
/// parts); the map is applied to grid values and to the exterior datum.
///
/// The integral splits at the computational box: midpoint quadrature over
/// grid cells outside the ball, closed form or panel quadrature beyond the
/// box. Both parts are itemized by [`tail_parts_mapped`].
pub fn tail_mapped<F: Fn(f64) -> f64>(
    traj: &Trajectory,
    window: &BallWindow,
    map: &F,
) -> Result<f64> {
    Ok(tail_parts_mapped(traj, window, map)?.value)
}

/// Itemized tail evaluation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TailParts {
    pub value: f64,
    /// supremum over snapshots of the grid (inside-box) integral
    pub sup_grid_part: f64,
    /// exterior-profile (beyond-box) integral at the supremum snapshot
    pub exterior_part: f64,
    pub snapshot_count: usize,
}

pub fn tail_parts_mapped<F: Fn(f64) -> f64>(
    traj: &Trajectory,
    window: &BallWindow,
    map: &F,
) -> Result<TailParts> {
    let domain = traj.domain();
    let p = traj.problem.kernel.p;
    let ps = traj.problem.kernel.ps();
    let (x0, rho) = (window.x0, window.rho);
    if !(rho > 0.0) {
        return Err(Error::Window(format!("tail radius must be positive, got {rho}")));
    }
    let idx = traj.window_indices(window.t1, window.t2);
    if idx.is_empty() {
        return Err(Error::Window(format!(
            "no snapshots inside the window ({}, {})",
            window.t1, window.t2
        )));
    }
    let h = domain.cell_measure();
    let outside = domain.ball_complement_indices(x0, rho)?;

    // beyond-box part: time independent (profiles are static)
    let exterior_part = exterior_tail_integral(
        &traj.problem.exterior,
        domain.a,
        domain.b,
        x0,
        rho,
        p,
        ps,
        map,
    )?;

    let mut sup_total = f64::NEG_INFINITY;
    let mut sup_grid = 0.0;
    for &k in &idx {
        let snap = &traj.snapshots[k];
        let mut grid_part = 0.0;
        for &i in &outside {
            let dist = (domain.center(i) - x0).abs();
            grid_part += map(snap.values[i]).powf(p - 1.0) * dist.powf(-(1.0 + ps)) * h;
        }
        if grid_part + exterior_part > sup_total {
            sup_total = grid_part + exterior_part;
            sup_grid = grid_part;
        }
    }
    let value = (rho.powf(ps) * sup_total).powf(1.0 / (p - 1.0));
    Ok(TailParts {
        value,
        sup_grid_part: sup_grid,
        exterior_part,
        snapshot_count: idx.len(),
    })
}

/// `int over {y outside (a,b)} ∩ {|y-x0| > rho} of map(g(y))^{p-1} |y-x0|^{-(1+ps)} dy`.
#[allow(clippy::too_many_arguments)]
fn exterior_tail_integral<F: Fn(f64) -> f64>(
    profile: &ExteriorProfile,
    a: f64,
    b: f64,
    x0: f64,
    rho: f64,
    p: f64,
    ps: f64,
    map: &F,
) -> Result<f64> {
    let left_edge = a.min(x0 - rho);
    let right_edge = b.max(x0 + rho);
    match profile {
        ExteriorProfile::Zero => {
            if map(0.0) == 0.0 {
                return Ok(0.0);
            }
            let c = map(0.0).powf(p - 1.0);
            return Ok(c
                * (quad::power_tail_integral(x0 - left_edge, f64::INFINITY, ps)
                    + quad::power_tail_integral(right_edge - x0, f64::INFINITY, ps)));
        }
        ExteriorProfile::Constant { value } => {
            let c = map(*value).powf(p - 1.0);
            return Ok(c
                * (quad::power_tail_integral(x0 - left_edge, f64::INFINITY, ps)
                    + quad::power_tail_integral(right_edge - x0, f64::INFINITY, ps)));
        }
        _ => {}
    }
    let f = |y: f64| map(profile.value(y)).powf(p - 1.0);
    let f_inf = profile
        .limit_at_infinity()
        .map(|g| map(g).powf(p - 1.0))
        .unwrap_or(0.0);
    let left = quad::half_line_weighted(&f, x0, left_edge, -1.0, ps, f_inf, 1e-10)?;
    let right = quad::half_line_weighted(&f, x0, right_edge, 1.0, ps, f_inf, 1e-10)?;
    Ok(left + right)
}

/// Which branch the max selector of a perturbation term took.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxBranch {
    One,
    Tail,
}

/// Perturbative term
/// `(t/rho^{ps})^{1/(2-p)} max{1, (t/rho^{ps})^{(1-p)/(2-p)} Tail^{p-1}}`
/// with its components retained for reconstruction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PerturbationTerm {
    pub value: f64,
    pub time_ratio_power: f64,
    pub tail_factor: f64,
    pub max_selector_branch: MaxBranch,
}

pub fn perturbation(t: f64, rho: f64, p: f64, s: f64, tail_value: f64) -> Result<PerturbationTerm> {
    if !(t > 0.0) || !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "perturbation requires t > 0 and rho > 0, got ({t}, {rho})"
        )));
    }
    let ratio = t / rho.powf(p * s);
    let time_ratio_power = ratio.powf(1.0 / (2.0 - p));
    let tail_factor = ratio.powf((1.0 - p) / (2.0 - p)) * tail_value.powf(p - 1.0);
    let (sel, branch) = if tail_factor > 1.0 {
        (tail_factor, MaxBranch::Tail)
    } else {
        (1.0, MaxBranch::One)
    };
    Ok(PerturbationTerm {
        value: time_ratio_power * sel,
        time_ratio_power,
        tail_factor,
        max_selector_branch: branch,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    Sup,
    Inf,
}

/// Supremum or infimum over snapshots in `[t1, t2]` of the signed mass
/// `int_{B_rho(x0)} u dx`.
pub fn mass_window(
    traj: &Trajectory,
    x0: f64,
    rho: f64,
    t1: f64,
    t2: f64,
    mode: WindowMode,
) -> Result<f64> {
    let idx = traj.window_indices(t1, t2);
    if idx.is_empty() {
        return Err(Error::Window(format!("no snapshots inside ({t1}, {t2})")));
    }
    let ball = traj.domain().ball_indices(x0, rho)?;
    let masses = idx
        .iter()
        .map(|&k| windowed_mass(traj.domain(), &traj.snapshots[k], &ball));
    Ok(match mode {
        WindowMode::Sup => masses.fold(f64::NEG_INFINITY, f64::max),
        WindowMode::Inf => masses.fold(f64::INFINITY, f64::min),
    })
}

/// Supremum of `u` (or `|u|`) over `B_rho(x0) x [t1, t2]`.
pub fn sup_cylinder(
    traj: &Trajectory,
    x0: f64,
    rho: f64,
    t1: f64,
    t2: f64,
    absolute: bool,
) -> Result<f64> {
    let idx = traj.window_indices(t1, t2);
    if idx.is_empty() {
        return Err(Error::Window(format!("no snapshots inside ({t1}, {t2})")));
    }
    let ball = traj.domain().ball_indices(x0, rho)?;
    if ball.is_empty() {
        return Err(Error::Window(format!(
            "ball of radius {rho} at {x0} contains no cell centers"
        )));
    }
    let mut sup = f64::NEG_INFINITY;
    for &k in &idx {
        for &i in &ball {
            let v = traj.snapshots[k].values[i];
            sup = sup.max(if absolute { v.abs() } else { v });
        }
    }
    Ok(sup)
}

/// Trapezoidal integral over snapshot times inside `[t1, t2]` of a snapshot
/// functional; returns `(integral, t_first, t_last, snapshot_count)`.
pub fn time_integral<F: Fn(&GridFunction) -> f64>(
    traj: &Trajectory,
    t1: f64,
    t2: f64,
    f: F,
) -> Result<(f64, f64, f64, usize)> {
    let idx = traj.window_indices(t1, t2);
    if idx.is_empty() {
        return Err(Error::Window(format!("no snapshots inside ({t1}, {t2})")));
    }
    let vals: Vec<(f64, f64)> = idx
        .iter()
        .map(|&k| (traj.snapshots[k].time, f(&traj.snapshots[k])))
        .collect();
    let mut acc = 0.0;
    for w in vals.windows(2) {
        acc += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
    }
    Ok((acc, vals[0].0, vals[vals.len() - 1].0, vals.len()))
}
