//! Cones `C_a = { f > 0 : var(f) <= a Einf(f) }` and their Hilbert metric.
//!
//! `tau(f, h) = sup { l >= 0 : h - l f in C_a or h = l f }` and
//! `rho(f, h) = inf { m : m f - h in C_a or m f = h }`, so
//! `Theta(f, h) = log(rho / tau)`. The admissible `l` form an interval because
//! `C_a` is convex, so both bounds are found by bisection; `rho(f, h)` is
//! computed as `1 / tau(h, f)`.

use crate::error::{Result, RpfError};
use crate::interval_fn::PiecewiseFn;

const BISECT_REL_TOL: f64 = 1e-10;

/// Cone membership with its margin `a Einf(f) - var(f)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Membership {
    pub member: bool,
    pub margin: f64,
}

pub fn cone_member(f: &PiecewiseFn, a: f64) -> Membership {
    let inf = f.essinf();
    let margin = a * inf - f.variation();
    Membership { member: inf > 0.0 && margin >= -1e-12 * (1.0 + a * inf.abs()), margin }
}

fn check_a(a: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(RpfError::input(format!("cone parameter must be positive, got {a}")));
    }
    Ok(())
}

fn admissible(h: &PiecewiseFn, f: &PiecewiseFn, l: f64, a: f64) -> Result<bool> {
    let g = PiecewiseFn::combine(1.0, h, -l, f)?;
    let scale = h.sup_norm().max(l * f.sup_norm());
    if g.sup_norm() <= 1e-13 * scale {
        return Ok(true);
    }
    let inf = g.essinf();
    Ok(inf > 0.0 && g.variation() <= a * inf)
}

/// `sup { l : h - l f in C_a }`.
fn tau_one(f: &PiecewiseFn, h: &PiecewiseFn, a: f64) -> Result<f64> {
    let (lo_ratio, _) = PiecewiseFn::ratio_range(h, f)?;
    let mut hi = lo_ratio;
    if admissible(h, f, hi, a)? {
        return Ok(hi);
    }
    let hi0 = hi;
    let mut lo = 0.0;
    while hi - lo > BISECT_REL_TOL * hi {
        if hi < 1e-12 * hi0 {
            // boundary member: only l = 0 is admissible
            return Ok(0.0);
        }
        let mid = 0.5 * (lo + hi);
        if admissible(h, f, mid, a)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if lo == 0.0 { 0.0 } else { 0.5 * (lo + hi) })
}

/// `(tau, rho)` for `f, h` in `C_a`; `rho` is `+inf` when no multiple of `f` dominates `h`.
pub fn tau_rho(f: &PiecewiseFn, h: &PiecewiseFn, a: f64) -> Result<(f64, f64)> {
    check_a(a)?;
    for (name, g) in [("f", f), ("h", h)] {
        if !cone_member(g, a).member {
            return Err(RpfError::domain(format!("{name} is not in the cone C_{a}")));
        }
    }
    let tau = tau_one(f, h, a)?;
    let tau_rev = tau_one(h, f, a)?;
    let rho = if tau_rev > 0.0 { 1.0 / tau_rev } else { f64::INFINITY };
    Ok((tau, rho))
}

/// Hilbert projective distance in `C_a`.
pub fn theta(f: &PiecewiseFn, h: &PiecewiseFn, a: f64) -> Result<f64> {
    let (tau, rho) = tau_rho(f, h, a)?;
    if tau <= 0.0 || !rho.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok((rho / tau).ln().max(0.0))
}

/// Diameter bound `2 log((1 + g(a + 1)) / (1 - g))` of `C_{g a}` inside `C_a`.
pub fn diameter_bound(gamma: f64, a: f64) -> Result<f64> {
    check_a(a)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(RpfError::input(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    Ok(2.0 * ((1.0 + gamma * (a + 1.0)) / (1.0 - gamma)).ln())
}

/// Birkhoff contraction factor `tanh(delta / 4)`.
pub fn contraction_factor(delta: f64) -> f64 {
    (delta / 4.0).tanh()
}
