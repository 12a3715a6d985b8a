//! Nested hole families and escape rates.
//!
//! For holes `H^{e'} ⊆ H^e` the survivor mass `nu^{e'}_w(X^e_{w,n})` equals
//! `nu^{e'}_{s^n w}(L^{e,(n)}_w 1) / nu^{e'}_{s^n w}(L^{e',(n)}_w 1)`, because the
//! `e'`-operator applied to the indicator of `X^e_{w,n}` is the `e`-operator applied
//! to `1`. This is the main path; summing a tabulated distribution function over
//! the level-`n` survivor partition is kept as a cross-check for small `n`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RpfError};
use crate::interval_fn::IntervalSet;
use crate::random_map::{branch_stats, survivor_partition};
use crate::rpf::{lyapunov_exponent, ConformalFunctional, LyapunovEstimate, NuTable, RpfParams};
use crate::stats::{line_fit, LineFit};
use crate::transfer::Ensemble;

/// Holes indexed by a finite grid of `eps` values starting at `0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleFamily {
    pub grid: Vec<f64>,
    /// `holes[i][s]`: open intervals removed from symbol `s` at `grid[i]`.
    pub holes: Vec<Vec<Vec<(f64, f64)>>>,
}

impl HoleFamily {
    /// Checks the grid and the nesting `H^{e'} ⊆ H^e` for `e' < e`.
    pub fn validate(&self, symbols: usize) -> Result<()> {
        if self.grid.is_empty() || self.grid[0] != 0.0 || self.grid.len() != self.holes.len() {
            return Err(RpfError::input("hole grid must start at 0 with one hole list per point"));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(RpfError::input("hole grid must be strictly increasing"));
        }
        if self.holes.iter().any(|h| h.len() != symbols) {
            return Err(RpfError::input("need one hole list per symbol at every grid point"));
        }
        if self.holes[0].iter().any(|h| !h.is_empty()) {
            return Err(RpfError::input("holes at eps = 0 must be empty"));
        }
        for (i, w) in self.holes.windows(2).enumerate() {
            for s in 0..symbols {
                let small = IntervalSet::from_intervals(w[0][s].clone());
                let big = IntervalSet::from_intervals(w[1][s].clone());
                if !small.is_subset_of(&big, 1e-12) {
                    return Err(RpfError::input(format!(
                        "holes are not nested between eps = {} and eps = {} (symbol {s})",
                        self.grid[i],
                        self.grid[i + 1]
                    )));
                }
            }
        }
        Ok(())
    }

    /// The ensemble with the holes of grid point `i`.
    pub fn ensemble(&self, ens: &Ensemble, i: usize) -> Result<Ensemble> {
        ens.with_holes(&self.holes[i])
    }
}

fn check_nested(small: &Ensemble, big: &Ensemble) -> Result<()> {
    if small.maps().len() != big.maps().len() {
        return Err(RpfError::input("ensembles have different symbol sets"));
    }
    for (a, b) in small.maps().iter().zip(big.maps()) {
        if !a.hole().is_subset_of(b.hole(), 1e-12) {
            return Err(RpfError::input("holes are not nested"));
        }
    }
    Ok(())
}

/// `nu^{e'}_w(X^e_{w,n})` for `n = 1..=n_max`; `inner` carries `H^{e'}`, `outer` carries `H^e`.
pub fn survivor_masses(
    inner: &Ensemble,
    outer: &Ensemble,
    fiber: i64,
    n_max: usize,
    params: &RpfParams,
) -> Result<Vec<f64>> {
    check_nested(inner, outer)?;
    let word = inner.word(fiber, n_max);
    let mut open = inner.constant(1.0);
    let mut closed = inner.constant(1.0);
    let mut states = Vec::with_capacity(n_max);
    for &s in &word {
        closed = inner.apply(s, &closed)?;
        open = outer.apply(s, &open)?;
        let e = closed.essinf();
        if !(e > 0.0) {
            return Err(RpfError::numerical("survivor iterate vanished"));
        }
        closed = closed.scale(1.0 / e);
        open = open.scale(1.0 / e);
        states.push((open.clone(), closed.clone()));
    }
    states
        .par_iter()
        .enumerate()
        .map(|(i, (o, c))| {
            let mut nu = ConformalFunctional::new(inner, fiber + i as i64 + 1, params);
            Ok(nu.eval(o)?.value / nu.eval(c)?.value)
        })
        .collect()
}

/// `nu_w(X^e_{w,n})` by summing table masses over the level-`n` survivor partition of `outer`.
pub fn survivor_mass_from_table(outer: &Ensemble, fiber: i64, n: usize, table: &NuTable) -> Result<f64> {
    let part = survivor_partition(outer.maps(), &outer.word(fiber, n), 1_000_000)?;
    Ok(part.elements.iter().map(|e| table.mass(e.lo, e.hi)).sum())
}

/// Escape rate fitted on the upper half of the `n` range.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EscapeFit {
    pub masses: Vec<f64>,
    pub fit: LineFit,
    pub rate: f64,
}

pub fn fit_escape(masses: &[f64]) -> EscapeFit {
    let n = masses.len();
    let from = n / 2;
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        (from..n).map(|i| ((i + 1) as f64, masses[i].ln())).unzip();
    let fit = line_fit(&xs, &ys);
    EscapeFit { masses: masses.to_vec(), rate: -fit.slope, fit }
}

/// One row of the `eps` table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsRow {
    pub eps: f64,
    pub lyapunov: LyapunovEstimate,
    /// One-step `(b_f, xi)` per symbol.
    pub branch_counts: Vec<(u128, u128)>,
    /// Against the previous grid point: `(Lambda^{e'} - Lambda^e, fitted escape rate, residual)`.
    pub escape: Option<(f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsTable {
    pub rows: Vec<EpsRow>,
    /// Largest increase of `Lambda^e` along the grid, in standard errors (0 when monotone).
    pub worst_increase: f64,
    /// Smallest `b_f` and largest `xi` over all grid points and symbols.
    pub uniform_bounds: (u128, u128),
}

/// `Lambda^e` on the grid, its monotonicity, and the escape-rate identity between neighbours.
pub fn lambda_vs_epsilon(
    ens: &Ensemble,
    family: &HoleFamily,
    n: usize,
    k: usize,
    base: i64,
    burn_in: usize,
    params: &RpfParams,
) -> Result<EpsTable> {
    family.validate(ens.maps().len())?;
    let ensembles = (0..family.grid.len()).map(|i| family.ensemble(ens, i)).collect::<Result<Vec<_>>>()?;
    let lyap = ensembles
        .par_iter()
        .map(|e| lyapunov_exponent(e, n, k, base, burn_in))
        .collect::<Result<Vec<_>>>()?;
    let fits = (1..ensembles.len())
        .into_par_iter()
        .map(|i| Ok(fit_escape(&survivor_masses(&ensembles[i - 1], &ensembles[i], base, n, params)?)))
        .collect::<Result<Vec<_>>>()?;
    let counts = ensembles
        .iter()
        .map(|e| {
            (0..e.maps().len())
                .map(|s| branch_stats(e.maps(), &[s]).map(|b| (b.full, b.partial_run)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let uniform_bounds = counts.iter().flatten().fold((u128::MAX, 0), |(b, x), &(bf, xi)| (b.min(bf), x.max(xi)));
    let mut rows = Vec::new();
    let mut worst_increase: f64 = 0.0;
    for (i, (l, branch_counts)) in lyap.into_iter().zip(counts).enumerate() {
        let escape = if i == 0 {
            None
        } else {
            let prev = &rows.last().map(|r: &EpsRow| r.lyapunov.estimate).unwrap();
            let diff = prev.mean - l.estimate.mean;
            let se = prev.stderr.hypot(l.estimate.stderr);
            if diff < -1e-12 {
                worst_increase = worst_increase.max(if se > 0.0 { -diff / se } else { f64::INFINITY });
            }
            let rate = fits[i - 1].rate;
            Some((diff, rate, diff - rate))
        };
        rows.push(EpsRow { eps: family.grid[i], lyapunov: l, branch_counts, escape });
    }
    Ok(EpsTable { rows, worst_increase, uniform_bounds })
}
