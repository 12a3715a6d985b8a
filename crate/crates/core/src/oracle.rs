//! Brute-force cross-checks: Ulam matrices and dense-grid operator application.
//!
//! Nothing here goes through [`PiecewiseFn`](crate::interval_fn::PiecewiseFn)
//! arithmetic or [`Ensemble::apply`]; only branch formulas and inverses are shared
//! with the main path.
//!
//! The Ulam entry `M[k][i]` is the average over cell `k` of the operator applied to
//! the indicator of cell `i`:
//! `(1/|C_k|) sum_Z int_{C_k ∩ T_Z(C_i ∩ Z ∩ X)} g(T_Z^{-1} y) dy`,
//! integrated by a composite midpoint rule in `y`.

use rayon::prelude::*;

use crate::error::{Result, RpfError};
use crate::random_map::{Branch, OpenMap};
use crate::stats::Estimate;
use crate::transfer::{Ensemble, Potential};

/// Midpoint nodes per cell overlap.
pub const QUADRATURE_NODES: usize = 32;

fn weight(pot: &Potential, sym: usize, br: &Branch, x: f64) -> f64 {
    match pot {
        Potential::Constant(c) => c.exp(),
        Potential::Geometric(t) => br.derivative(x).abs().powf(-t),
        Potential::LogPiecewise(phis) => phis[sym].eval(x).map(f64::exp).unwrap_or(0.0),
    }
}

/// Surviving pieces of `[lo, hi] ∩ domain(Z)`.
fn surviving(map: &OpenMap, br: &Branch, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let (d0, d1) = br.domain();
    let (u, v) = (lo.max(d0), hi.min(d1));
    if v <= u {
        return Vec::new();
    }
    map.survivors()
        .parts()
        .iter()
        .filter_map(|&(a, b)| {
            let (p, q) = (u.max(a), v.min(b));
            (q > p).then_some((p, q))
        })
        .collect()
}

/// Sparse Ulam matrix of one symbol, stored by source cell.
#[derive(Clone, Debug)]
pub struct UlamMatrix {
    pub cells: usize,
    pub base: (f64, f64),
    /// `columns[i]`: `(k, M[k][i])` with non-zero entries.
    pub columns: Vec<Vec<(usize, f64)>>,
}

impl UlamMatrix {
    pub fn entry(&self, k: usize, i: usize) -> f64 {
        self.columns[i].iter().filter(|e| e.0 == k).map(|e| e.1).sum()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.cells];
        for (i, col) in self.columns.iter().enumerate() {
            if v[i] != 0.0 {
                for &(k, m) in col {
                    w[k] += m * v[i];
                }
            }
        }
        w
    }
}

pub fn ulam_matrix(ens: &Ensemble, sym: usize, cells: usize) -> Result<UlamMatrix> {
    if cells < 2 {
        return Err(RpfError::input("need at least two cells"));
    }
    let map = ens.maps().get(sym).ok_or_else(|| RpfError::input(format!("unknown symbol {sym}")))?;
    let (a, b) = ens.base();
    let h = (b - a) / cells as f64;
    let cell_of = |y: f64| (((y - a) / h).floor().max(0.0) as usize).min(cells - 1);
    let columns = (0..cells)
        .into_par_iter()
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let mut col: Vec<(usize, f64)> = Vec::new();
            for br in map.branches() {
                for (u, v) in surviving(map, br, lo, hi) {
                    let (y0, y1) = (br.forward(u), br.forward(v));
                    let (y0, y1) = (y0.min(y1).max(a), y0.max(y1).min(b));
                    if y1 <= y0 {
                        continue;
                    }
                    for k in cell_of(y0)..=cell_of(y1) {
                        let (p, q) = (y0.max(a + k as f64 * h), y1.min(a + (k + 1) as f64 * h));
                        if q <= p {
                            continue;
                        }
                        let dy = (q - p) / QUADRATURE_NODES as f64;
                        let s: f64 = (0..QUADRATURE_NODES)
                            .map(|j| {
                                let x = br.inverse_clamped(p + (j as f64 + 0.5) * dy);
                                weight(ens.potential(), sym, br, x)
                            })
                            .sum();
                        col.push((k, s * dy / h));
                    }
                }
            }
            col.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(col.len());
            for (k, m) in col {
                match merged.last_mut() {
                    Some(last) if last.0 == k => last.1 += m,
                    _ => merged.push((k, m)),
                }
            }
            merged
        })
        .collect();
    Ok(UlamMatrix { cells, base: (a, b), columns })
}

/// One Ulam matrix per symbol.
pub fn ulam_matrices(ens: &Ensemble, cells: usize) -> Result<Vec<UlamMatrix>> {
    (0..ens.maps().len()).map(|s| ulam_matrix(ens, s, cells)).collect()
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// `(1/n) log |M_{w_{n-1}} ... M_{w_0} v|_1` averaged over base points spaced
/// `n + burn_in + 1` apart; `v` is uniform, pushed through `burn_in` earlier steps first.
pub fn oracle_lyapunov(
    ens: &Ensemble,
    mats: &[UlamMatrix],
    n: usize,
    k: usize,
    base: i64,
    burn_in: usize,
) -> Result<Estimate> {
    if n == 0 || k == 0 {
        return Err(RpfError::input("need n >= 1 and at least one base point"));
    }
    let spacing = (n + burn_in + 1) as i64;
    let samples = (0..k as i64)
        .into_par_iter()
        .map(|i| {
            let b = base + i * spacing;
            let mut v = vec![1.0; mats[0].cells];
            for s in ens.word(b - burn_in as i64, burn_in) {
                v = mats[s].apply(&v);
                let m = l1(&v);
                v.iter_mut().for_each(|x| *x /= m);
            }
            let mut acc = 0.0;
            for s in ens.word(b, n) {
                let before = l1(&v);
                v = mats[s].apply(&v);
                let m = l1(&v);
                if !(m > 0.0) {
                    return Err(RpfError::numerical("Ulam cocycle vanished"));
                }
                acc += (m / before).ln();
                v.iter_mut().for_each(|x| *x /= m);
            }
            Ok(acc / n as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// Pull-back leading vector at `fiber`, normalized to unit integral.
pub fn ulam_density(ens: &Ensemble, mats: &[UlamMatrix], fiber: i64, depth: usize) -> Vec<f64> {
    let cells = mats[0].cells;
    let h = (mats[0].base.1 - mats[0].base.0) / cells as f64;
    let mut v = vec![1.0; cells];
    for s in ens.word(fiber - depth as i64, depth) {
        v = mats[s].apply(&v);
        let m = l1(&v) * h;
        v.iter_mut().for_each(|x| *x /= m);
    }
    v
}

/// Uniform nodes `a + j (b - a) / (m - 1)`.
pub fn grid_nodes(base: (f64, f64), m: usize) -> Vec<f64> {
    (0..m).map(|j| base.0 + (base.1 - base.0) * j as f64 / (m - 1) as f64).collect()
}

/// Operator applied to dense samples on uniform nodes; values in between are linearly interpolated.
pub fn grid_apply(ens: &Ensemble, sym: usize, samples: &[f64]) -> Result<Vec<f64>> {
    let m = samples.len();
    if m < 2 {
        return Err(RpfError::input("need at least two samples"));
    }
    let map = ens.maps().get(sym).ok_or_else(|| RpfError::input(format!("unknown symbol {sym}")))?;
    let (a, b) = ens.base();
    let step = (b - a) / (m - 1) as f64;
    let interp = |x: f64| {
        let t = ((x - a) / step).clamp(0.0, (m - 1) as f64);
        let j = (t.floor() as usize).min(m - 2);
        let fr = t - j as f64;
        samples[j] * (1.0 - fr) + samples[j + 1] * fr
    };
    let hole = map.hole();
    Ok(grid_nodes((a, b), m)
        .par_iter()
        .map(|&y| {
            map.branches()
                .iter()
                .filter(|br| br.image().0 <= y && y <= br.image().1)
                .map(|br| {
                    let x = br.inverse_clamped(y);
                    if hole.parts().iter().any(|&(p, q)| p < x && x < q) {
                        0.0
                    } else {
                        weight(ens.potential(), sym, br, x) * interp(x)
                    }
                })
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_fn::{PiecewiseFn, Resolution};
    use crate::random_map::BranchFamily;
    use crate::transfer::tests::{affine, doubling_map};

    fn doubling(log_g: f64, holes: Vec<(f64, f64)>) -> Ensemble {
        Ensemble::single(doubling_map(holes), Potential::Constant(log_g)).unwrap()
    }

    #[test]
    fn two_cell_doubling_matrices() {
        for (log_g, val) in [(0.5f64.ln(), 0.5), (0.0, 1.0)] {
            let m = ulam_matrix(&doubling(log_g, vec![]), 0, 2).unwrap();
            for k in 0..2 {
                for i in 0..2 {
                    assert!((m.entry(k, i) - val).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn hole_cells_have_empty_columns() {
        let m = ulam_matrix(&doubling(0.0, vec![(0.25, 0.5)]), 0, 4).unwrap();
        assert!(m.columns[1].is_empty());
        assert!(m.columns.iter().enumerate().filter(|(i, _)| *i != 1).all(|(_, c)| !c.is_empty()));
    }

    #[test]
    fn geometric_weight_gives_stochastic_columns() {
        let map = OpenMap::new(
            (0.0, 1.0),
            vec![
                Branch::new((0.0, 0.5), BranchFamily::MannevillePomeau { gamma: 0.7 }).unwrap(),
                affine(0.5, 1.0, 2.0, -1.0),
            ],
            vec![],
        )
        .unwrap();
        let ens = Ensemble::single(map, Potential::Geometric(1.0)).unwrap();
        let m = ulam_matrix(&ens, 0, 64).unwrap();
        for col in &m.columns {
            let s: f64 = col.iter().map(|e| e.1).sum();
            assert!((s - 1.0).abs() < 1e-4, "{s}");
        }
    }

    #[test]
    fn doubling_oracle_exponent() {
        let ens = doubling(0.0, vec![]);
        let mats = ulam_matrices(&ens, 64).unwrap();
        let est = oracle_lyapunov(&ens, &mats, 20, 3, 0, 0).unwrap();
        assert!((est.mean - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn grid_apply_matches_piecewise_path() {
        let ens = doubling(0.3, vec![(0.1, 0.2)]);
        let f = PiecewiseFn::affine(0.0, 1.0, 0.7, 0.4);
        let nodes = grid_nodes((0.0, 1.0), 257);
        let samples: Vec<f64> = nodes.iter().map(|&x| f.eval(x).unwrap()).collect();
        let dense = grid_apply(&ens, 0, &samples).unwrap();
        let lf = ens.apply(0, &f).unwrap();
        // skip nodes on the image of hole endpoints, where the result jumps
        for (&y, &v) in nodes.iter().zip(&dense) {
            if [0.2, 0.4].iter().any(|&z| (y - z).abs() < 1e-9) {
                continue;
            }
            assert!((lf.eval(y).unwrap() - v).abs() < 1e-9, "{y}");
        }
    }

    #[test]
    fn grid_apply_converges_on_intermittent_map() {
        let map = OpenMap::new(
            (0.0, 1.0),
            vec![
                Branch::new((0.0, 0.5), BranchFamily::MannevillePomeau { gamma: 0.5 }).unwrap(),
                affine(0.5, 1.0, 2.0, -1.0),
            ],
            vec![],
        )
        .unwrap();
        let ens = Ensemble::single(map, Potential::Geometric(0.5)).unwrap().with_resolution(Resolution::with_nodes(1 << 14));
        let f = |x: f64| (3.0 * x).sin() + 2.0;
        let exact = ens.apply(0, &PiecewiseFn::from_fn(0.0, 1.0, ens.resolution(), f).unwrap()).unwrap();
        let err = |m: usize| {
            let nodes = grid_nodes((0.0, 1.0), m);
            let samples: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
            let dense = grid_apply(&ens, 0, &samples).unwrap();
            nodes.iter().zip(&dense).map(|(&y, &v)| (exact.eval(y).unwrap() - v).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(65), err(257));
        assert!(e2 < e1 && e2 < 1e-3, "{e1} {e2}");
    }
}
