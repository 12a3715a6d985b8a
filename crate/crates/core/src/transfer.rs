//! Weighted transfer operators of random open interval maps.
//!
//! For a symbol `s` with map `T` and weight `g`,
//! `L f(y) = sum over survivor elements Z with y in T(Z) of (f g)(T_Z^{-1} y)`.
//! [`Ensemble::apply`] evaluates this on a [`PiecewiseFn`] exactly when every
//! contribution is affine (affine branch, constant weight, affine input, or a
//! constant input with constant weight) and samples the result otherwise.
//!
//! The number of breakpoints grows by at most a constant per step: every
//! breakpoint of `L f` is the image of a breakpoint of `f`, of the weight, or
//! of a survivor element endpoint.

use std::collections::HashMap;

use crate::driver::DriverSpec;
use crate::error::{Result, RpfError};
use crate::interval_fn::{dedup_sorted, IntervalSet, Piece, PiecewiseFn, Resolution, Side};
use crate::random_map::{
    branch_stats, check_word, survivor_partition, Branch, BranchFamily, OpenMap,
};

/// Enumerations above this many elements fall back to the window bound.
pub const CHAIN_CAP: u128 = 50_000;

/// Weight `g` attached to every symbol.
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    /// `log g` is the same constant for every symbol.
    Constant(f64),
    /// `g = |T'|^{-t}` on each branch.
    Geometric(f64),
    /// `log g` given per symbol as a piecewise function on the base.
    LogPiecewise(Vec<PiecewiseFn>),
}

/// Sup, inf and variation of one symbol's weight on the whole base.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightSummary {
    pub sup: f64,
    pub inf: f64,
    pub variation: f64,
}

/// A finite family of open maps, a potential and a driving system.
#[derive(Clone, Debug)]
pub struct Ensemble {
    base: (f64, f64),
    maps: Vec<OpenMap>,
    potential: Potential,
    driver: DriverSpec,
    res: Resolution,
    summaries: Vec<WeightSummary>,
}

#[derive(Clone, Copy, Debug)]
enum SegWeight {
    Const(f64),
    Geometric(f64),
    Log(usize),
}

#[derive(Clone, Copy, Debug)]
struct Segment {
    branch: usize,
    dom: (f64, f64),
    img: (f64, f64),
    f_piece: usize,
    weight: SegWeight,
}

impl Ensemble {
    pub fn new(
        maps: Vec<OpenMap>,
        potential: Potential,
        driver: DriverSpec,
        res: Resolution,
    ) -> Result<Self> {
        let symbols = driver.validate()?;
        if maps.is_empty() {
            return Err(RpfError::input("ensemble needs at least one map"));
        }
        if symbols > maps.len() {
            return Err(RpfError::input(format!(
                "driver emits {symbols} symbols but only {} maps are given",
                maps.len()
            )));
        }
        let base = maps[0].base();
        if maps.iter().any(|m| m.base() != base) {
            return Err(RpfError::input("maps live on different base intervals"));
        }
        match &potential {
            Potential::Constant(v) if !v.is_finite() => {
                return Err(RpfError::input("constant potential must be finite"));
            }
            Potential::Geometric(t) if !t.is_finite() => {
                return Err(RpfError::input("geometric exponent must be finite"));
            }
            Potential::LogPiecewise(phis) => {
                if phis.len() != maps.len() {
                    return Err(RpfError::input("need one log-weight function per map"));
                }
                let tol = 1e-12 * (base.1 - base.0);
                for phi in phis {
                    let (a, b) = phi.base();
                    if (a - base.0).abs() > tol || (b - base.1).abs() > tol {
                        return Err(RpfError::input("log-weight lives on a different base interval"));
                    }
                }
            }
            _ => {}
        }
        let mut ens = Ensemble { base, maps, potential, driver, res, summaries: Vec::new() };
        ens.summaries = (0..ens.maps.len())
            .map(|s| {
                let g = ens.weight_fn(s)?;
                Ok(WeightSummary { sup: g.esssup(), inf: g.essinf(), variation: g.variation() })
            })
            .collect::<Result<_>>()?;
        Ok(ens)
    }

    /// Deterministic ensemble built from a single map.
    pub fn single(map: OpenMap, potential: Potential) -> Result<Self> {
        let driver = DriverSpec::Iid { probabilities: vec![1.0], seed: 0 };
        Ensemble::new(vec![map], potential, driver, Resolution::default())
    }

    pub fn with_resolution(&self, res: Resolution) -> Self {
        Ensemble { res, ..self.clone() }
    }

    /// Same branches and weights, with the hole of every symbol replaced.
    pub fn with_holes(&self, holes: &[Vec<(f64, f64)>]) -> Result<Self> {
        if holes.len() != self.maps.len() {
            return Err(RpfError::input("need one hole list per map"));
        }
        let maps = self
            .maps
            .iter()
            .zip(holes)
            .map(|(m, h)| m.with_hole(h.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(maps, self.potential.clone(), self.driver.clone(), self.res)
    }

    pub fn base(&self) -> (f64, f64) {
        self.base
    }

    pub fn maps(&self) -> &[OpenMap] {
        &self.maps
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn driver(&self) -> &DriverSpec {
        &self.driver
    }

    pub fn resolution(&self) -> Resolution {
        self.res
    }

    pub fn weight_summary(&self, sym: usize) -> WeightSummary {
        self.summaries[sym]
    }

    pub fn symbol_at(&self, k: i64) -> usize {
        self.driver.symbol_at(k)
    }

    /// Symbols at fibers `start, ..., start + len - 1`.
    pub fn word(&self, start: i64, len: usize) -> Vec<usize> {
        self.driver.word(start, len)
    }

    pub fn constant(&self, c: f64) -> PiecewiseFn {
        PiecewiseFn::constant(self.base.0, self.base.1, c).with_resolution(self.res)
    }

    fn seg_weight(&self, sym: usize, br: &Branch, mid: f64) -> SegWeight {
        match &self.potential {
            Potential::Constant(v) => SegWeight::Const(v.exp()),
            Potential::Geometric(t) => match br.family() {
                BranchFamily::Affine { slope, .. } => SegWeight::Const(slope.abs().powf(-t)),
                _ => SegWeight::Geometric(*t),
            },
            Potential::LogPiecewise(phis) => {
                let phi = &phis[sym];
                let k = phi.piece_index_clamped(mid, Side::Right);
                match phi.pieces()[k].constant_value() {
                    Some(c) => SegWeight::Const(c.exp()),
                    None => SegWeight::Log(k),
                }
            }
        }
    }

    fn eval_weight(&self, sym: usize, br: &Branch, w: SegWeight, z: f64) -> f64 {
        match w {
            SegWeight::Const(c) => c,
            SegWeight::Geometric(t) => br.derivative(z).abs().powf(-t),
            SegWeight::Log(k) => match &self.potential {
                Potential::LogPiecewise(phis) => phis[sym].eval_piece(k, z).exp(),
                _ => unreachable!(),
            },
        }
    }

    /// One-sided weight of symbol `sym` at `x` on branch `b`.
    pub fn weight_at(&self, sym: usize, b: usize, x: f64, side: Side) -> f64 {
        let br = &self.maps[sym].branches()[b];
        match &self.potential {
            Potential::Constant(v) => v.exp(),
            Potential::Geometric(t) => br.derivative(x).abs().powf(-t),
            Potential::LogPiecewise(phis) => {
                let phi = &phis[sym];
                let k = phi.piece_index_clamped(x, side);
                phi.eval_piece(k, x).exp()
            }
        }
    }

    /// Breakpoints of the weight other than branch endpoints.
    fn weight_breaks(&self, sym: usize) -> &[f64] {
        match &self.potential {
            Potential::LogPiecewise(phis) => {
                let b = phis[sym].breakpoints();
                &b[1..b.len() - 1]
            }
            _ => &[],
        }
    }

    /// The weight of `sym` as a function on the base.
    pub fn weight_fn(&self, sym: usize) -> Result<PiecewiseFn> {
        let map = &self.maps[sym];
        let tol = self.res.merge_tol * (self.base.1 - self.base.0);
        let mut breaks: Vec<f64> = map.branches().iter().map(|b| b.domain().0).collect();
        breaks.push(self.base.1);
        breaks.extend_from_slice(self.weight_breaks(sym));
        breaks.sort_by(f64::total_cmp);
        dedup_sorted(&mut breaks, tol);
        let mut pieces = Vec::with_capacity(breaks.len() - 1);
        for w in breaks.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let b = map.branch_at(mid, true);
            let br = &map.branches()[b];
            let sw = self.seg_weight(sym, br, mid);
            pieces.push(match sw {
                SegWeight::Const(c) => Piece::constant(c),
                _ => {
                    let n = self.res.nodes_for(w[1] - w[0], self.base.1 - self.base.0);
                    Piece::Samples(
                        crate::interval_fn::node_positions(w[0], w[1], n)
                            .map(|x| self.eval_weight(sym, br, sw, x))
                            .collect(),
                    )
                }
            });
        }
        Ok(PiecewiseFn::new(breaks, pieces)?.with_resolution(self.res))
    }

    fn check_fn(&self, f: &PiecewiseFn) -> Result<()> {
        let (a, b) = f.base();
        let tol = 1e-12 * (self.base.1 - self.base.0);
        if (a - self.base.0).abs() > tol || (b - self.base.1).abs() > tol {
            return Err(RpfError::input("function lives on a different base interval"));
        }
        Ok(())
    }

    /// Transfer operator of symbol `sym` applied to `f`.
    pub fn apply(&self, sym: usize, f: &PiecewiseFn) -> Result<PiecewiseFn> {
        self.check_fn(f)?;
        let map = self.maps.get(sym).ok_or_else(|| RpfError::input(format!("unknown symbol {sym}")))?;
        let (a, b) = self.base;
        let tol = self.res.merge_tol * (b - a);
        let fb = f.breakpoints();
        let wb = self.weight_breaks(sym);
        let mut segs: Vec<Segment> = Vec::new();
        let mut cuts: Vec<f64> = Vec::new();
        for el in map.elements() {
            let br = &map.branches()[el.branch];
            cuts.clear();
            cuts.push(el.lo);
            for list in [fb, wb] {
                let s = list.partition_point(|&x| x <= el.lo + tol);
                let e = list.partition_point(|&x| x < el.hi - tol);
                if s < e {
                    cuts.extend_from_slice(&list[s..e]);
                }
            }
            cuts.push(el.hi);
            cuts.sort_by(f64::total_cmp);
            for w in cuts.windows(2) {
                let (u, v) = (w[0], w[1]);
                if v - u <= 0.0 {
                    continue;
                }
                let (yu, yv) = (br.forward(u), br.forward(v));
                let img = (yu.min(yv).max(a), yu.max(yv).min(b));
                if img.1 - img.0 <= tol {
                    continue;
                }
                let mid = 0.5 * (u + v);
                segs.push(Segment {
                    branch: el.branch,
                    dom: (u, v),
                    img,
                    f_piece: f.piece_index_clamped(mid, Side::Right),
                    weight: self.seg_weight(sym, br, mid),
                });
            }
        }
        let mut breaks: Vec<f64> = Vec::with_capacity(2 * segs.len() + 2);
        breaks.push(a);
        breaks.push(b);
        for s in &segs {
            breaks.push(s.img.0);
            breaks.push(s.img.1);
        }
        breaks.sort_by(f64::total_cmp);
        dedup_sorted(&mut breaks, tol);
        segs.sort_by(|x, y| x.img.0.total_cmp(&y.img.0));

        let mut pieces = Vec::with_capacity(breaks.len() - 1);
        let mut active: Vec<usize> = Vec::new();
        let mut next = 0;
        for w in breaks.windows(2) {
            let (p, q) = (w[0], w[1]);
            while next < segs.len() && segs[next].img.0 <= p + tol {
                active.push(next);
                next += 1;
            }
            active.retain(|&i| segs[i].img.1 >= q - tol);
            pieces.push(self.result_piece(map, f, &segs, &active, sym, p, q));
        }
        let mut out = PiecewiseFn::new(breaks, pieces)?.with_resolution(self.res);
        out.simplify();
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn result_piece(
        &self,
        map: &OpenMap,
        f: &PiecewiseFn,
        segs: &[Segment],
        active: &[usize],
        sym: usize,
        p: f64,
        q: f64,
    ) -> Piece {
        let mut slope = 0.0;
        let mut intercept = 0.0;
        let mut exact = true;
        for &i in active {
            let s = &segs[i];
            let br = &map.branches()[s.branch];
            match (&f.pieces()[s.f_piece], s.weight, br.family()) {
                (fp, SegWeight::Const(w), _) if fp.constant_value().is_some() => {
                    intercept += w * fp.constant_value().unwrap();
                }
                (
                    Piece::Affine { slope: fs, intercept: fc },
                    SegWeight::Const(w),
                    BranchFamily::Affine { slope: bs, intercept: bc },
                ) => {
                    slope += w * fs / bs;
                    intercept += w * (fc - fs * bc / bs);
                }
                _ => {
                    exact = false;
                    break;
                }
            }
        }
        if exact {
            return Piece::Affine { slope, intercept };
        }
        let n = self.res.nodes_for(q - p, self.base.1 - self.base.0);
        let vals = crate::interval_fn::node_positions(p, q, n)
            .map(|y| {
                active
                    .iter()
                    .map(|&i| {
                        let s = &segs[i];
                        let br = &map.branches()[s.branch];
                        let z = br.inverse_clamped(y).clamp(s.dom.0, s.dom.1);
                        f.eval_piece(s.f_piece, z) * self.eval_weight(sym, br, s.weight, z)
                    })
                    .sum()
            })
            .collect();
        Piece::Samples(vals)
    }

    /// `L^{(n)} f` along an explicit word (left fold of [`Ensemble::apply`]).
    pub fn apply_symbols(&self, word: &[usize], f: &PiecewiseFn) -> Result<PiecewiseFn> {
        let mut g = f.clone();
        for &s in word {
            g = self.apply(s, &g)?;
        }
        Ok(g)
    }

    /// `L^{(n)}_k f` along the driving orbit starting at fiber `k`.
    pub fn apply_word(&self, k: i64, n: usize, f: &PiecewiseFn) -> Result<PiecewiseFn> {
        self.apply_symbols(&self.word(k, n), f)
    }

    /// Pointwise `L^{(n)} f(y)` by summing over the level-`n` survivor partition.
    ///
    /// Exponential in `n`; meant as a cross-check of [`Ensemble::apply_symbols`].
    pub fn chain_sum_at(&self, word: &[usize], f: &PiecewiseFn, y: f64) -> Result<f64> {
        let part = survivor_partition(&self.maps, word, CHAIN_CAP as usize)?;
        let mut total = 0.0;
        for e in &part.elements {
            if y < e.image.0 || y > e.image.1 || e.image.1 - e.image.0 <= 0.0 {
                continue;
            }
            let mut z = y;
            for s in (0..word.len()).rev() {
                z = self.maps[word[s]].branches()[e.chain[s]].inverse_clamped(z);
            }
            let z = z.clamp(e.lo, e.hi);
            let mut val = f.eval_piece(f.piece_index_clamped(z, Side::Right), z);
            let mut x = z;
            for (s, &sym) in word.iter().enumerate() {
                let br = &self.maps[sym].branches()[e.chain[s]];
                val *= self.weight_at(sym, e.chain[s], x, Side::Right);
                x = br.forward(x);
            }
            total += val;
        }
        Ok(total)
    }

    /// Koopman composition `f o T` for symbol `sym` on the whole base.
    pub fn koopman(&self, sym: usize, f: &PiecewiseFn) -> Result<PiecewiseFn> {
        self.check_fn(f)?;
        let map = &self.maps[sym];
        let (a, b) = self.base;
        let tol = self.res.merge_tol * (b - a);
        let mut breaks = vec![a, b];
        for br in map.branches() {
            let (lo, hi) = br.domain();
            breaks.push(lo);
            breaks.push(hi);
            let (ilo, ihi) = br.image();
            for &y in f.breakpoints() {
                if y > ilo + tol && y < ihi - tol {
                    breaks.push(br.inverse_clamped(y));
                }
            }
        }
        breaks.sort_by(f64::total_cmp);
        dedup_sorted(&mut breaks, tol);
        let mut pieces = Vec::with_capacity(breaks.len() - 1);
        for w in breaks.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let br = &map.branches()[map.branch_at(mid, true)];
            let k = f.piece_index_clamped(br.forward(mid).clamp(a, b), Side::Right);
            pieces.push(match (&f.pieces()[k], br.family()) {
                (fp, _) if fp.constant_value().is_some() => fp.clone(),
                (Piece::Affine { slope, intercept }, BranchFamily::Affine { slope: s, intercept: c }) => {
                    Piece::Affine { slope: slope * s, intercept: slope * c + intercept }
                }
                _ => {
                    let n = self.res.nodes_for(w[1] - w[0], b - a);
                    Piece::Samples(
                        crate::interval_fn::node_positions(w[0], w[1], n)
                            .map(|x| f.eval_piece(k, br.forward(x).clamp(a, b)))
                            .collect(),
                    )
                }
            });
        }
        let mut out = PiecewiseFn::new(breaks, pieces)?.with_resolution(self.res);
        out.simplify();
        Ok(out)
    }

    /// Sup-product, survivor infimum and relative variation sum of the weight cocycle.
    pub fn weight_bounds(&self, word: &[usize]) -> Result<WeightBounds> {
        check_word(&self.maps, word)?;
        let mut log_sup = 0.0;
        let mut s_tilde = 0.0;
        for &s in word {
            let w = self.summaries[s];
            log_sup += w.sup.ln();
            s_tilde += w.variation / w.sup;
        }
        let (log_inf, method) = match &self.potential {
            Potential::Constant(v) => (v * word.len() as f64, InfMethod::Exact),
            _ => {
                let total = branch_stats(&self.maps, word)?.total;
                if total <= CHAIN_CAP {
                    (self.chain_grid_log_inf(word)?, InfMethod::ChainGrid)
                } else {
                    (self.window_log_inf(word), InfMethod::WindowBound)
                }
            }
        };
        Ok(WeightBounds { log_sup_prod: log_sup, log_inf_on_survivor: log_inf, s_tilde, method })
    }

    fn chain_grid_log_inf(&self, word: &[usize]) -> Result<f64> {
        let part = survivor_partition(&self.maps, word, CHAIN_CAP as usize)?;
        let nodes = self.res.min_piece_nodes.max(2);
        let mut best = f64::INFINITY;
        for e in &part.elements {
            for (j, x0) in crate::interval_fn::node_positions(e.lo, e.hi, nodes).enumerate() {
                let mut side = if j == 0 { Side::Right } else { Side::Left };
                let mut x = x0;
                let mut acc = 0.0;
                for (s, &sym) in word.iter().enumerate() {
                    let br = &self.maps[sym].branches()[e.chain[s]];
                    acc += self.weight_at(sym, e.chain[s], x, side).ln();
                    x = br.forward(x).clamp(self.base.0, self.base.1);
                    if !br.is_increasing() {
                        side = side.flip();
                    }
                }
                best = best.min(acc);
            }
        }
        Ok(best)
    }

    fn log_inf_on(&self, sym: usize, b: usize, u: f64, v: f64) -> f64 {
        let br = &self.maps[sym].branches()[b];
        match &self.potential {
            Potential::Constant(c) => *c,
            // |T'| is monotone on every family, so endpoints suffice
            Potential::Geometric(t) => {
                let d = br.derivative(u).abs().max(br.derivative(v).abs());
                if *t >= 0.0 {
                    -t * d.ln()
                } else {
                    -t * br.derivative(u).abs().min(br.derivative(v).abs()).ln()
                }
            }
            Potential::LogPiecewise(phis) => phis[sym].essinf_on(&IntervalSet::interval(u, v)),
        }
    }

    /// Lower bound for the survivor infimum: minimizes window by window.
    fn window_log_inf(&self, word: &[usize]) -> f64 {
        let mut memo = HashMap::new();
        self.window_rec(word, 0, self.base, &mut memo)
    }

    fn window_rec(
        &self,
        word: &[usize],
        k: usize,
        window: (f64, f64),
        memo: &mut HashMap<(usize, i64, i64), f64>,
    ) -> f64 {
        if k == word.len() {
            return 0.0;
        }
        let (a, b) = self.base;
        let q = |x: f64| (((x - a) / (b - a)) * 2f64.powi(40)).round() as i64;
        let key = (k, q(window.0), q(window.1));
        if let Some(v) = memo.get(&key) {
            return *v;
        }
        let map = &self.maps[word[k]];
        let tol = 1e-12 * (b - a);
        let mut best = f64::INFINITY;
        for el in map.elements() {
            let u = window.0.max(el.lo);
            let v = window.1.min(el.hi);
            if v - u <= tol {
                continue;
            }
            let br = &map.branches()[el.branch];
            let (y0, y1) = (br.forward(u), br.forward(v));
            let next = (y0.min(y1).max(a), y0.max(y1).min(b));
            let here = self.log_inf_on(word[k], el.branch, u, v);
            best = best.min(here + self.window_rec(word, k + 1, next, memo));
        }
        memo.insert(key, best);
        best
    }

    /// Lasota–Yorke constants `c` and `d` of the word.
    pub fn ly_constants(&self, word: &[usize]) -> Result<LyConstants> {
        let stats = branch_stats(&self.maps, word)?;
        if stats.full == 0 {
            return Err(RpfError::assumption("word has no full survivor element"));
        }
        let wb = self.weight_bounds(word)?;
        if !wb.log_inf_on_survivor.is_finite() {
            return Err(RpfError::assumption("weight product vanishes on the survivor set"));
        }
        let log_d = 3f64.ln()
            + (1.0 + wb.s_tilde).ln()
            + (1.0 + 2.0 * stats.partial_run as f64).ln()
            + wb.log_sup_prod
            - wb.log_inf_on_survivor;
        let log_c = log_d - (stats.full as f64).ln();
        Ok(LyConstants {
            n: word.len(),
            log_c,
            log_d,
            c: log_c.exp(),
            d: log_d.exp(),
            full_count: stats.full,
            partial_run: stats.partial_run,
            bounds: wb,
        })
    }
}

/// How the survivor infimum of the weight cocycle was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum InfMethod {
    /// Constant weights: the product is constant.
    Exact,
    /// Minimum over a node grid on every element of the survivor partition.
    ChainGrid,
    /// Product of per-window infima; a lower bound.
    WindowBound,
}

/// Weight-cocycle bounds of a word.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct WeightBounds {
    pub log_sup_prod: f64,
    pub log_inf_on_survivor: f64,
    /// Sum of `var(g) / sup(g)` over the word.
    pub s_tilde: f64,
    pub method: InfMethod,
}

/// Lasota–Yorke constants `var(L f) <= c var(f) + d Einf(L f)`-type bound data.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct LyConstants {
    pub n: usize,
    pub log_c: f64,
    pub log_d: f64,
    pub c: f64,
    pub d: f64,
    pub full_count: u128,
    pub partial_run: u128,
    pub bounds: WeightBounds,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::random_map::Branch;
    use proptest::prelude::*;

    pub fn affine(lo: f64, hi: f64, slope: f64, intercept: f64) -> Branch {
        Branch::new((lo, hi), BranchFamily::Affine { slope, intercept }).unwrap()
    }

    pub fn doubling_map(holes: Vec<(f64, f64)>) -> OpenMap {
        OpenMap::new((0.0, 1.0), vec![affine(0.0, 0.5, 2.0, 0.0), affine(0.5, 1.0, 2.0, -1.0)], holes)
            .unwrap()
    }

    fn nonlinear_map() -> OpenMap {
        let branches = vec![
            affine(0.0, 0.1, -10.0, 1.0),
            Branch::new((0.1, 0.3), BranchFamily::Quadratic { coef: 1.0 / 0.06, r0: 0.0, r1: 0.1 }).unwrap(),
            affine(0.3, 0.5, 2.0, -0.4),
            Branch::new((0.5, 1.0), BranchFamily::Power { coef: 0.5f64.powf(-1.5), center: 0.5, exponent: 1.5 })
                .unwrap(),
        ];
        OpenMap::new((0.0, 1.0), branches, vec![(0.2, 0.25)]).unwrap()
    }

    fn mp_map() -> OpenMap {
        let branches = vec![
            Branch::new((0.0, 0.5), BranchFamily::MannevillePomeau { gamma: 0.5 }).unwrap(),
            affine(0.5, 1.0, 2.0, -1.0),
        ];
        OpenMap::new((0.0, 1.0), branches, vec![]).unwrap()
    }

    #[test]
    fn doubling_constants() {
        let ens = Ensemble::single(doubling_map(vec![]), Potential::Constant(0.0)).unwrap();
        let l1 = ens.apply(0, &ens.constant(1.0)).unwrap();
        assert_eq!(l1.pieces().len(), 1);
        assert_eq!(l1.essinf(), 2.0);
        assert_eq!(l1.esssup(), 2.0);
    }

    #[test]
    fn doubling_half_weight_on_identity() {
        let ens = Ensemble::single(doubling_map(vec![]), Potential::Constant(0.5f64.ln())).unwrap();
        let lx = ens.apply(0, &PiecewiseFn::affine(0.0, 1.0, 1.0, 0.0)).unwrap();
        for y in [0.0, 0.3, 0.77, 1.0] {
            assert!((lx.eval(y).unwrap() - (0.5 * y + 0.25)).abs() < 1e-15);
        }
    }

    #[test]
    fn hole_removes_mass() {
        let ens = Ensemble::single(doubling_map(vec![(0.25, 0.375)]), Potential::Constant(0.0)).unwrap();
        let l1 = ens.apply(0, &ens.constant(1.0)).unwrap();
        assert_eq!(l1.eval(0.6).unwrap(), 1.0);
        assert_eq!(l1.eval(0.3).unwrap(), 2.0);
        assert!((l1.integrate() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn constant_weight_keeps_step_functions_exact() {
        let ens = Ensemble::single(nonlinear_map(), Potential::Constant(0.0)).unwrap();
        let f = ens.apply_symbols(&[0; 6], &ens.constant(1.0)).unwrap();
        assert!(f.pieces().iter().all(|p| p.constant_value().is_some()));
    }

    #[test]
    fn geometric_one_preserves_lebesgue_mass() {
        let ens = Ensemble::single(mp_map(), Potential::Geometric(1.0)).unwrap();
        let f = PiecewiseFn::affine(0.0, 1.0, 1.0, 0.5);
        let lf = ens.apply(0, &f).unwrap();
        assert!((lf.integrate() - f.integrate()).abs() < 1e-6);
    }

    #[test]
    fn apply_agrees_with_chain_sum() {
        let maps = vec![nonlinear_map(), doubling_map(vec![(0.6, 0.65)])];
        let driver = DriverSpec::Iid { probabilities: vec![0.5, 0.5], seed: 1 };
        let phi = vec![PiecewiseFn::affine(0.0, 1.0, 0.3, 0.0), PiecewiseFn::constant(0.0, 1.0, 0.1)];
        let ens = Ensemble::new(maps, Potential::LogPiecewise(phi), driver, Resolution::with_nodes(1 << 14))
            .unwrap();
        let f = PiecewiseFn::affine(0.0, 1.0, -0.5, 1.0);
        let word = [0, 1, 0];
        let lf = ens.apply_symbols(&word, &f).unwrap();
        for k in 0..40 {
            let y = (k as f64 + 0.37) / 40.0;
            let direct = ens.chain_sum_at(&word, &f, y).unwrap();
            assert!((lf.eval(y).unwrap() - direct).abs() < 1e-6 * direct.abs().max(1.0), "y = {y}");
        }
    }

    #[test]
    fn koopman_intertwines_with_transfer() {
        // L((f o T) h) = f L(h)
        let ens = Ensemble::single(nonlinear_map(), Potential::Constant(0.0))
            .unwrap()
            .with_resolution(Resolution::with_nodes(1 << 14));
        let f = PiecewiseFn::affine(0.0, 1.0, 1.0, 0.2);
        let h = PiecewiseFn::affine(0.0, 1.0, -0.3, 1.0);
        let lhs = ens.apply(0, &PiecewiseFn::pointwise_mul(&ens.koopman(0, &f).unwrap(), &h).unwrap()).unwrap();
        let rhs = PiecewiseFn::pointwise_mul(&f, &ens.apply(0, &h).unwrap()).unwrap();
        assert!(PiecewiseFn::sup_abs_diff(&lhs, &rhs).unwrap() < 1e-6);
    }

    #[test]
    fn closed_doubling_constants() {
        let ens = Ensemble::single(doubling_map(vec![]), Potential::Constant(0.0)).unwrap();
        let ly = ens.ly_constants(&[0]).unwrap();
        assert_eq!((ly.full_count, ly.partial_run), (2, 0));
        assert!((ly.d - 3.0).abs() < 1e-12);
        assert!((ly.c - 1.5).abs() < 1e-12);
    }

    #[test]
    fn intermittent_weight_bounds_at_gamma_one() {
        let branches = vec![
            Branch::new((0.0, 0.5), BranchFamily::MannevillePomeau { gamma: 1.0 }).unwrap(),
            affine(0.5, 1.0, 2.0, -1.0),
        ];
        let map = OpenMap::new((0.0, 1.0), branches, vec![]).unwrap();
        let ens = Ensemble::single(map, Potential::Geometric(1.0)).unwrap();
        let wb = ens.weight_bounds(&[0]).unwrap();
        assert!(wb.log_sup_prod.abs() < 1e-12);
        assert!((wb.log_inf_on_survivor + 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn window_bound_is_below_chain_grid() {
        let ens = Ensemble::single(mp_map(), Potential::Geometric(0.7)).unwrap();
        let word = [0; 5];
        assert!(ens.window_log_inf(&word) <= ens.chain_grid_log_inf(&word).unwrap() + 1e-12);
    }

    fn arb_step() -> impl Strategy<Value = PiecewiseFn> {
        prop::collection::vec(0.0f64..3.0, 4).prop_map(|v| {
            PiecewiseFn::new(
                vec![0.0, 0.2, 0.45, 0.8, 1.0],
                v.iter().map(|&c| Piece::Affine { slope: c - 1.0, intercept: c + 1.0 }).collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn transfer_is_positive(f in arb_step()) {
            let ens = Ensemble::single(nonlinear_map(), Potential::Constant(0.3)).unwrap();
            prop_assert!(ens.apply(0, &f).unwrap().essinf() >= -1e-12);
        }

        #[test]
        fn transfer_is_linear(f in arb_step(), g in arb_step(), a in -2.0f64..2.0) {
            let ens = Ensemble::single(doubling_map(vec![(0.1, 0.2)]), Potential::Constant(-0.2)).unwrap();
            let lhs = ens.apply(0, &PiecewiseFn::combine(a, &f, 1.0, &g).unwrap()).unwrap();
            let rhs = PiecewiseFn::combine(a, &ens.apply(0, &f).unwrap(), 1.0, &ens.apply(0, &g).unwrap()).unwrap();
            prop_assert!(PiecewiseFn::sup_abs_diff(&lhs, &rhs).unwrap() < 1e-12);
        }

        #[test]
        fn geometric_one_is_lebesgue_dual(f in arb_step()) {
            let holes = vec![(0.55, 0.6)];
            let ens = Ensemble::single(doubling_map(holes.clone()), Potential::Geometric(1.0)).unwrap();
            let x = IntervalSet::complement_within(0.0, 1.0, &IntervalSet::from_intervals(holes));
            let on_x: f64 = x.parts().iter().map(|&(a, b)| f.integrate_on(a, b)).sum();
            prop_assert!((ens.apply(0, &f).unwrap().integrate() - on_x).abs() < 1e-12);
        }
    }
}
