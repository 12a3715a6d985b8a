//! Piecewise functions of bounded variation on a compact interval.
//!
//! A [`PiecewiseFn`] stores finitely many breakpoints and one [`Piece`] per
//! subinterval. Pieces are either affine (kept exact) or uniformly sampled and
//! linearly interpolated. Values at breakpoints are not stored: every query is
//! one-sided, so the object always denotes the representative of minimal
//! variation, and variation is the polyline variation plus the jumps.
//!
//! Essential infima and suprema are taken over sets of positive length. The
//! essential infimum over an empty set is `0`.

use crate::error::{Result, RpfError};

/// Side from which a one-sided limit is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Sampling density used when a piece cannot be kept affine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolution {
    /// Nodes per unit of base length (prorated per piece).
    pub nodes: usize,
    /// Lower bound on nodes per sampled piece (endpoints included).
    pub min_piece_nodes: usize,
    /// Breakpoints closer than `merge_tol * (B - A)` are merged.
    pub merge_tol: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution { nodes: 4096, min_piece_nodes: 8, merge_tol: 1e-12 }
    }
}

impl Resolution {
    pub fn with_nodes(nodes: usize) -> Self {
        Resolution { nodes, ..Resolution::default() }
    }

    /// Node count for a sampled piece of length `len` on a base of length `width`.
    pub fn nodes_for(&self, len: f64, width: f64) -> usize {
        let prorated = (self.nodes as f64 * len / width).ceil() as usize + 1;
        prorated.max(self.min_piece_nodes).max(2)
    }

    fn max(self, other: Resolution) -> Resolution {
        Resolution {
            nodes: self.nodes.max(other.nodes),
            min_piece_nodes: self.min_piece_nodes.max(other.min_piece_nodes),
            merge_tol: self.merge_tol.min(other.merge_tol),
        }
    }
}

/// One piece of a [`PiecewiseFn`].
#[derive(Clone, Debug, PartialEq)]
pub enum Piece {
    /// `slope * x + intercept` in the global coordinate.
    Affine { slope: f64, intercept: f64 },
    /// Values at uniformly spaced nodes including both piece endpoints.
    Samples(Vec<f64>),
}

impl Piece {
    pub fn constant(c: f64) -> Piece {
        Piece::Affine { slope: 0.0, intercept: c }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Piece::Affine { .. })
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Piece::Affine { slope, intercept } if *slope == 0.0 => Some(*intercept),
            _ => None,
        }
    }
}

/// Finite union of closed intervals, sorted and disjoint.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct IntervalSet {
    parts: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet { parts: Vec::new() }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        if hi > lo {
            IntervalSet { parts: vec![(lo, hi)] }
        } else {
            IntervalSet::empty()
        }
    }

    /// Sorts and merges overlapping or touching intervals; drops empty ones.
    pub fn from_intervals(mut v: Vec<(f64, f64)>) -> Self {
        v.retain(|&(a, b)| b > a);
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut parts: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            match parts.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => parts.push((a, b)),
            }
        }
        IntervalSet { parts }
    }

    /// `[lo, hi]` with the given (open) holes removed.
    pub fn complement_within(lo: f64, hi: f64, holes: &IntervalSet) -> Self {
        let mut parts = Vec::new();
        let mut cur = lo;
        for &(a, b) in &holes.parts {
            if b <= cur || a >= hi {
                continue;
            }
            if a > cur {
                parts.push((cur, a.min(hi)));
            }
            cur = cur.max(b);
        }
        if cur < hi {
            parts.push((cur, hi));
        }
        IntervalSet { parts }
    }

    pub fn parts(&self) -> &[(f64, f64)] {
        &self.parts
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.parts.iter().map(|(a, b)| b - a).sum()
    }

    /// Length of the overlap with `[lo, hi]`.
    pub fn overlap(&self, lo: f64, hi: f64) -> f64 {
        self.parts.iter().map(|&(a, b)| (b.min(hi) - a.max(lo)).max(0.0)).sum()
    }

    /// True when every part of `self` lies inside some part of `other`.
    pub fn is_subset_of(&self, other: &IntervalSet, tol: f64) -> bool {
        self.parts.iter().all(|&(a, b)| {
            other.parts.iter().any(|&(c, d)| c <= a + tol && b <= d + tol)
        })
    }
}

/// Bounded-variation function on `[A, B]`, piecewise affine or sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseFn {
    breaks: Vec<f64>,
    pieces: Vec<Piece>,
    res: Resolution,
}

fn interp(vals: &[f64], lo: f64, hi: f64, x: f64) -> f64 {
    let n = vals.len();
    let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (t.floor() as usize).min(n - 2);
    let fr = t - i as f64;
    vals[i] * (1.0 - fr) + vals[i + 1] * fr
}

/// Sorted union of two breakpoint lists, merging points closer than `tol`.
pub(crate) fn merge_sorted(a: &[f64], b: &[f64], tol: f64) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    all.sort_by(f64::total_cmp);
    dedup_sorted(&mut all, tol);
    all
}

pub(crate) fn dedup_sorted(v: &mut Vec<f64>, tol: f64) {
    if v.is_empty() {
        return;
    }
    let last = *v.last().unwrap();
    let mut out: Vec<f64> = Vec::with_capacity(v.len());
    for &x in v.iter() {
        match out.last() {
            Some(&p) if x - p <= tol => {}
            _ => out.push(x),
        }
    }
    // keep the true right endpoint
    if let Some(l) = out.last_mut() {
        *l = last;
    }
    *v = out;
}

impl PiecewiseFn {
    /// Builds a function from explicit breakpoints and pieces.
    pub fn new(breaks: Vec<f64>, pieces: Vec<Piece>) -> Result<Self> {
        if breaks.len() < 2 {
            return Err(RpfError::input("need at least two breakpoints"));
        }
        if pieces.len() != breaks.len() - 1 {
            return Err(RpfError::input("piece count must be breakpoint count minus one"));
        }
        if breaks.iter().any(|b| !b.is_finite()) || breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(RpfError::input("breakpoints must be finite and strictly increasing"));
        }
        for p in &pieces {
            match p {
                Piece::Affine { slope, intercept } => {
                    if !slope.is_finite() || !intercept.is_finite() {
                        return Err(RpfError::numerical("non-finite affine coefficient"));
                    }
                }
                Piece::Samples(v) => {
                    if v.len() < 2 {
                        return Err(RpfError::input("sampled piece needs at least two nodes"));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(RpfError::numerical("non-finite sample value"));
                    }
                }
            }
        }
        Ok(PiecewiseFn { breaks, pieces, res: Resolution::default() })
    }

    pub fn constant(a: f64, b: f64, c: f64) -> Self {
        PiecewiseFn { breaks: vec![a, b], pieces: vec![Piece::constant(c)], res: Resolution::default() }
    }

    pub fn affine(a: f64, b: f64, slope: f64, intercept: f64) -> Self {
        PiecewiseFn {
            breaks: vec![a, b],
            pieces: vec![Piece::Affine { slope, intercept }],
            res: Resolution::default(),
        }
    }

    /// Indicator of `[lo, hi] ∩ [a, b]`.
    pub fn indicator(a: f64, b: f64, lo: f64, hi: f64) -> Result<Self> {
        let lo = lo.max(a);
        let hi = hi.min(b);
        if hi <= lo {
            return Ok(PiecewiseFn::constant(a, b, 0.0));
        }
        let mut breaks = vec![a];
        let mut pieces = Vec::new();
        if lo > a {
            breaks.push(lo);
            pieces.push(Piece::constant(0.0));
        }
        pieces.push(Piece::constant(1.0));
        if hi < b {
            breaks.push(hi);
            pieces.push(Piece::constant(0.0));
        }
        breaks.push(b);
        PiecewiseFn::new(breaks, pieces)
    }

    /// Samples `f(piece, x)` on every piece between the given breakpoints.
    pub fn sample_pieces(
        breaks: Vec<f64>,
        res: Resolution,
        f: impl Fn(usize, f64) -> f64,
    ) -> Result<Self> {
        if breaks.len() < 2 {
            return Err(RpfError::input("need at least two breakpoints"));
        }
        let width = breaks[breaks.len() - 1] - breaks[0];
        let mut pieces = Vec::with_capacity(breaks.len() - 1);
        for (i, w) in breaks.windows(2).enumerate() {
            let n = res.nodes_for(w[1] - w[0], width);
            let h = (w[1] - w[0]) / (n - 1) as f64;
            let vals = (0..n)
                .map(|j| f(i, if j + 1 == n { w[1] } else { w[0] + j as f64 * h }))
                .collect();
            pieces.push(Piece::Samples(vals));
        }
        Ok(PiecewiseFn::new(breaks, pieces)?.with_resolution(res))
    }

    /// Samples a function with no interior breakpoints.
    pub fn from_fn(a: f64, b: f64, res: Resolution, f: impl Fn(f64) -> f64) -> Result<Self> {
        PiecewiseFn::sample_pieces(vec![a, b], res, |_, x| f(x))
    }

    pub fn with_resolution(mut self, res: Resolution) -> Self {
        self.res = res;
        self
    }

    pub fn resolution(&self) -> Resolution {
        self.res
    }

    pub fn base(&self) -> (f64, f64) {
        (self.breaks[0], self.breaks[self.breaks.len() - 1])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn piece_range(&self, i: usize) -> (f64, f64) {
        (self.breaks[i], self.breaks[i + 1])
    }

    /// Number of stored values (affine pieces count two).
    pub fn size(&self) -> usize {
        self.pieces
            .iter()
            .map(|p| match p {
                Piece::Affine { .. } => 2,
                Piece::Samples(v) => v.len(),
            })
            .sum()
    }

    pub(crate) fn tol(&self) -> f64 {
        let (a, b) = self.base();
        self.res.merge_tol * (b - a)
    }

    /// Index of the piece used for the one-sided limit at `x`.
    pub fn piece_index(&self, x: f64, side: Side) -> Result<usize> {
        let (a, b) = self.base();
        let tol = self.tol();
        if !(x >= a - tol && x <= b + tol) {
            return Err(RpfError::domain(format!("{x} outside [{a}, {b}]")));
        }
        Ok(self.piece_index_clamped(x, side))
    }

    pub(crate) fn piece_index_clamped(&self, x: f64, side: Side) -> usize {
        let n = self.pieces.len();
        let pp = match side {
            Side::Right => self.breaks.partition_point(|&b| b <= x),
            Side::Left => self.breaks.partition_point(|&b| b < x),
        };
        pp.saturating_sub(1).min(n - 1)
    }

    /// Value of piece `i` at `x`, with `x` clamped into the piece.
    pub fn eval_piece(&self, i: usize, x: f64) -> f64 {
        let (lo, hi) = self.piece_range(i);
        let x = x.clamp(lo, hi);
        match &self.pieces[i] {
            Piece::Affine { slope, intercept } => slope * x + intercept,
            Piece::Samples(v) => interp(v, lo, hi, x),
        }
    }

    /// One-sided limit at `x`.
    pub fn eval_one_sided(&self, x: f64, side: Side) -> Result<f64> {
        let i = self.piece_index(x, side)?;
        Ok(self.eval_piece(i, x))
    }

    /// Right limit (left limit at the right endpoint).
    pub fn eval(&self, x: f64) -> Result<f64> {
        self.eval_one_sided(x, Side::Right)
    }

    /// (min, max, variation) of piece `i` restricted to `[u, v]`.
    fn piece_stats(&self, i: usize, u: f64, v: f64) -> (f64, f64, f64) {
        let (lo, hi) = self.piece_range(i);
        match &self.pieces[i] {
            Piece::Affine { slope, intercept } => {
                let fu = slope * u + intercept;
                let fv = slope * v + intercept;
                (fu.min(fv), fu.max(fv), (fv - fu).abs())
            }
            Piece::Samples(vals) => {
                let n = vals.len();
                let scale = (n - 1) as f64 / (hi - lo);
                let tu = ((u - lo) * scale).clamp(0.0, (n - 1) as f64);
                let tv = ((v - lo) * scale).clamp(0.0, (n - 1) as f64);
                let first = tu.floor() as usize + 1;
                let last = if tv.ceil() as usize >= 1 { tv.ceil() as usize - 1 } else { 0 };
                let mut prev = interp(vals, lo, hi, u);
                let (mut mn, mut mx, mut var) = (prev, prev, 0.0);
                let mut visit = |y: f64| {
                    mn = mn.min(y);
                    mx = mx.max(y);
                    var += (y - prev).abs();
                    prev = y;
                };
                if first <= last && first < n {
                    for &y in &vals[first..=last.min(n - 1)] {
                        visit(y);
                    }
                }
                visit(interp(vals, lo, hi, v));
                (mn, mx, var)
            }
        }
    }

    /// Pieces overlapping `[s, t]` in positive length, with the clipped range.
    fn overlapping(&self, s: f64, t: f64) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let start = self.piece_index_clamped(s, Side::Right);
        (start..self.pieces.len()).map_while(move |i| {
            let (lo, hi) = self.piece_range(i);
            if lo >= t {
                None
            } else {
                Some((i, lo.max(s), hi.min(t)))
            }
        })
        .filter(|&(_, u, v)| v > u)
    }

    /// Variation of the minimal representative over a union of closed intervals.
    pub fn variation_on(&self, set: &IntervalSet) -> f64 {
        let mut total = 0.0;
        for &(s, t) in set.parts() {
            let mut prev: Option<(usize, f64)> = None;
            for (i, u, v) in self.overlapping(s, t) {
                if let Some((j, b)) = prev {
                    if j + 1 == i {
                        total += (self.eval_piece(i, b) - self.eval_piece(j, b)).abs();
                    }
                }
                total += self.piece_stats(i, u, v).2;
                prev = Some((i, v));
            }
        }
        total
    }

    pub fn variation(&self) -> f64 {
        let (a, b) = self.base();
        self.variation_on(&IntervalSet::interval(a, b))
    }

    /// Essential infimum over `set`; `0` when `set` has no positive-length overlap.
    pub fn essinf_on(&self, set: &IntervalSet) -> f64 {
        let mut best = f64::INFINITY;
        for &(s, t) in set.parts() {
            for (i, u, v) in self.overlapping(s, t) {
                best = best.min(self.piece_stats(i, u, v).0);
            }
        }
        if best.is_finite() {
            best
        } else {
            0.0
        }
    }

    /// Essential supremum over `set`; `0` when `set` has no positive-length overlap.
    pub fn esssup_on(&self, set: &IntervalSet) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for &(s, t) in set.parts() {
            for (i, u, v) in self.overlapping(s, t) {
                best = best.max(self.piece_stats(i, u, v).1);
            }
        }
        if best.is_finite() {
            best
        } else {
            0.0
        }
    }

    pub fn essinf(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.pieces.len() {
            let (lo, hi) = self.piece_range(i);
            best = best.min(self.piece_stats(i, lo, hi).0);
        }
        best
    }

    pub fn esssup(&self) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.pieces.len() {
            let (lo, hi) = self.piece_range(i);
            best = best.max(self.piece_stats(i, lo, hi).1);
        }
        best
    }

    pub fn sup_norm(&self) -> f64 {
        self.essinf().abs().max(self.esssup().abs())
    }

    /// Lebesgue integral over the base interval.
    pub fn integrate(&self) -> f64 {
        let (a, b) = self.base();
        self.integrate_on(a, b)
    }

    /// Lebesgue integral over `[lo, hi]`.
    pub fn integrate_on(&self, lo: f64, hi: f64) -> f64 {
        let mut total = 0.0;
        for (i, u, v) in self.overlapping(lo, hi) {
            total += match &self.pieces[i] {
                Piece::Affine { slope, intercept } => {
                    0.5 * slope * (v * v - u * u) + intercept * (v - u)
                }
                Piece::Samples(vals) => {
                    let (plo, phi) = self.piece_range(i);
                    let n = vals.len();
                    let h = (phi - plo) / (n - 1) as f64;
                    if u <= plo && v >= phi {
                        let inner: f64 = vals[1..n - 1].iter().sum();
                        h * (inner + 0.5 * (vals[0] + vals[n - 1]))
                    } else {
                        // trapezoid over the clipped polyline
                        let mut pts = vec![(u, interp(vals, plo, phi, u))];
                        for (j, &y) in vals.iter().enumerate() {
                            let x = plo + j as f64 * h;
                            if x > u && x < v {
                                pts.push((x, y));
                            }
                        }
                        pts.push((v, interp(vals, plo, phi, v)));
                        pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
                    }
                }
            };
        }
        total
    }

    /// Multiplies every value by `c`.
    pub fn scale(&self, c: f64) -> Self {
        self.map_affine(c, 0.0)
    }

    /// Adds the constant `c`.
    pub fn add_const(&self, c: f64) -> Self {
        self.map_affine(1.0, c)
    }

    fn map_affine(&self, m: f64, c: f64) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|p| match p {
                Piece::Affine { slope, intercept } => {
                    Piece::Affine { slope: m * slope, intercept: m * intercept + c }
                }
                Piece::Samples(v) => Piece::Samples(v.iter().map(|y| m * y + c).collect()),
            })
            .collect();
        PiecewiseFn { breaks: self.breaks.clone(), pieces, res: self.res }
    }

    /// Applies `op` to values; constant pieces stay constant, others are sampled.
    pub fn map_values(&self, op: impl Fn(f64) -> f64) -> Result<Self> {
        let (a, b) = self.base();
        let mut pieces = Vec::with_capacity(self.pieces.len());
        for (i, p) in self.pieces.iter().enumerate() {
            let (lo, hi) = self.piece_range(i);
            pieces.push(match p {
                Piece::Affine { slope, intercept } if *slope == 0.0 => Piece::constant(op(*intercept)),
                Piece::Samples(v) => Piece::Samples(v.iter().map(|&y| op(y)).collect()),
                Piece::Affine { .. } => {
                    let n = self.res.nodes_for(hi - lo, b - a);
                    Piece::Samples(node_positions(lo, hi, n).map(|x| op(self.eval_piece(i, x))).collect())
                }
            });
        }
        Ok(PiecewiseFn::new(self.breaks.clone(), pieces)?.with_resolution(self.res))
    }

    fn check_base(&self, other: &PiecewiseFn) -> Result<()> {
        let (a, b) = self.base();
        let (c, d) = other.base();
        let tol = self.tol().max(other.tol());
        if (a - c).abs() > tol || (b - d).abs() > tol {
            return Err(RpfError::input("functions live on different base intervals"));
        }
        Ok(())
    }

    /// Visits the common refinement of `self` and `other`.
    fn refine_with<F>(&self, other: &PiecewiseFn, mut piece: F) -> Result<PiecewiseFn>
    where
        F: FnMut(usize, usize, f64, f64, usize) -> Piece,
    {
        self.check_base(other)?;
        let res = self.res.max(other.res);
        let tol = self.tol().min(other.tol());
        let breaks = merge_sorted(&self.breaks, &other.breaks, tol);
        let (a, b) = self.base();
        let mut pieces = Vec::with_capacity(breaks.len() - 1);
        for w in breaks.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let i = self.piece_index_clamped(mid, Side::Right);
            let j = other.piece_index_clamped(mid, Side::Right);
            // reuse an existing node grid when the piece is unchanged
            let own = |f: &PiecewiseFn, k: usize| match &f.pieces[k] {
                Piece::Samples(v) => {
                    let (lo, hi) = f.piece_range(k);
                    if (lo - w[0]).abs() <= tol && (hi - w[1]).abs() <= tol {
                        Some(v.len())
                    } else {
                        None
                    }
                }
                _ => None,
            };
            let n = match (own(self, i), own(other, j)) {
                (Some(p), Some(q)) => p.max(q),
                (Some(p), None) | (None, Some(p)) => p,
                (None, None) => res.nodes_for(w[1] - w[0], b - a),
            };
            pieces.push(piece(i, j, w[0], w[1], n));
        }
        Ok(PiecewiseFn::new(breaks, pieces)?.with_resolution(res))
    }

    /// `alpha * f + beta * g` on the common refinement.
    pub fn combine(alpha: f64, f: &PiecewiseFn, beta: f64, g: &PiecewiseFn) -> Result<Self> {
        f.refine_with(g, |i, j, lo, hi, n| match (&f.pieces[i], &g.pieces[j]) {
            (
                Piece::Affine { slope: s1, intercept: c1 },
                Piece::Affine { slope: s2, intercept: c2 },
            ) => Piece::Affine { slope: alpha * s1 + beta * s2, intercept: alpha * c1 + beta * c2 },
            _ => Piece::Samples(
                node_positions(lo, hi, n)
                    .map(|x| alpha * f.eval_piece(i, x) + beta * g.eval_piece(j, x))
                    .collect(),
            ),
        })
    }

    pub fn add(&self, other: &PiecewiseFn) -> Result<Self> {
        PiecewiseFn::combine(1.0, self, 1.0, other)
    }

    pub fn sub(&self, other: &PiecewiseFn) -> Result<Self> {
        PiecewiseFn::combine(1.0, self, -1.0, other)
    }

    /// Pointwise product; affine only when one factor is constant on the piece.
    pub fn pointwise_mul(f: &PiecewiseFn, g: &PiecewiseFn) -> Result<Self> {
        f.refine_with(g, |i, j, lo, hi, n| {
            match (&f.pieces[i], &g.pieces[j]) {
                (Piece::Affine { slope, intercept }, p) | (p, Piece::Affine { slope, intercept })
                    if p.constant_value().is_some() =>
                {
                    let c = p.constant_value().unwrap();
                    return Piece::Affine { slope: c * slope, intercept: c * intercept };
                }
                _ => {}
            }
            Piece::Samples(
                node_positions(lo, hi, n).map(|x| f.eval_piece(i, x) * g.eval_piece(j, x)).collect(),
            )
        })
    }

    /// Supremum of `|f - g|`.
    pub fn sup_abs_diff(f: &PiecewiseFn, g: &PiecewiseFn) -> Result<f64> {
        Ok(PiecewiseFn::combine(1.0, f, -1.0, g)?.sup_norm())
    }

    /// Range of `num / den` over the base; `den` must be positive.
    pub fn ratio_range(num: &PiecewiseFn, den: &PiecewiseFn) -> Result<(f64, f64)> {
        num.check_base(den)?;
        let tol = num.tol().min(den.tol());
        let breaks = merge_sorted(&num.breaks, &den.breaks, tol);
        let (mut lo_r, mut hi_r) = (f64::INFINITY, f64::NEG_INFINITY);
        for w in breaks.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let i = num.piece_index_clamped(mid, Side::Right);
            let j = den.piece_index_clamped(mid, Side::Right);
            let n = if num.pieces[i].is_affine() && den.pieces[j].is_affine() {
                2
            } else {
                let len = |f: &PiecewiseFn, k: usize| match &f.pieces[k] {
                    Piece::Samples(v) => {
                        let (plo, phi) = f.piece_range(k);
                        ((v.len() - 1) as f64 * (w[1] - w[0]) / (phi - plo)).ceil() as usize + 1
                    }
                    _ => 2,
                };
                len(num, i).max(len(den, j)).max(3)
            };
            for x in node_positions(w[0], w[1], n) {
                let d = den.eval_piece(j, x);
                if !(d > 0.0) {
                    return Err(RpfError::numerical("ratio with non-positive denominator"));
                }
                let r = num.eval_piece(i, x) / d;
                lo_r = lo_r.min(r);
                hi_r = hi_r.max(r);
            }
        }
        Ok((lo_r, hi_r))
    }

    /// Merges neighbouring affine pieces with matching coefficients.
    pub fn simplify(&mut self) {
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-13 * (x.abs() + y.abs()) || x == y;
        let mut breaks = vec![self.breaks[0]];
        let mut pieces: Vec<Piece> = Vec::with_capacity(self.pieces.len());
        for (i, p) in self.pieces.iter().enumerate() {
            if let (Some(Piece::Affine { slope: s0, intercept: c0 }), Piece::Affine { slope, intercept }) =
                (pieces.last(), p)
            {
                if close(*s0, *slope) && close(*c0, *intercept) {
                    *breaks.last_mut().unwrap() = self.breaks[i + 1];
                    continue;
                }
            }
            pieces.push(p.clone());
            breaks.push(self.breaks[i + 1]);
        }
        self.breaks = breaks;
        self.pieces = pieces;
    }
}

/// `n` uniformly spaced nodes on `[lo, hi]`, hitting `hi` exactly.
pub(crate) fn node_positions(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(move |j| if j + 1 == n { hi } else { lo + j as f64 * h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step() -> PiecewiseFn {
        PiecewiseFn::new(vec![0.0, 0.5, 1.0], vec![Piece::constant(1.0), Piece::constant(3.0)]).unwrap()
    }

    #[test]
    fn affine_stats_are_exact() {
        let f = PiecewiseFn::affine(0.0, 1.0, 1.0, 1.0);
        assert_eq!(f.variation(), 1.0);
        assert_eq!(f.essinf(), 1.0);
        assert_eq!(f.esssup(), 2.0);
        assert!((f.integrate() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn step_jump_counts_in_variation() {
        let f = step();
        assert_eq!(f.variation(), 2.0);
        assert_eq!(f.eval_one_sided(0.5, Side::Left).unwrap(), 1.0);
        assert_eq!(f.eval_one_sided(0.5, Side::Right).unwrap(), 3.0);
    }

    #[test]
    fn restricted_stats_skip_excluded_parts() {
        let f = step();
        let set = IntervalSet::interval(0.6, 1.0);
        assert_eq!(f.essinf_on(&set), 3.0);
        assert_eq!(f.variation_on(&set), 0.0);
        assert_eq!(f.essinf_on(&IntervalSet::empty()), 0.0);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let f = step();
        assert!(matches!(f.eval(1.5), Err(RpfError::Domain(_))));
    }

    #[test]
    fn bad_breakpoints_are_rejected() {
        let r = PiecewiseFn::new(vec![0.0, 0.7, 0.5], vec![Piece::constant(0.0); 2]);
        assert!(matches!(r, Err(RpfError::InvalidInput(_))));
    }

    #[test]
    fn sampled_square_integrates_to_second_order() {
        let f = PiecewiseFn::from_fn(0.0, 1.0, Resolution::with_nodes(1024), |x| x * x).unwrap();
        assert!((f.integrate() - 1.0 / 3.0).abs() < 1e-6);
        assert!((f.variation() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complement_removes_open_holes() {
        let holes = IntervalSet::from_intervals(vec![(0.2, 0.25), (0.8, 0.9)]);
        let x = IntervalSet::complement_within(0.0, 1.0, &holes);
        assert_eq!(x.parts(), &[(0.0, 0.2), (0.25, 0.8), (0.9, 1.0)]);
        assert!((x.measure() - 0.85).abs() < 1e-15);
    }

    #[test]
    fn simplify_merges_equal_neighbours() {
        let mut f = PiecewiseFn::new(
            vec![0.0, 0.3, 0.6, 1.0],
            vec![Piece::constant(2.0), Piece::constant(2.0), Piece::constant(1.0)],
        )
        .unwrap();
        f.simplify();
        assert_eq!(f.breakpoints(), &[0.0, 0.6, 1.0]);
    }

    fn arb_fn() -> impl Strategy<Value = PiecewiseFn> {
        (1usize..6, prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, any::<bool>()), 6))
            .prop_map(|(k, coefs)| {
                let mut breaks: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
                breaks[k] = 1.0;
                let pieces = (0..k)
                    .map(|i| {
                        let (s, c, sampled) = coefs[i];
                        if sampled {
                            let (lo, hi) = (breaks[i], breaks[i + 1]);
                            Piece::Samples(node_positions(lo, hi, 9).map(|x| c + s * (7.0 * x).sin()).collect())
                        } else {
                            Piece::Affine { slope: s, intercept: c }
                        }
                    })
                    .collect();
                PiecewiseFn::new(breaks, pieces).unwrap()
            })
    }

    proptest! {
        #[test]
        fn variation_is_subadditive(f in arb_fn(), g in arb_fn()) {
            let s = f.add(&g).unwrap();
            prop_assert!(s.variation() <= f.variation() + g.variation() + 1e-12);
        }

        #[test]
        fn essinf_of_sum_dominates(f in arb_fn(), g in arb_fn()) {
            let s = f.add(&g).unwrap();
            prop_assert!(s.essinf() >= f.essinf() + g.essinf() - 1e-12);
        }

        #[test]
        fn scaling_is_homogeneous(f in arb_fn(), c in 0.0f64..5.0) {
            let s = f.scale(c);
            prop_assert!((s.variation() - c * f.variation()).abs() <= 1e-12 * (1.0 + c * f.variation()));
            prop_assert!((s.essinf() - c * f.essinf()).abs() <= 1e-12 * (1.0 + c));
        }

        #[test]
        fn restriction_never_increases_variation(f in arb_fn(), a in 0.0f64..0.5, b in 0.5f64..1.0) {
            prop_assert!(f.variation_on(&IntervalSet::interval(a, b)) <= f.variation() + 1e-12);
        }

        #[test]
        fn constants_have_no_variation(c in -5.0f64..5.0) {
            prop_assert_eq!(PiecewiseFn::constant(0.0, 1.0, c).variation(), 0.0);
        }
    }
}
