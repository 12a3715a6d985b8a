//! Interval maps with finitely many monotone branches and a hole.
//!
//! Branch families: affine, power `c|x - x0|^p`, quadratic `a(x - r0)(x - r1)`
//! and the Manneville–Pomeau branch `x(1 + 2^g x^g)` on `[0, 1/2]`.
//! The hole is a finite union of open intervals; the survivor set `X` is its
//! complement. Level-1 survivor elements are the branch domains intersected
//! with `X`; an element is full when its image is the whole base interval.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RpfError};
use crate::interval_fn::IntervalSet;

/// Relative tolerance for deciding that an image covers the base interval.
pub const FULL_TOL: f64 = 1e-10;

/// Parametric family of a monotone branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "lowercase")]
pub enum BranchFamily {
    Affine { slope: f64, intercept: f64 },
    Power { coef: f64, center: f64, exponent: f64 },
    Quadratic { coef: f64, r0: f64, r1: f64 },
    #[serde(rename = "mp")]
    MannevillePomeau { gamma: f64 },
}

/// One monotone branch on a closed domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    lo: f64,
    hi: f64,
    family: BranchFamily,
    increasing: bool,
    image: (f64, f64),
}

impl Branch {
    pub fn new(domain: (f64, f64), family: BranchFamily) -> Result<Self> {
        let (lo, hi) = domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(RpfError::input(format!("bad branch domain [{lo}, {hi}]")));
        }
        let tol = 1e-12 * (hi - lo).max(1.0);
        match family {
            BranchFamily::Affine { slope, intercept } => {
                if slope == 0.0 || !slope.is_finite() || !intercept.is_finite() {
                    return Err(RpfError::input("affine branch needs a finite non-zero slope"));
                }
            }
            BranchFamily::Power { coef, center, exponent } => {
                if !(coef > 0.0 && exponent > 0.0 && center.is_finite()) {
                    return Err(RpfError::input("power branch needs coef > 0 and exponent > 0"));
                }
                if lo < center - tol && hi > center + tol {
                    return Err(RpfError::input("power branch domain straddles its center"));
                }
            }
            BranchFamily::Quadratic { coef, r0, r1 } => {
                let v = 0.5 * (r0 + r1);
                if coef == 0.0 || !coef.is_finite() {
                    return Err(RpfError::input("quadratic branch needs a non-zero coefficient"));
                }
                if lo < v - tol && hi > v + tol {
                    return Err(RpfError::input("quadratic branch domain contains the vertex"));
                }
            }
            BranchFamily::MannevillePomeau { gamma } => {
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(RpfError::input("intermittent branch needs gamma > 0"));
                }
                if lo < -tol || hi > 0.5 + tol {
                    return Err(RpfError::input("intermittent branch lives on [0, 1/2]"));
                }
            }
        }
        let mut b = Branch { lo, hi, family, increasing: true, image: (0.0, 0.0) };
        let (ya, yb) = (b.forward(lo), b.forward(hi));
        if !(ya.is_finite() && yb.is_finite()) || ya == yb {
            return Err(RpfError::input("branch is not strictly monotone"));
        }
        b.increasing = yb > ya;
        b.image = (ya.min(yb), ya.max(yb));
        Ok(b)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn family(&self) -> &BranchFamily {
        &self.family
    }

    pub fn image(&self) -> (f64, f64) {
        self.image
    }

    pub fn is_increasing(&self) -> bool {
        self.increasing
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.family, BranchFamily::Affine { .. })
    }

    /// Branch formula; `x` is not range-checked.
    pub fn forward(&self, x: f64) -> f64 {
        match self.family {
            BranchFamily::Affine { slope, intercept } => slope * x + intercept,
            BranchFamily::Power { coef, center, exponent } => coef * (x - center).abs().powf(exponent),
            BranchFamily::Quadratic { coef, r0, r1 } => coef * (x - r0) * (x - r1),
            BranchFamily::MannevillePomeau { gamma } => {
                let x = x.max(0.0);
                x * (1.0 + 2f64.powf(gamma) * x.powf(gamma))
            }
        }
    }

    /// Derivative of the branch formula (may be infinite at a power center).
    pub fn derivative(&self, x: f64) -> f64 {
        match self.family {
            BranchFamily::Affine { slope, .. } => slope,
            BranchFamily::Power { coef, center, exponent } => {
                let d = x - center;
                let s = if d > 0.0 || (d == 0.0 && self.lo >= center) { 1.0 } else { -1.0 };
                s * coef * exponent * d.abs().powf(exponent - 1.0)
            }
            BranchFamily::Quadratic { coef, r0, r1 } => coef * (2.0 * x - r0 - r1),
            BranchFamily::MannevillePomeau { gamma } => {
                1.0 + (1.0 + gamma) * 2f64.powf(gamma) * x.max(0.0).powf(gamma)
            }
        }
    }

    /// Inverse branch; errors when `y` is outside the closed image.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        let tol = 1e-12 * (self.image.1 - self.image.0).max(1.0);
        if !(y >= self.image.0 - tol && y <= self.image.1 + tol) {
            return Err(RpfError::domain(format!(
                "{y} outside branch image [{}, {}]",
                self.image.0, self.image.1
            )));
        }
        Ok(self.inverse_clamped(y))
    }

    /// Inverse branch with `y` clamped into the image.
    pub fn inverse_clamped(&self, y: f64) -> f64 {
        let y = y.clamp(self.image.0, self.image.1);
        let x = match self.family {
            BranchFamily::Affine { slope, intercept } => (y - intercept) / slope,
            BranchFamily::Power { coef, center, exponent } => {
                let d = (y / coef).powf(1.0 / exponent);
                if self.lo >= center - 1e-15 {
                    center + d
                } else {
                    center - d
                }
            }
            BranchFamily::Quadratic { coef, r0, r1 } => {
                let v = 0.5 * (r0 + r1);
                let h = 0.5 * (r1 - r0);
                let d = (y / coef + h * h).max(0.0).sqrt();
                if self.lo >= v - 1e-15 {
                    v + d
                } else {
                    v - d
                }
            }
            BranchFamily::MannevillePomeau { gamma } => self.mp_inverse(gamma, y),
        };
        x.clamp(self.lo, self.hi)
    }

    fn mp_inverse(&self, gamma: f64, y: f64) -> f64 {
        // convex increasing: Newton from the right decreases monotonically
        let c = 2f64.powf(gamma);
        let mut x = y.min(self.hi).max(self.lo);
        for _ in 0..200 {
            let fx = x * (1.0 + c * x.powf(gamma)) - y;
            let dfx = 1.0 + (1.0 + gamma) * c * x.powf(gamma);
            let step = fx / dfx;
            let next = x - step;
            if !(next > self.lo) {
                x = 0.5 * (x + self.lo);
                continue;
            }
            if (x - next).abs() <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
                return next;
            }
            x = next;
        }
        x
    }
}

/// Level-1 survivor element: a branch domain intersected with a survivor part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Element {
    pub branch: usize,
    pub lo: f64,
    pub hi: f64,
    pub image: (f64, f64),
    pub increasing: bool,
    pub full: bool,
}

/// An interval map with monotone branches and an open hole.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenMap {
    base: (f64, f64),
    branches: Vec<Branch>,
    hole: IntervalSet,
    survivors: IntervalSet,
    elements: Vec<Element>,
}

impl OpenMap {
    /// Validates the branch partition, images and hole, and builds level-1 elements.
    pub fn new(base: (f64, f64), mut branches: Vec<Branch>, holes: Vec<(f64, f64)>) -> Result<Self> {
        let (a, b) = base;
        if !(a < b) {
            return Err(RpfError::input("base interval must satisfy A < B"));
        }
        if branches.is_empty() {
            return Err(RpfError::input("a map needs at least one branch"));
        }
        let tol = 1e-12 * (b - a);
        branches.sort_by(|x, y| x.lo.total_cmp(&y.lo));
        if (branches[0].lo - a).abs() > tol || (branches[branches.len() - 1].hi - b).abs() > tol {
            return Err(RpfError::input("branch domains must cover the base interval"));
        }
        for w in branches.windows(2) {
            if (w[0].hi - w[1].lo).abs() > tol {
                return Err(RpfError::input(format!(
                    "branch domains must be contiguous (gap or overlap at {})",
                    w[0].hi
                )));
            }
        }
        let img_tol = FULL_TOL * (b - a);
        for br in &branches {
            if br.image.0 < a - img_tol || br.image.1 > b + img_tol {
                return Err(RpfError::input(format!(
                    "branch on [{}, {}] maps outside the base interval",
                    br.lo, br.hi
                )));
            }
        }
        for &(lo, hi) in &holes {
            if !(lo < hi && lo >= a - tol && hi <= b + tol) {
                return Err(RpfError::input(format!("hole ({lo}, {hi}) is not inside the base")));
            }
        }
        let hole = IntervalSet::from_intervals(holes);
        let survivors = IntervalSet::complement_within(a, b, &hole);
        let mut elements = Vec::new();
        for (k, br) in branches.iter().enumerate() {
            for &(s, t) in survivors.parts() {
                let lo = s.max(br.lo);
                let hi = t.min(br.hi);
                if hi - lo <= tol {
                    continue;
                }
                let (ya, yb) = (br.forward(lo), br.forward(hi));
                let image = (ya.min(yb).max(a), ya.max(yb).min(b));
                let full = image.0 <= a + img_tol && image.1 >= b - img_tol;
                elements.push(Element { branch: k, lo, hi, image, increasing: br.increasing, full });
            }
        }
        let map = OpenMap { base, branches, hole, survivors, elements };
        let has_full_branch = map.branches.iter().any(|br| {
            let whole = br.image.0 <= a + img_tol && br.image.1 >= b - img_tol;
            whole && map.hole.overlap(br.lo, br.hi) <= tol
        });
        if !has_full_branch {
            return Err(RpfError::assumption("no full branch lies inside the survivor set"));
        }
        Ok(map)
    }

    pub fn base(&self) -> (f64, f64) {
        self.base
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn hole(&self) -> &IntervalSet {
        &self.hole
    }

    pub fn survivors(&self) -> &IntervalSet {
        &self.survivors
    }

    /// Level-1 survivor elements, left to right.
    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    /// Same branches with a different hole.
    pub fn with_hole(&self, holes: Vec<(f64, f64)>) -> Result<Self> {
        OpenMap::new(self.base, self.branches.clone(), holes)
    }

    /// Number of full level-1 elements.
    pub fn full_count(&self) -> usize {
        self.elements.iter().filter(|e| e.full).count()
    }

    /// Longest run of non-full level-1 elements.
    pub fn partial_run(&self) -> usize {
        longest_partial_run(self.elements.iter().map(|e| e.full))
    }

    /// Index of the branch used for the one-sided value at `x`.
    pub fn branch_at(&self, x: f64, right: bool) -> usize {
        let pp = if right {
            self.branches.partition_point(|br| br.lo <= x)
        } else {
            self.branches.partition_point(|br| br.lo < x)
        };
        pp.saturating_sub(1).min(self.branches.len() - 1)
    }

    /// Image of a point of the survivor set, or `None` when `x` falls in the hole.
    pub fn apply_point(&self, x: f64) -> Option<f64> {
        let (a, b) = self.base;
        if !(x >= a && x <= b) {
            return None;
        }
        if self.hole.parts().iter().any(|&(lo, hi)| x > lo && x < hi) {
            return None;
        }
        let br = &self.branches[self.branch_at(x, x < b)];
        Some(br.forward(x).clamp(a, b))
    }
}

fn longest_partial_run(full: impl Iterator<Item = bool>) -> usize {
    let (mut best, mut cur) = (0, 0);
    for f in full {
        if f {
            cur = 0;
        } else {
            cur += 1;
            best = best.max(cur);
        }
    }
    best
}

/// Element of the level-`n` survivor partition.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivorElement {
    pub lo: f64,
    pub hi: f64,
    /// Branch index used at each step of the word.
    pub chain: Vec<usize>,
    /// Image under the composed map.
    pub image: (f64, f64),
    pub increasing: bool,
    pub full: bool,
}

/// Level-`n` survivor partition of a word, ordered left to right.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivorPartition {
    pub elements: Vec<SurvivorElement>,
    pub full_count: usize,
    pub partial_run: usize,
}

/// Enumerates the survivor partition of `maps[word[0]], ..., maps[word[n-1]]`.
///
/// The element count grows exponentially; `max_elements` caps it.
pub fn survivor_partition(
    maps: &[OpenMap],
    word: &[usize],
    max_elements: usize,
) -> Result<SurvivorPartition> {
    if word.is_empty() {
        return Err(RpfError::input("empty word"));
    }
    let base = check_word(maps, word)?;
    let tol = 1e-12 * (base.1 - base.0);
    let img_tol = FULL_TOL * (base.1 - base.0);
    let first = &maps[word[0]];
    let mut elems: Vec<SurvivorElement> = first
        .elements()
        .iter()
        .map(|e| SurvivorElement {
            lo: e.lo,
            hi: e.hi,
            chain: vec![e.branch],
            image: e.image,
            increasing: e.increasing,
            full: e.full,
        })
        .collect();
    for (step, &sym) in word.iter().enumerate().skip(1) {
        let map = &maps[sym];
        let mut next = Vec::new();
        for e in &elems {
            let mut children = Vec::new();
            for f in map.elements() {
                let k0 = e.image.0.max(f.lo);
                let k1 = e.image.1.min(f.hi);
                if k1 - k0 <= tol {
                    continue;
                }
                let pull = |y: f64| {
                    let mut y = y;
                    for s in (0..step).rev() {
                        y = maps[word[s]].branches[e.chain[s]].inverse_clamped(y);
                    }
                    y
                };
                let (x0, x1) = (pull(k0), pull(k1));
                let br = &map.branches[f.branch];
                let (y0, y1) = (br.forward(k0), br.forward(k1));
                let image = (y0.min(y1).max(base.0), y0.max(y1).min(base.1));
                let mut chain = e.chain.clone();
                chain.push(f.branch);
                children.push(SurvivorElement {
                    lo: x0.min(x1),
                    hi: x0.max(x1),
                    chain,
                    image,
                    increasing: e.increasing == f.increasing,
                    full: image.0 <= base.0 + img_tol && image.1 >= base.1 - img_tol,
                });
            }
            if !e.increasing {
                children.reverse();
            }
            next.extend(children);
            if next.len() > max_elements {
                return Err(RpfError::numerical(format!(
                    "survivor partition exceeds {max_elements} elements"
                )));
            }
        }
        elems = next;
    }
    let full_count = elems.iter().filter(|e| e.full).count();
    let partial_run = longest_partial_run(elems.iter().map(|e| e.full));
    Ok(SurvivorPartition { elements: elems, full_count, partial_run })
}

pub(crate) fn check_word(maps: &[OpenMap], word: &[usize]) -> Result<(f64, f64)> {
    if maps.is_empty() {
        return Err(RpfError::input("no maps"));
    }
    let base = maps[0].base;
    for &s in word {
        let m = maps.get(s).ok_or_else(|| RpfError::input(format!("symbol {s} has no map")))?;
        if m.base != base {
            return Err(RpfError::input("maps live on different base intervals"));
        }
    }
    Ok(base)
}

/// Counts of the level-`n` survivor partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BranchStats {
    /// Number of elements.
    pub total: u128,
    /// Number of full elements (`b_f`).
    pub full: u128,
    /// Longest run of partial elements (`xi`).
    pub partial_run: u128,
}

#[derive(Clone, Copy, Debug)]
struct RunSummary {
    total: u128,
    full: u128,
    prefix: u128,
    suffix: u128,
    best: u128,
    has_full: bool,
}

impl RunSummary {
    const EMPTY: RunSummary =
        RunSummary { total: 0, full: 0, prefix: 0, suffix: 0, best: 0, has_full: false };

    fn leaf(full: bool) -> Self {
        if full {
            RunSummary { total: 1, full: 1, prefix: 0, suffix: 0, best: 0, has_full: true }
        } else {
            RunSummary { total: 1, full: 0, prefix: 1, suffix: 1, best: 1, has_full: false }
        }
    }

    fn concat(a: RunSummary, b: RunSummary) -> RunSummary {
        RunSummary {
            total: a.total.saturating_add(b.total),
            full: a.full.saturating_add(b.full),
            prefix: if a.has_full { a.prefix } else { a.total.saturating_add(b.prefix) },
            suffix: if b.has_full { b.suffix } else { b.total.saturating_add(a.suffix) },
            best: a.best.max(b.best).max(a.suffix.saturating_add(b.prefix)),
            has_full: a.has_full || b.has_full,
        }
    }

    fn reversed(self) -> RunSummary {
        RunSummary { prefix: self.suffix, suffix: self.prefix, ..self }
    }
}

/// `b_f` and `xi` of a word without enumerating the partition.
///
/// Elements inside one level-1 element are the pull-back of the tail word's
/// partition restricted to a window, so summaries are memoized on
/// (depth, window) and combined as a monoid of run lengths.
pub fn branch_stats(maps: &[OpenMap], word: &[usize]) -> Result<BranchStats> {
    if word.is_empty() {
        return Err(RpfError::input("empty word"));
    }
    let base = check_word(maps, word)?;
    let mut memo = HashMap::new();
    let s = summary(maps, word, 0, base, base, &mut memo);
    Ok(BranchStats { total: s.total, full: s.full, partial_run: s.best })
}

fn window_key(base: (f64, f64), j: (f64, f64)) -> (i64, i64) {
    let q = |x: f64| (((x - base.0) / (base.1 - base.0)) * 2f64.powi(40)).round() as i64;
    (q(j.0), q(j.1))
}

fn summary(
    maps: &[OpenMap],
    word: &[usize],
    k: usize,
    window: (f64, f64),
    base: (f64, f64),
    memo: &mut HashMap<(usize, i64, i64), RunSummary>,
) -> RunSummary {
    let width = base.1 - base.0;
    if k == word.len() {
        let full = window.0 <= base.0 + FULL_TOL * width && window.1 >= base.1 - FULL_TOL * width;
        return RunSummary::leaf(full);
    }
    let (q0, q1) = window_key(base, window);
    if let Some(s) = memo.get(&(k, q0, q1)) {
        return *s;
    }
    let map = &maps[word[k]];
    let tol = 1e-12 * width;
    let mut acc = RunSummary::EMPTY;
    for f in map.elements() {
        let k0 = window.0.max(f.lo);
        let k1 = window.1.min(f.hi);
        if k1 - k0 <= tol {
            continue;
        }
        let br = &map.branches[f.branch];
        let (y0, y1) = (br.forward(k0), br.forward(k1));
        let next = (y0.min(y1).max(base.0), y0.max(y1).min(base.1));
        let child = summary(maps, word, k + 1, next, base, memo);
        acc = RunSummary::concat(acc, if f.increasing { child } else { child.reversed() });
    }
    memo.insert((k, q0, q1), acc);
    acc
}

/// Forward image of `domain` under the branch chain `chain` along `word`.
///
/// At each step the current interval is clipped to the next branch's domain.
/// Returns the image and whether the composition is increasing.
pub fn chain_image(
    maps: &[OpenMap],
    word: &[usize],
    chain: &[usize],
    domain: (f64, f64),
) -> Result<((f64, f64), bool)> {
    if word.is_empty() || word.len() != chain.len() {
        return Err(RpfError::input("chain and word must be non-empty and of equal length"));
    }
    check_word(maps, word)?;
    let (mut lo, mut hi) = domain;
    let mut increasing = true;
    for (&sym, &b) in word.iter().zip(chain) {
        let br = maps[sym]
            .branches
            .get(b)
            .ok_or_else(|| RpfError::input(format!("symbol {sym} has no branch {b}")))?;
        let (d0, d1) = br.domain();
        let (a, c) = (lo.max(d0), hi.min(d1));
        if !(c > a) {
            return Err(RpfError::domain(format!("chain leaves branch {b} of symbol {sym}")));
        }
        let (y0, y1) = (br.forward(a), br.forward(c));
        lo = y0.min(y1);
        hi = y0.max(y1);
        increasing = increasing == br.is_increasing();
    }
    Ok(((lo, hi), increasing))
}

/// Upper bound `n * prod (xi_j + 2)` on the partial run of a word.
pub fn partial_run_bound(maps: &[OpenMap], word: &[usize]) -> f64 {
    word.len() as f64 * word.iter().map(|&s| maps[s].partial_run() as f64 + 2.0).product::<f64>()
}
