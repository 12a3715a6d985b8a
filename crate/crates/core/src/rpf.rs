//! Equivariant densities, conformal measures and the quantities built from them.
//!
//! * `q_w`: pull-back iteration `L^{(n)}_{s^{-n} w} 1`, renormalized by its
//!   essential infimum after every step.
//! * `nu_w(f)`: limit of `Einf(L^{(n)}_w f) / Einf(L^{(n)}_w 1)`. Iteration stops
//!   once the range of the pointwise ratio `L^{(n)} f / L^{(n)} 1`, which brackets
//!   `nu_w(f)` for every positive operator, is narrower than the tolerance, or
//!   stops shrinking.
//! * `lambda-_w = Einf(L_w q_w)` and `lambda+_w = nu_{s w}(L_w 1)`.
//! * `mu_w(f) = nu_w(f q_w) / nu_w(q_w)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, RpfError};
use crate::interval_fn::PiecewiseFn;
use crate::random_map::survivor_partition;
use crate::stats::{line_fit, Estimate, LineFit};
use crate::transfer::Ensemble;

/// Iteration depths and tolerances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RpfParams {
    /// Pull-back depth (fixed) or depth cap (adaptive).
    pub density_depth: usize,
    /// Sup-norm Cauchy tolerance for the density; `<= 0` means fixed depth.
    pub density_tol: f64,
    /// Relative width of the conformal bracket at which iteration stops.
    pub nu_tol: f64,
    pub nu_min_depth: usize,
    pub nu_cap: usize,
}

impl Default for RpfParams {
    fn default() -> Self {
        RpfParams { density_depth: 48, density_tol: 1e-11, nu_tol: 1e-12, nu_min_depth: 8, nu_cap: 200 }
    }
}

impl RpfParams {
    /// Fixed pull-back depth `n`.
    pub fn fixed(n: usize) -> Self {
        RpfParams { density_depth: n, density_tol: 0.0, ..RpfParams::default() }
    }
}

fn normalize(f: PiecewiseFn) -> Result<(PiecewiseFn, f64)> {
    let e = f.essinf();
    if !(e > 0.0 && e.is_finite()) {
        return Err(RpfError::numerical(format!("essential infimum {e} is not positive")));
    }
    Ok((f.scale(1.0 / e), e))
}

/// `L^{(m)}_{k-m} f0`, renormalized by its essential infimum after each step.
fn pull_back(ens: &Ensemble, fiber: i64, m: usize, f0: &PiecewiseFn) -> Result<PiecewiseFn> {
    let mut f = f0.clone();
    for s in ens.word(fiber - m as i64, m) {
        f = normalize(ens.apply(s, &f)?)?.0;
    }
    Ok(f)
}

/// Equivariant density estimate at one fiber.
#[derive(Clone, Debug)]
pub struct EquivariantDensity {
    pub fiber: i64,
    pub depth: usize,
    /// Normalized so that `Einf(q) = 1`.
    pub q: PiecewiseFn,
    pub lambda_minus: f64,
    /// `(depth, sup |q_depth - q_previous|)` for each checked depth.
    pub increments: Vec<(usize, f64)>,
    pub converged: bool,
}

/// Pull-back estimate of `q_w` starting from `f0` (usually `1`).
pub fn equivariant_density_from(
    ens: &Ensemble,
    fiber: i64,
    params: &RpfParams,
    f0: &PiecewiseFn,
) -> Result<EquivariantDensity> {
    let cap = params.density_depth.max(1);
    let mut increments = Vec::new();
    let (q, depth, converged) = if params.density_tol <= 0.0 {
        let q = pull_back(ens, fiber, cap, f0)?;
        let next = pull_back(ens, fiber, cap + 1, f0)?;
        increments.push((cap + 1, PiecewiseFn::sup_abs_diff(&q, &next)?));
        (q, cap, false)
    } else {
        let step = 4;
        let mut m = step.min(cap);
        let mut prev = pull_back(ens, fiber, m, f0)?;
        loop {
            if m >= cap {
                break (prev, m, false);
            }
            let next_m = (m + step).min(cap);
            let next = pull_back(ens, fiber, next_m, f0)?;
            let inc = PiecewiseFn::sup_abs_diff(&prev, &next)?;
            increments.push((next_m, inc));
            m = next_m;
            prev = next;
            if inc < params.density_tol {
                break (prev, m, true);
            }
        }
    };
    let lambda_minus = ens.apply(ens.symbol_at(fiber), &q)?.essinf();
    Ok(EquivariantDensity { fiber, depth, q, lambda_minus, increments, converged })
}

pub fn equivariant_density(ens: &Ensemble, fiber: i64, params: &RpfParams) -> Result<EquivariantDensity> {
    equivariant_density_from(ens, fiber, params, &ens.constant(1.0))
}

/// Value of the conformal functional with its bracket.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConformalEstimate {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub depth: usize,
}

struct EvalState {
    g: PiecewiseFn,
    m: usize,
    widths: Vec<f64>,
    range: (f64, f64),
    done: bool,
}

/// The conformal functional `nu_w` at one fiber, with a cache of `L^{(m)} 1`.
pub struct ConformalFunctional<'a> {
    ens: &'a Ensemble,
    fiber: i64,
    params: RpfParams,
    word: Vec<usize>,
    dens: Vec<PiecewiseFn>,
    steps: Vec<f64>,
}

impl<'a> ConformalFunctional<'a> {
    pub fn new(ens: &'a Ensemble, fiber: i64, params: &RpfParams) -> Self {
        ConformalFunctional {
            ens,
            fiber,
            params: *params,
            word: ens.word(fiber, params.nu_cap.max(1)),
            dens: vec![ens.constant(1.0)],
            steps: Vec::new(),
        }
    }

    pub fn fiber(&self) -> i64 {
        self.fiber
    }

    /// Caches `L^{(j)} 1` for `j <= m`.
    pub fn extend(&mut self, m: usize) -> Result<()> {
        let m = m.min(self.params.nu_cap.max(1));
        while self.dens.len() <= m {
            let k = self.dens.len() - 1;
            let (d, e) = normalize(self.ens.apply(self.word[k], &self.dens[k])?)?;
            self.dens.push(d);
            self.steps.push(e);
        }
        Ok(())
    }

    /// `log Einf(L^{(m)} 1)`.
    pub fn log_growth(&mut self, m: usize) -> Result<f64> {
        self.extend(m)?;
        Ok(self.steps[..m].iter().map(|s| s.ln()).sum())
    }

    fn advance(&self, st: &mut EvalState) -> Result<()> {
        let m = st.m + 1;
        st.g = self.ens.apply(self.word[m - 1], &st.g)?.scale(1.0 / self.steps[m - 1]);
        st.m = m;
        let (lo, hi) = PiecewiseFn::ratio_range(&st.g, &self.dens[m])?;
        let width = hi - lo;
        let scale = 1f64.max(lo.abs()).max(hi.abs());
        st.range = (lo, hi);
        st.widths.push(width);
        let stalled = m >= self.params.nu_min_depth + 4 && width >= 0.99 * st.widths[m - 5];
        if m >= self.params.nu_min_depth && (width <= self.params.nu_tol * scale || stalled) {
            st.done = true;
        }
        if m >= self.params.nu_cap {
            st.done = true;
        }
        Ok(())
    }

    fn finish(&self, f: &PiecewiseFn, st: EvalState) -> Result<ConformalEstimate> {
        if st.m == 0 {
            return Err(RpfError::numerical("conformal iteration did not run"));
        }
        // shift into C_1 before taking the essential infimum
        let mut c = (f.variation() - f.essinf()).max(0.0);
        if f.essinf() + c <= 0.0 {
            c += 1.0;
        }
        let shifted = PiecewiseFn::combine(1.0, &st.g, c, &self.dens[st.m])?;
        let value = shifted.essinf() - c;
        Ok(ConformalEstimate { value, lower: st.range.0, upper: st.range.1, depth: st.m })
    }

    fn start(f: &PiecewiseFn) -> EvalState {
        EvalState { g: f.clone(), m: 0, widths: Vec::new(), range: (f64::NAN, f64::NAN), done: false }
    }

    /// `nu_w(f)`, extending the cache as needed.
    pub fn eval(&mut self, f: &PiecewiseFn) -> Result<ConformalEstimate> {
        let mut st = Self::start(f);
        while !st.done {
            self.extend(st.m + 1)?;
            self.advance(&mut st)?;
        }
        self.finish(f, st)
    }

    /// `nu_w(f)` using only cached depths.
    pub fn eval_cached(&self, f: &PiecewiseFn) -> Result<ConformalEstimate> {
        let mut st = Self::start(f);
        while !st.done && st.m + 1 < self.dens.len() {
            self.advance(&mut st)?;
        }
        self.finish(f, st)
    }
}

/// `log lambda+^{(n)}_w = log nu_{s^n w}(L^{(n)}_w 1)`.
pub fn log_lambda_plus(ens: &Ensemble, fiber: i64, n: usize, params: &RpfParams) -> Result<f64> {
    let mut f = ens.constant(1.0);
    let mut log_scale = 0.0;
    for s in ens.word(fiber, n) {
        let (g, e) = normalize(ens.apply(s, &f)?)?;
        f = g;
        log_scale += e.ln();
    }
    let mut nu = ConformalFunctional::new(ens, fiber + n as i64, params);
    Ok(log_scale + nu.eval(&f)?.value.ln())
}

/// Depth-`n` ratio estimates of the multipliers at one fiber.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Multipliers {
    /// `Einf(L_w q_w)` with `q_w` pulled back over `n` steps.
    pub lambda_minus: f64,
    /// `Einf(L^{(n+1)}_w 1) / Einf(L^{(n)}_{s w} 1)`.
    pub lambda_plus: f64,
}

pub fn multipliers(ens: &Ensemble, fiber: i64, n: usize) -> Result<Multipliers> {
    if n == 0 {
        return Err(RpfError::input("depth must be positive"));
    }
    let lambda_minus = equivariant_density(ens, fiber, &RpfParams::fixed(n))?.lambda_minus;
    // log Einf of L^{(m)} 1 along the word starting at `start`
    let log_einf = |start: i64, m: usize| -> Result<f64> {
        let mut f = ens.constant(1.0);
        let mut acc = 0.0;
        for s in ens.word(start, m) {
            let (g, e) = normalize(ens.apply(s, &f)?)?;
            f = g;
            acc += e.ln();
        }
        Ok(acc)
    };
    let lambda_plus = (log_einf(fiber, n + 1)? - log_einf(fiber + 1, n)?).exp();
    Ok(Multipliers { lambda_minus, lambda_plus })
}

/// Invariant measure `mu_w` at one fiber.
pub struct InvariantMeasure<'a> {
    pub density: EquivariantDensity,
    pub nu: ConformalFunctional<'a>,
    pub nu_q: f64,
}

impl<'a> InvariantMeasure<'a> {
    pub fn new(ens: &'a Ensemble, fiber: i64, params: &RpfParams) -> Result<Self> {
        let density = equivariant_density(ens, fiber, params)?;
        let mut nu = ConformalFunctional::new(ens, fiber, params);
        let nu_q = nu.eval(&density.q)?.value;
        if !(nu_q > 0.0) {
            return Err(RpfError::numerical("conformal mass of the density is not positive"));
        }
        Ok(InvariantMeasure { density, nu, nu_q })
    }

    /// `mu_w(f)`.
    pub fn mu(&mut self, f: &PiecewiseFn) -> Result<f64> {
        let fq = PiecewiseFn::pointwise_mul(f, &self.density.q)?;
        Ok(self.nu.eval(&fq)?.value / self.nu_q)
    }

    /// Normalized density `psi = q / nu(q)`.
    pub fn psi(&self) -> PiecewiseFn {
        self.density.q.scale(1.0 / self.nu_q)
    }
}

/// Terms of the identity `nu_w(q_w) lambda+_w = nu_{s w}(q_{s w}) lambda-_w`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DualityReport {
    pub fiber: i64,
    pub nu_q: f64,
    pub nu_q_next: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub residual: f64,
}

pub fn duality_residual(ens: &Ensemble, fiber: i64, params: &RpfParams) -> Result<DualityReport> {
    let here = InvariantMeasure::new(ens, fiber, params)?;
    let mut next = InvariantMeasure::new(ens, fiber + 1, params)?;
    let l1 = ens.apply(ens.symbol_at(fiber), &ens.constant(1.0))?;
    let lambda_plus = next.nu.eval(&l1)?.value;
    let lambda_minus = here.density.lambda_minus;
    let residual = here.nu_q * lambda_plus / (next.nu_q * lambda_minus) - 1.0;
    Ok(DualityReport { fiber, nu_q: here.nu_q, nu_q_next: next.nu_q, lambda_plus, lambda_minus, residual })
}

/// `mu_{s w}(f) - mu_w(f o T_w)` for each observable.
pub fn invariance_residuals(
    ens: &Ensemble,
    fiber: i64,
    observables: &[PiecewiseFn],
    params: &RpfParams,
) -> Result<Vec<f64>> {
    let mut here = InvariantMeasure::new(ens, fiber, params)?;
    let mut next = InvariantMeasure::new(ens, fiber + 1, params)?;
    let sym = ens.symbol_at(fiber);
    observables
        .iter()
        .map(|f| Ok(next.mu(f)? - here.mu(&ens.koopman(sym, f)?)?))
        .collect()
}

/// Monte-Carlo Lyapunov exponent with the BV-norm growth as a second column.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    pub estimate: Estimate,
    pub bv_growth: Estimate,
    pub samples: Vec<f64>,
    pub base_points: Vec<i64>,
    pub n: usize,
    pub burn_in: usize,
}

fn bv_norm(f: &PiecewiseFn) -> f64 {
    f.variation() + f.integrate()
}

/// `(1/n) log Einf(L^{(n)}_w f_0)` averaged over `k` base points spaced `n + burn_in + 1` apart.
///
/// With `burn_in = 0`, `f_0 = 1`. Otherwise `f_0` is the normalized pull-back of
/// `1` over `burn_in` steps, which removes the start-up bias.
pub fn lyapunov_exponent(
    ens: &Ensemble,
    n: usize,
    k: usize,
    base: i64,
    burn_in: usize,
) -> Result<LyapunovEstimate> {
    if n == 0 || k == 0 {
        return Err(RpfError::input("need n >= 1 and at least one base point"));
    }
    let spacing = (n + burn_in + 1) as i64;
    let base_points: Vec<i64> = (0..k as i64).map(|i| base + i * spacing).collect();
    let pairs = base_points
        .par_iter()
        .map(|&b| {
            let f0 = pull_back(ens, b, burn_in, &ens.constant(1.0))?;
            let mut f = f0.clone();
            let mut log_sum = 0.0;
            for s in ens.word(b, n) {
                let (g, e) = normalize(ens.apply(s, &f)?)?;
                log_sum += e.ln();
                f = g;
            }
            let bv = log_sum + bv_norm(&f).ln() - bv_norm(&f0).ln();
            Ok((log_sum / n as f64, bv / n as f64))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let samples: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let bv: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(LyapunovEstimate {
        estimate: Estimate::from_samples(&samples),
        bv_growth: Estimate::from_samples(&bv),
        samples,
        base_points,
        n,
        burn_in,
    })
}

/// Correlations `Cor(n)` of `f` at fiber `w` against `h` at fiber `s^{-n} w`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub values: Vec<(usize, f64)>,
    /// Fit of `log |Cor(n)|` against `n`.
    pub fit: LineFit,
    pub rate: f64,
}

pub fn correlation_decay(
    ens: &Ensemble,
    fiber: i64,
    f: &PiecewiseFn,
    h: &PiecewiseFn,
    n_max: usize,
    params: &RpfParams,
) -> Result<CorrelationReport> {
    let mut im = InvariantMeasure::new(ens, fiber, params)?;
    let mu_f = im.mu(f)?;
    // q at fiber - n_max, pushed forward to the later source fibers
    let start = fiber - n_max as i64;
    let mut sources = Vec::with_capacity(n_max);
    let mut q = equivariant_density(ens, start, params)?.q;
    for s in ens.word(start, n_max) {
        let next = normalize(ens.apply(s, &q)?)?.0;
        sources.push(std::mem::replace(&mut q, next));
    }
    let mut values = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let src = fiber - n as i64;
        let q_src = sources[n_max - n].clone();
        let mut hh = PiecewiseFn::pointwise_mul(h, &q_src)?;
        let mut qq = q_src;
        for s in ens.word(src, n) {
            let (q_next, e) = normalize(ens.apply(s, &qq)?)?;
            hh = ens.apply(s, &hh)?.scale(1.0 / e);
            qq = q_next;
        }
        let nu_q = im.nu.eval(&qq)?.value;
        let centered = PiecewiseFn::pointwise_mul(&f.add_const(-mu_f), &hh)?;
        values.push((n, im.nu.eval(&centered)?.value / nu_q));
    }
    Ok(fit_correlations(values))
}

fn fit_correlations(values: Vec<(usize, f64)>) -> CorrelationReport {
    let (xs, ys): (Vec<f64>, Vec<f64>) = values
        .iter()
        .filter(|(_, c)| *c != 0.0)
        .map(|&(n, c)| (n as f64, c.abs().ln()))
        .unzip();
    let fit = line_fit(&xs, &ys);
    CorrelationReport { values, rate: fit.slope.exp(), fit }
}

/// Mean of `|Cor(n)|` over several target fibers, fitted the same way.
///
/// A single fiber can lose almost all of its correlation in one step, which
/// leaves that fiber's sequence at roundoff level from then on.
pub fn mean_correlation_decay(
    ens: &Ensemble,
    fibers: &[i64],
    f: &PiecewiseFn,
    h: &PiecewiseFn,
    n_max: usize,
    params: &RpfParams,
) -> Result<CorrelationReport> {
    if fibers.is_empty() {
        return Err(RpfError::input("need at least one fiber"));
    }
    let reports = fibers
        .par_iter()
        .map(|&w| correlation_decay(ens, w, f, h, n_max, params))
        .collect::<Result<Vec<_>>>()?;
    let k = fibers.len() as f64;
    let values = (0..n_max)
        .map(|i| (i + 1, reports.iter().map(|r| r.values[i].1.abs()).sum::<f64>() / k))
        .collect();
    Ok(fit_correlations(values))
}

/// `sup |Q^{(n)}_w f|` for `n = 1..=n_max`, one row per function, where
/// `Q^{(n)} f = L^{(n)} f / lambda+^{(n)} - nu_w(f) psi_{s^n w}`.
pub fn rpf_residuals(
    ens: &Ensemble,
    fiber: i64,
    fs: &[PiecewiseFn],
    n_max: usize,
    params: &RpfParams,
) -> Result<Vec<Vec<f64>>> {
    let mut nu0 = ConformalFunctional::new(ens, fiber, params);
    let nu_f = fs.iter().map(|f| Ok(nu0.eval(f)?.value)).collect::<Result<Vec<f64>>>()?;
    let mut iterated: Vec<PiecewiseFn> = fs.to_vec();
    let mut one = ens.constant(1.0);
    let mut rows = vec![Vec::with_capacity(n_max); fs.len()];
    for n in 1..=n_max {
        let s = ens.symbol_at(fiber + n as i64 - 1);
        let (next_one, e) = normalize(ens.apply(s, &one)?)?;
        one = next_one;
        for g in iterated.iter_mut() {
            *g = ens.apply(s, g)?.scale(1.0 / e);
        }
        let target = fiber + n as i64;
        let im = InvariantMeasure::new(ens, target, params)?;
        let mut nu_t = im.nu;
        let lam = nu_t.eval(&one)?.value;
        let psi = im.density.q.scale(1.0 / im.nu_q);
        for (i, g) in iterated.iter().enumerate() {
            let q = PiecewiseFn::combine(1.0 / lam, g, -nu_f[i], &psi)?;
            rows[i].push(q.sup_norm());
        }
    }
    Ok(rows)
}

/// Distribution function of `nu_w` on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NuTable {
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
    /// Largest bracket width among the tabulated values.
    pub max_width: f64,
}

impl NuTable {
    pub fn cdf_at(&self, x: f64) -> f64 {
        let n = self.grid.len() - 1;
        let (a, b) = (self.grid[0], self.grid[n]);
        let t = ((x - a) / (b - a)).clamp(0.0, 1.0) * n as f64;
        let j = (t.floor() as usize).min(n - 1);
        let fr = t - j as f64;
        self.cdf[j] * (1.0 - fr) + self.cdf[j + 1] * fr
    }

    /// `nu_w([lo, hi])`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        self.cdf_at(hi) - self.cdf_at(lo)
    }
}

pub fn nu_table(ens: &Ensemble, fiber: i64, cells: usize, params: &RpfParams) -> Result<NuTable> {
    if cells < 2 {
        return Err(RpfError::input("need at least two cells"));
    }
    let (a, b) = ens.base();
    let grid: Vec<f64> = (0..=cells)
        .map(|j| if j == cells { b } else { a + (b - a) * j as f64 / cells as f64 })
        .collect();
    let mut nu = ConformalFunctional::new(ens, fiber, params);
    let probe = nu.eval(&PiecewiseFn::indicator(a, b, a, 0.5 * (a + b))?)?;
    nu.extend(2 * probe.depth)?;
    let inner = grid[1..cells]
        .par_iter()
        .map(|&x| nu.eval_cached(&PiecewiseFn::indicator(a, b, a, x)?))
        .collect::<Result<Vec<_>>>()?;
    let mut cdf = vec![0.0];
    cdf.extend(inner.iter().map(|e| e.value));
    cdf.push(1.0);
    let max_width = inner.iter().map(|e| e.upper - e.lower).fold(0.0, f64::max);
    Ok(NuTable { grid, cdf, max_width })
}

/// Largest `nu_w` mass of a level-`level` survivor element.
pub fn max_element_mass(ens: &Ensemble, fiber: i64, level: usize, table: &NuTable) -> Result<f64> {
    let part = survivor_partition(ens.maps(), &ens.word(fiber, level), 1_000_000)?;
    Ok(part.elements.iter().map(|e| table.mass(e.lo, e.hi)).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::DriverSpec;
    use crate::interval_fn::Resolution;
    use crate::transfer::tests::doubling_map;
    use crate::transfer::Potential;

    fn doubling(log_g: f64) -> Ensemble {
        Ensemble::single(doubling_map(vec![]), Potential::Constant(log_g)).unwrap()
    }

    #[test]
    fn doubling_half_weight_gives_lebesgue() {
        let ens = doubling(0.5f64.ln());
        let mut nu = ConformalFunctional::new(&ens, 0, &RpfParams::default());
        for (lo, hi) in [(0.1, 0.35), (0.3, 0.9), (0.0, 0.123)] {
            let v = nu.eval(&PiecewiseFn::indicator(0.0, 1.0, lo, hi).unwrap()).unwrap().value;
            assert!((v - (hi - lo)).abs() < 1e-10, "{lo} {hi} {v}");
        }
        let d = equivariant_density(&ens, 0, &RpfParams::default()).unwrap();
        assert!((d.q.esssup() - 1.0).abs() < 1e-14);
        assert!((d.lambda_minus - 1.0).abs() < 1e-14);
    }

    #[test]
    fn doubling_multipliers() {
        for (log_g, lam) in [(0.0, 2.0), (0.5f64.ln(), 1.0)] {
            let m = multipliers(&doubling(log_g), 3, 10).unwrap();
            assert!((m.lambda_minus - lam).abs() < 1e-14 && (m.lambda_plus - lam).abs() < 1e-14);
        }
    }

    #[test]
    fn ratio_multiplier_matches_conformal_value() {
        // log-affine weight: the density is not constant
        let phi = PiecewiseFn::affine(0.0, 1.0, 0.3, -0.2);
        let ens = Ensemble::single(doubling_map(vec![]), Potential::LogPiecewise(vec![phi])).unwrap();
        let m = multipliers(&ens, 0, 40).unwrap();
        let d = duality_residual(&ens, 0, &RpfParams::default()).unwrap();
        assert!((m.lambda_plus - d.lambda_plus).abs() < 1e-9 * d.lambda_plus, "{m:?} {d:?}");
        assert!((m.lambda_minus - d.lambda_minus).abs() < 1e-9 * d.lambda_minus);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn conformal_functional_is_linear(
            lo in 0.0f64..0.5, w in 0.05f64..0.5, slope in -0.9f64..0.9, a in 0.1f64..3.0, b in 0.1f64..3.0,
        ) {
            let phi = PiecewiseFn::affine(0.0, 1.0, 0.4, -0.3);
            let ens = Ensemble::single(doubling_map(vec![]), Potential::LogPiecewise(vec![phi])).unwrap();
            let mut nu = ConformalFunctional::new(&ens, 2, &RpfParams::default());
            let f = PiecewiseFn::indicator(0.0, 1.0, lo, lo + w).unwrap();
            let g = PiecewiseFn::affine(0.0, 1.0, slope, 1.0);
            let combo = PiecewiseFn::combine(a, &f, b, &g).unwrap();
            let lhs = nu.eval(&combo).unwrap().value;
            let rhs = a * nu.eval(&f).unwrap().value + b * nu.eval(&g).unwrap().value;
            // sampled pieces carry interpolation error near 1e-9 after many steps
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-7 * rhs.abs().max(1.0), "{} vs {}", lhs, rhs);
        }
    }

    #[test]
    fn bracket_contains_value() {
        let ens = doubling(0.0);
        let mut nu = ConformalFunctional::new(&ens, 0, &RpfParams { nu_cap: 5, nu_min_depth: 1, ..RpfParams::default() });
        let e = nu.eval(&PiecewiseFn::affine(0.0, 1.0, 3.0, -1.0)).unwrap();
        assert!(e.lower <= e.value + 1e-15 && e.value <= e.upper + 1e-15);
        assert!((e.value - 0.5).abs() <= e.upper - e.lower);
    }

    #[test]
    fn doubling_lyapunov_is_log_two() {
        let ens = doubling(0.0);
        let l = lyapunov_exponent(&ens, 50, 4, 0, 0).unwrap();
        assert!((l.estimate.mean - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn density_is_independent_of_start() {
        let maps = vec![doubling_map(vec![(0.25, 0.375)]), doubling_map(vec![(0.6, 0.7)])];
        let ens = Ensemble::new(
            maps,
            Potential::Constant(0.0),
            DriverSpec::Iid { probabilities: vec![0.5, 0.5], seed: 3 },
            Resolution::default(),
        )
        .unwrap();
        let p = RpfParams::fixed(40);
        let a = equivariant_density(&ens, 7, &p).unwrap();
        let b = equivariant_density_from(&ens, 7, &p, &PiecewiseFn::affine(0.0, 1.0, 0.5, 1.0)).unwrap();
        assert!(PiecewiseFn::sup_abs_diff(&a.q, &b.q).unwrap() < 1e-9);
    }

    #[test]
    fn doubling_first_correlation() {
        // Cor(1) of f = h = x under Lebesgue and the doubling map is 1/24
        let ens = doubling(0.5f64.ln()).with_resolution(Resolution::with_nodes(1 << 14));
        let x = PiecewiseFn::affine(0.0, 1.0, 1.0, 0.0);
        let r = correlation_decay(&ens, 0, &x, &x, 3, &RpfParams::default()).unwrap();
        assert!((r.values[0].1 - 1.0 / 24.0).abs() < 1e-8);
        assert!((r.values[1].1 - 1.0 / 48.0).abs() < 1e-8);
    }

    #[test]
    fn table_masses_vanish_on_fine_elements() {
        let ens = Ensemble::single(doubling_map(vec![(0.25, 0.375)]), Potential::Constant(0.0)).unwrap();
        let t = nu_table(&ens, 0, 256, &RpfParams::default()).unwrap();
        let masses: Vec<f64> =
            (1..=5).map(|k| max_element_mass(&ens, 0, k, &t).unwrap()).collect();
        assert!(masses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(masses[4] < 0.1);
        assert!(t.cdf.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
}
