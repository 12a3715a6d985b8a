//! Strong-contraction certificates.
//!
//! Every integral over the driving system is replaced by a Monte-Carlo mean
//! over base points `base + i * spacing`; estimates carry standard errors.
//! For rotations the same means are Birkhoff window averages.

use rayon::prelude::*;
use serde::Serialize;

use crate::cone::{cone_member, contraction_factor, diameter_bound, theta};
use crate::error::{Result, RpfError};
use crate::interval_fn::PiecewiseFn;
use crate::random_map::{branch_stats, partial_run_bound};
use crate::stats::Estimate;
use crate::transfer::{Ensemble, LyConstants};

/// Terms whose ratio fails to drop below one this many times in a row abort the series.
const NON_DECAY_LIMIT: usize = 64;
const MAX_TERMS: usize = 100_000;

fn base_points(base: i64, k: usize, spacing: usize) -> Vec<i64> {
    (0..k as i64).map(|i| base + i * spacing as i64).collect()
}

fn block_constants(ens: &Ensemble, fiber: i64, n: usize) -> Result<LyConstants> {
    ens.ly_constants(&ens.word(fiber, n))
}

/// Monte-Carlo samples of `log c_{w,n}`.
pub fn log_c_samples(ens: &Ensemble, n: usize, k: usize, base: i64) -> Result<Vec<f64>> {
    base_points(base, k, n)
        .par_iter()
        .map(|&b| Ok(block_constants(ens, b, n)?.log_c))
        .collect()
}

/// Outcome of the block-length search.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NStarSearch {
    /// `(n, estimate of the mean of log c_{w,n})`.
    pub per_n: Vec<(usize, Estimate)>,
    pub n_star: Option<usize>,
    pub gamma: Option<f64>,
}

/// Smallest `n <= n_max` with `mean + 2 stderr < 0` for `log c_{w,n}`.
pub fn search_n_star(ens: &Ensemble, n_max: usize, k: usize, base: i64) -> Result<NStarSearch> {
    if n_max == 0 || k == 0 {
        return Err(RpfError::input("need n_max >= 1 and at least one base point"));
    }
    let mut per_n = Vec::new();
    for n in 1..=n_max {
        let est = Estimate::from_samples(&log_c_samples(ens, n, k, base)?);
        per_n.push((n, est));
        if est.mean + 2.0 * est.stderr < 0.0 {
            return Ok(NStarSearch { per_n, n_star: Some(n), gamma: Some((0.5 * est.mean).exp()) });
        }
    }
    Ok(NStarSearch { per_n, n_star: None, gamma: None })
}

/// Truncated cone-parameter series with its tail estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AOmega {
    pub value: f64,
    pub terms: usize,
    /// Heuristic tail bound at truncation.
    pub tail: f64,
}

/// Sums `a = sum_j gamma^{-j-1} d_{j+1} prod_{k=1}^{j} c_k`, where `log_cd(k)`
/// returns `(log c_k, log d_k)` for the block `k` steps back.
pub fn a_omega_from<F>(mut log_cd: F, gamma: f64, tol: f64) -> Result<AOmega>
where
    F: FnMut(usize) -> Result<(f64, f64)>,
{
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(RpfError::input(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let lg = gamma.ln();
    let mut log_prod = 0.0; // sum of log(c_k / gamma), k <= j
    let mut sum = 0.0;
    let mut d_max: f64 = 0.0;
    let mut ratios: Vec<f64> = Vec::new();
    let mut stalled = 0;
    for j in 0..MAX_TERMS {
        let (log_c, log_d) = log_cd(j + 1)?;
        d_max = d_max.max(log_d.exp());
        sum += (log_prod + log_d - lg).exp();
        let step = log_c - lg;
        ratios.push(step);
        log_prod += step;
        let window = &ratios[ratios.len().saturating_sub(NON_DECAY_LIMIT)..];
        let r = (window.iter().sum::<f64>() / window.len() as f64).exp();
        if r < 1.0 {
            stalled = 0;
            let tail = log_prod.exp() * d_max / gamma / (1.0 - r);
            if tail < tol || log_prod == f64::NEG_INFINITY {
                return Ok(AOmega { value: sum, terms: j + 1, tail });
            }
        } else {
            stalled += 1;
            if stalled >= NON_DECAY_LIMIT {
                return Err(RpfError::numerical(format!(
                    "cone-parameter series does not decay after {} terms",
                    j + 1
                )));
            }
        }
    }
    Err(RpfError::numerical("cone-parameter series hit the term cap"))
}

/// `a_w` at `fiber` for blocks of length `n_star`.
pub fn a_omega(ens: &Ensemble, fiber: i64, n_star: usize, gamma: f64, tol: f64) -> Result<AOmega> {
    a_omega_from(
        |k| {
            let lc = block_constants(ens, fiber - (k * n_star) as i64, n_star)?;
            Ok((lc.log_c, lc.log_d))
        },
        gamma,
        tol,
    )
}

/// One block of [`contraction_profile`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ContractionStep {
    pub fiber: i64,
    pub theta_before: f64,
    pub theta_after: f64,
    /// `tanh(Delta / 4)` for the image cone at the next block fiber.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionProfile {
    pub steps: Vec<ContractionStep>,
    /// Geometric mean of `theta_after / theta_before` over steps with finite positive distances.
    pub geometric_mean: f64,
}

/// Follows `f, h` through `steps` blocks of length `n_star` and records the
/// projective distance before and after each block, in the cones `C_{a_w}`.
#[allow(clippy::too_many_arguments)]
pub fn contraction_profile(
    ens: &Ensemble,
    fiber: i64,
    steps: usize,
    n_star: usize,
    gamma: f64,
    f: &PiecewiseFn,
    h: &PiecewiseFn,
    tol: f64,
) -> Result<ContractionProfile> {
    let block = n_star as i64;
    let mut a = a_omega(ens, fiber, n_star, gamma, tol)?.value;
    if !(cone_member(f, a).member && cone_member(h, a).member) {
        return Err(RpfError::assumption("starting functions are not in the cone C_a at the first fiber"));
    }
    let (mut f, mut h) = (f.clone(), h.clone());
    let mut out = Vec::with_capacity(steps);
    for j in 0..steps as i64 {
        let w = fiber + j * block;
        let a_next = a_omega(ens, w + block, n_star, gamma, tol)?.value;
        let before = theta(&f, &h, a)?;
        let lf = ens.apply_word(w, n_star, &f)?;
        let lh = ens.apply_word(w, n_star, &h)?;
        f = lf.scale(1.0 / lf.essinf());
        h = lh.scale(1.0 / lh.essinf());
        let after = theta(&f, &h, a_next)?;
        let bound = contraction_factor(diameter_bound(gamma, a_next)?);
        out.push(ContractionStep { fiber: w, theta_before: before, theta_after: after, bound });
        a = a_next;
    }
    let logs: Vec<f64> = out
        .iter()
        .filter(|s| s.theta_before.is_finite() && s.theta_before > 0.0 && s.theta_after > 0.0)
        .map(|s| (s.theta_after / s.theta_before).ln())
        .collect();
    let geometric_mean = if logs.is_empty() { f64::NAN } else { (logs.iter().sum::<f64>() / logs.len() as f64).exp() };
    Ok(ContractionProfile { steps: out, geometric_mean })
}

/// Monte-Carlo left-hand sides of the three closed-form sufficient conditions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SufficientConditions {
    /// Mean of `log c_{w,1}`.
    pub one_step: Estimate,
    /// Mean of `log sup g - log Einf g + log(2 + xi) - log b_f`.
    pub general: Estimate,
    /// Mean of `log sup g - log Einf g`, plus `log xi - beta_f`.
    pub xi_bounded: Estimate,
    /// `(K, xi)` used for the third condition.
    pub xi_growth: (f64, f64),
    /// Estimate of `beta_f` used for the third condition.
    pub beta_f: Estimate,
}

/// `xi_growth = Some((K, xi))` asserts `xi^{(n)} <= K xi^n`; without it the
/// largest one-step `xi + 2` is used, which bounds the growth rate of the
/// partial-run bound `n prod (xi_j + 2)`.
pub fn sufficient_conditions(
    ens: &Ensemble,
    k: usize,
    base: i64,
    beta_n: usize,
    xi_growth: Option<(f64, f64)>,
) -> Result<SufficientConditions> {
    let rows = base_points(base, k, 1)
        .par_iter()
        .map(|&b| {
            let lc = block_constants(ens, b, 1)?;
            let amp = lc.bounds.log_sup_prod - lc.bounds.log_inf_on_survivor;
            let general = amp + (2.0 + lc.partial_run as f64).ln() - (lc.full_count as f64).ln();
            Ok((lc.log_c, general, amp))
        })
        .collect::<Result<Vec<_>>>()?;
    let (kk, xi) = match xi_growth {
        Some((kk, xi)) => {
            if !(kk >= 1.0 && xi >= 1.0) {
                return Err(RpfError::input("growth constants must satisfy K, xi >= 1"));
            }
            (kk, xi)
        }
        None => {
            let m = ens.maps().iter().map(|m| m.partial_run()).max().unwrap_or(0);
            (1.0, m as f64 + 2.0)
        }
    };
    let beta_f = Estimate::from_samples(&beta_samples(ens, beta_n, k, base)?);
    let amp: Vec<f64> = rows.iter().map(|r| r.2 + xi.ln() - beta_f.mean).collect();
    let mut xi_bounded = Estimate::from_samples(&amp);
    xi_bounded.stderr = xi_bounded.stderr.hypot(beta_f.stderr);
    Ok(SufficientConditions {
        one_step: Estimate::from_samples(&rows.iter().map(|r| r.0).collect::<Vec<_>>()),
        general: Estimate::from_samples(&rows.iter().map(|r| r.1).collect::<Vec<_>>()),
        xi_bounded,
        xi_growth: (kk, xi),
        beta_f,
    })
}

fn beta_samples(ens: &Ensemble, n: usize, k: usize, base: i64) -> Result<Vec<f64>> {
    base_points(base, k, n)
        .par_iter()
        .map(|&b| Ok((branch_stats(ens.maps(), &ens.word(b, n))?.full as f64).ln() / n as f64))
        .collect()
}

/// Subadditive limit profiles for `n = 1..=n_max`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KingmanProfile {
    /// `(1/n) log b_f^{(n)}`, non-decreasing in `n`.
    pub beta_f: Vec<(usize, Estimate)>,
    /// `-(1/n) log Einf g^{(n)}`, non-increasing in `n`.
    pub neg_phi_minus: Vec<(usize, Estimate)>,
    /// Mean of `log sup g`.
    pub phi_plus: Estimate,
}

impl KingmanProfile {
    /// Largest violation of the monotone directions, in standard errors.
    pub fn worst_violation(&self) -> f64 {
        fn worst(rows: &[(usize, Estimate)], sign: f64) -> f64 {
            rows.windows(2)
                .map(|w| {
                    let drop = sign * (w[0].1.mean - w[1].1.mean);
                    let se = w[0].1.stderr.hypot(w[1].1.stderr);
                    if drop <= 0.0 {
                        0.0
                    } else if se == 0.0 {
                        if drop > 1e-12 { f64::INFINITY } else { 0.0 }
                    } else {
                        drop / se
                    }
                })
                .fold(0.0, f64::max)
        }
        worst(&self.beta_f, 1.0).max(worst(&self.neg_phi_minus, -1.0))
    }
}

pub fn kingman_profile(ens: &Ensemble, n_max: usize, k: usize, base: i64) -> Result<KingmanProfile> {
    if n_max < 1 || k == 0 {
        return Err(RpfError::input("need n_max >= 1 and at least one base point"));
    }
    let pts = base_points(base, k, n_max + 1);
    let mut beta_f = Vec::new();
    let mut neg_phi_minus = Vec::new();
    for n in 1..=n_max {
        let rows = pts
            .par_iter()
            .map(|&b| {
                let word = ens.word(b, n);
                let full = branch_stats(ens.maps(), &word)?.full as f64;
                let wb = ens.weight_bounds(&word)?;
                Ok((full.ln() / n as f64, -wb.log_inf_on_survivor / n as f64))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        beta_f.push((n, Estimate::from_samples(&rows.iter().map(|r| r.0).collect::<Vec<_>>())));
        neg_phi_minus.push((n, Estimate::from_samples(&rows.iter().map(|r| r.1).collect::<Vec<_>>())));
    }
    let sup: Vec<f64> = pts.iter().map(|&b| ens.weight_summary(ens.symbol_at(b)).sup.ln()).collect();
    Ok(KingmanProfile { beta_f, neg_phi_minus, phi_plus: Estimate::from_samples(&sup) })
}

/// Partial-run growth against `n prod (xi_j + 2)` on sampled words.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct XiGrowthReport {
    pub words_checked: usize,
    pub worst_ratio: f64,
    /// `(base point, n, xi, bound)` for every violation.
    pub violations: Vec<(i64, usize, u128, f64)>,
}

impl XiGrowthReport {
    pub fn check(&self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(&(b, n, xi, bound)) => Err(RpfError::numerical(format!(
                "partial run {xi} exceeds its bound {bound} at base point {b}, n = {n}"
            ))),
        }
    }
}

pub fn xi_growth_check(ens: &Ensemble, n_max: usize, k: usize, base: i64) -> Result<XiGrowthReport> {
    let pts = base_points(base, k, n_max + 1);
    let rows = pts
        .par_iter()
        .map(|&b| {
            let mut out = Vec::with_capacity(n_max);
            for n in 1..=n_max {
                let word = ens.word(b, n);
                let xi = branch_stats(ens.maps(), &word)?.partial_run;
                out.push((b, n, xi, partial_run_bound(ens.maps(), &word)));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<_> = rows.into_iter().flatten().collect();
    let worst_ratio = all.iter().map(|r| r.2 as f64 / r.3).fold(0.0, f64::max);
    let violations = all.iter().filter(|r| r.2 as f64 > r.3).cloned().collect();
    Ok(XiGrowthReport { words_checked: all.len(), worst_ratio, violations })
}

/// Options for [`certify`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertifyOptions {
    pub n_max: usize,
    pub samples: usize,
    pub base: i64,
    pub a_points: usize,
    pub a_tol: f64,
    pub kingman_n: usize,
    pub xi_growth: Option<(f64, f64)>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            n_max: 8,
            samples: 64,
            base: 0,
            a_points: 8,
            a_tol: 1e-10,
            kingman_n: 6,
            xi_growth: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub search: NStarSearch,
    /// `(fiber, a_w)` at sampled base points; empty without a certified block length.
    pub a_omega: Vec<(i64, AOmega)>,
    pub conditions: SufficientConditions,
    pub kingman: KingmanProfile,
}

impl Certificate {
    pub fn strongly_contracting(&self) -> bool {
        self.search.n_star.is_some()
    }
}

pub fn certify(ens: &Ensemble, opts: &CertifyOptions) -> Result<Certificate> {
    let search = search_n_star(ens, opts.n_max, opts.samples, opts.base)?;
    let a_omega = match (search.n_star, search.gamma) {
        (Some(n), Some(g)) => base_points(opts.base, opts.a_points, n)
            .par_iter()
            .map(|&b| Ok((b, a_omega(ens, b, n, g, opts.a_tol)?)))
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let conditions =
        sufficient_conditions(ens, opts.samples, opts.base, opts.kingman_n, opts.xi_growth)?;
    let kingman = kingman_profile(ens, opts.kingman_n, opts.samples, opts.base)?;
    Ok(Certificate { search, a_omega, conditions, kingman })
}
