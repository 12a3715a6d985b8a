//! Invertible driving systems: i.i.d. shifts, stationary Markov chains and
//! irrational rotations.
//!
//! Symbols are addressable at any integer index, including negative ones, so
//! backward words for pull-back iteration are as cheap as forward ones. The
//! uniform variate at index `k` comes from a ChaCha stream positioned at a
//! word offset derived from `k`, which makes `symbol_at` a pure function of
//! `(seed, k)`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RpfError};

const SUM_TOL: f64 = 1e-9;

/// Cell of the rotation coding partition: `[lo, hi)` carries `symbol`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationCell {
    pub interval: (f64, f64),
    pub symbol: usize,
}

/// Description of the driving system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DriverSpec {
    Iid { probabilities: Vec<f64>, seed: u64 },
    Markov { transition: Vec<Vec<f64>>, stationary: Vec<f64>, seed: u64 },
    Rotation { alpha: f64, partition: Vec<RotationCell>, base_point: f64 },
}

/// Uniform variate in `[0, 1)` attached to index `k` of the stream `seed`.
pub fn uniform_at(seed: u64, k: i64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = (k as i128 - i64::MIN as i128) as u128;
    rng.set_word_pos(offset * 2);
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding slack: last symbol with positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(RpfError::input(format!("{what}: entries must be finite and non-negative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(RpfError::input(format!("{what}: entries sum to {s}, not 1")));
    }
    Ok(())
}

impl DriverSpec {
    /// Checks the data and returns the number of symbols.
    pub fn validate(&self) -> Result<usize> {
        match self {
            DriverSpec::Iid { probabilities, .. } => {
                check_distribution(probabilities, "probabilities")?;
                Ok(probabilities.len())
            }
            DriverSpec::Markov { transition, stationary, .. } => {
                let n = stationary.len();
                check_distribution(stationary, "stationary vector")?;
                if transition.len() != n {
                    return Err(RpfError::input("transition matrix size does not match stationary vector"));
                }
                for (i, row) in transition.iter().enumerate() {
                    if row.len() != n {
                        return Err(RpfError::input("transition matrix is not square"));
                    }
                    check_distribution(row, &format!("transition row {i}"))?;
                }
                for j in 0..n {
                    let pj: f64 = (0..n).map(|i| stationary[i] * transition[i][j]).sum();
                    if (pj - stationary[j]).abs() > SUM_TOL {
                        return Err(RpfError::input("stationary vector is not invariant"));
                    }
                }
                Ok(n)
            }
            DriverSpec::Rotation { alpha, partition, base_point } => {
                if !alpha.is_finite() || !base_point.is_finite() {
                    return Err(RpfError::input("rotation needs finite alpha and base point"));
                }
                let mut cells: Vec<&RotationCell> = partition.iter().collect();
                cells.sort_by(|a, b| a.interval.0.total_cmp(&b.interval.0));
                let mut cur = 0.0;
                for c in &cells {
                    if (c.interval.0 - cur).abs() > SUM_TOL || c.interval.1 <= c.interval.0 {
                        return Err(RpfError::input("rotation cells must tile [0, 1)"));
                    }
                    cur = c.interval.1;
                }
                if (cur - 1.0).abs() > SUM_TOL {
                    return Err(RpfError::input("rotation cells must tile [0, 1)"));
                }
                Ok(cells.iter().map(|c| c.symbol + 1).max().unwrap_or(0))
            }
        }
    }

    /// Symbol at index `k` of the driving orbit.
    pub fn symbol_at(&self, k: i64) -> usize {
        match self {
            DriverSpec::Iid { probabilities, seed } => pick(probabilities, uniform_at(*seed, k)),
            DriverSpec::Markov { .. } => self.word(k, 1)[0],
            DriverSpec::Rotation { alpha, partition, base_point } => {
                let x = (base_point + k as f64 * alpha).rem_euclid(1.0);
                partition
                    .iter()
                    .find(|c| x >= c.interval.0 && x < c.interval.1)
                    .or_else(|| partition.iter().max_by(|a, b| a.interval.1.total_cmp(&b.interval.1)))
                    .map(|c| c.symbol)
                    .unwrap_or(0)
            }
        }
    }

    /// Symbols at indices `start, ..., start + len - 1`.
    pub fn word(&self, start: i64, len: usize) -> Vec<usize> {
        match self {
            DriverSpec::Markov { transition, stationary, seed } => {
                let end = start + len as i64 - 1;
                let lo = start.min(0);
                let hi = end.max(0);
                let path = markov_path(transition, stationary, *seed, lo, hi);
                (start..=end).map(|k| path[(k - lo) as usize]).collect()
            }
            _ => (start..start + len as i64).map(|k| self.symbol_at(k)).collect(),
        }
    }
}

/// States at indices `lo..=hi` (with `lo <= 0 <= hi`).
fn markov_path(p: &[Vec<f64>], pi: &[f64], seed: u64, lo: i64, hi: i64) -> Vec<usize> {
    let n = pi.len();
    let mut path = vec![0usize; (hi - lo + 1) as usize];
    let at = |k: i64| (k - lo) as usize;
    path[at(0)] = pick(pi, uniform_at(seed, 0));
    for k in 1..=hi {
        let s = path[at(k - 1)];
        path[at(k)] = pick(&p[s], uniform_at(seed, k));
    }
    // time reversal: R_ij = pi_j P_ji / pi_i
    let mut row = vec![0.0; n];
    for k in (lo..0).rev() {
        let s = path[at(k + 1)];
        for (j, r) in row.iter_mut().enumerate() {
            *r = if pi[s] > 0.0 { pi[j] * p[j][s] / pi[s] } else { 0.0 };
        }
        path[at(k)] = pick(&row, uniform_at(seed, k));
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iid(p: f64, seed: u64) -> DriverSpec {
        DriverSpec::Iid { probabilities: vec![p, 1.0 - p], seed }
    }

    fn markov() -> DriverSpec {
        // stationary vector of [[0.9, 0.1], [0.3, 0.7]] is (3/4, 1/4)
        DriverSpec::Markov {
            transition: vec![vec![0.9, 0.1], vec![0.3, 0.7]],
            stationary: vec![0.75, 0.25],
            seed: 11,
        }
    }

    #[test]
    fn iid_frequency_within_four_sigma() {
        let d = iid(0.3, 5);
        let n = 20_000;
        let zeros = (-10_000..10_000).filter(|&k| d.symbol_at(k) == 0).count() as f64;
        let sigma = (n as f64 * 0.3 * 0.7).sqrt();
        assert!((zeros - 0.3 * n as f64).abs() < 4.0 * sigma);
    }

    #[test]
    fn markov_pairs_match_on_both_sides() {
        let d = markov();
        for (start, len) in [(0i64, 40_000usize), (-40_000, 40_000)] {
            let w = d.word(start, len);
            let from0 = w[..len - 1].iter().filter(|&&s| s == 0).count() as f64;
            let stay0 = w.windows(2).filter(|p| p[0] == 0 && p[1] == 0).count() as f64;
            assert!((stay0 / from0 - 0.9).abs() < 0.01, "start {start}");
        }
    }

    #[test]
    fn markov_word_agrees_with_symbol_at() {
        let d = markov();
        let w = d.word(-30, 60);
        for (i, &s) in w.iter().enumerate() {
            assert_eq!(s, d.symbol_at(-30 + i as i64));
        }
    }

    #[test]
    fn non_stationary_vector_is_rejected() {
        let d = DriverSpec::Markov {
            transition: vec![vec![0.9, 0.1], vec![0.3, 0.7]],
            stationary: vec![0.5, 0.5],
            seed: 0,
        };
        assert!(matches!(d.validate(), Err(RpfError::InvalidInput(_))));
    }

    #[test]
    fn bad_probabilities_are_rejected() {
        assert!(DriverSpec::Iid { probabilities: vec![0.5, 0.6], seed: 0 }.validate().is_err());
        assert!(DriverSpec::Iid { probabilities: vec![-0.1, 1.1], seed: 0 }.validate().is_err());
    }

    fn rotation(x0: f64) -> DriverSpec {
        DriverSpec::Rotation {
            alpha: (5f64.sqrt() - 1.0) / 2.0,
            partition: vec![
                RotationCell { interval: (0.0, 0.4), symbol: 0 },
                RotationCell { interval: (0.4, 1.0), symbol: 1 },
            ],
            base_point: x0,
        }
    }

    proptest! {
        #[test]
        fn symbols_are_reproducible(seed in any::<u64>(), k in any::<i64>()) {
            let d = iid(0.5, seed);
            prop_assert_eq!(d.symbol_at(k), d.symbol_at(k));
            let u = uniform_at(seed, k);
            prop_assert!((0.0..1.0).contains(&u));
        }

        #[test]
        fn rotation_is_conjugate_to_shift(x0 in 0.0f64..1.0, k in -500i64..500) {
            let d = rotation(x0);
            let alpha = (5f64.sqrt() - 1.0) / 2.0;
            let moved = rotation((x0 + k as f64 * alpha).rem_euclid(1.0));
            prop_assert_eq!(d.symbol_at(k), moved.symbol_at(0));
        }

        #[test]
        fn iid_words_are_windows_of_the_orbit(seed in any::<u64>(), start in -1000i64..1000) {
            let d = iid(0.4, seed);
            let w = d.word(start, 8);
            for (i, &s) in w.iter().enumerate() {
                prop_assert_eq!(s, d.symbol_at(start + i as i64));
            }
        }
    }
}
