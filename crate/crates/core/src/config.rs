//! JSON run configurations and the built-in examples.

use serde::{Deserialize, Serialize};

use crate::driver::DriverSpec;
use crate::error::{Result, RpfError};
use crate::escape::HoleFamily;
use crate::interval_fn::{Piece, PiecewiseFn, Resolution};
use crate::random_map::{Branch, BranchFamily, OpenMap};
use crate::rpf::RpfParams;
use crate::transfer::{Ensemble, Potential};

pub const SCHEMA_VERSION: u32 = 1;

/// Built-in examples as `(name, json)`.
pub const BUILTINS: &[(&str, &str)] = &[
    ("figure1", include_str!("../builtins/figure1.json")),
    ("mp-ensemble", include_str!("../builtins/mp-ensemble.json")),
    ("intermittent-holes", include_str!("../builtins/intermittent-holes.json")),
    ("doubling-baseline", include_str!("../builtins/doubling-baseline.json")),
];

pub fn builtin(name: &str) -> Result<RunConfig> {
    let (_, text) = BUILTINS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| RpfError::input(format!("no built-in example named {name:?}")))?;
    RunConfig::from_json(text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    #[serde(flatten)]
    pub family: BranchFamily,
    pub domain: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub branches: Vec<BranchConfig>,
    #[serde(default)]
    pub hole: Vec<(f64, f64)>,
}

fn unit_base() -> (f64, f64) {
    (0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default = "unit_base")]
    pub base: (f64, f64),
    pub maps: Vec<MapConfig>,
}

/// `log g = slope * x + intercept` on `domain`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineLogPiece {
    pub domain: (f64, f64),
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    Constant { log_g: f64 },
    Geometric { t: f64 },
    /// One list of pieces per symbol, tiling the base interval.
    PiecewiseAffineLog { pieces: Vec<Vec<AffineLogPiece>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolutionConfig {
    /// Sample nodes of a function piece spanning the whole base.
    pub nodes: usize,
    pub nu_cells: usize,
    pub ulam_cells: usize,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        ResolutionConfig { nodes: 4096, nu_cells: 1024, ulam_cells: 4096 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    /// Iteration length for pressures, residuals and escape fits.
    pub n: usize,
    /// Largest block length for certification and profiles.
    pub n_max: usize,
    pub base_points: usize,
    pub fiber: i64,
    pub burn_in: usize,
    pub density_depth: usize,
    pub density_tol: f64,
    pub nu_tol: f64,
    pub nu_cap: usize,
    pub a_tol: f64,
    pub correlation_n: usize,
    /// `(K, xi)` with `xi^{(n)} <= K xi^n`, if known.
    pub xi_growth: Option<(f64, f64)>,
}

impl Default for RunParams {
    fn default() -> Self {
        let p = RpfParams::default();
        RunParams {
            n: 30,
            n_max: 8,
            base_points: 64,
            fiber: 0,
            burn_in: 0,
            density_depth: p.density_depth,
            density_tol: p.density_tol,
            nu_tol: p.nu_tol,
            nu_cap: p.nu_cap,
            a_tol: 1e-10,
            correlation_n: 20,
            xi_growth: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub ensemble: EnsembleConfig,
    pub potential: PotentialConfig,
    pub driver: DriverSpec,
    #[serde(default)]
    pub resolution: ResolutionConfig,
    #[serde(default)]
    pub run: RunParams,
    #[serde(default)]
    pub escape: Option<HoleFamily>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| RpfError::input(format!("config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(RpfError::input(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        let r = &cfg.run;
        if !(r.nu_tol > 0.0 && r.a_tol > 0.0) || r.n == 0 || r.base_points == 0 {
            return Err(RpfError::input("tolerances, n and base_points must be positive"));
        }
        if cfg.resolution.nodes < 2 || cfg.resolution.nu_cells < 2 || cfg.resolution.ulam_cells < 2 {
            return Err(RpfError::input("resolution counts must be at least 2"));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces the seed of a random driver.
    pub fn set_seed(&mut self, s: u64) {
        match &mut self.driver {
            DriverSpec::Iid { seed, .. } | DriverSpec::Markov { seed, .. } => *seed = s,
            DriverSpec::Rotation { .. } => {}
        }
    }

    pub fn rpf_params(&self) -> RpfParams {
        RpfParams {
            density_depth: self.run.density_depth,
            density_tol: self.run.density_tol,
            nu_tol: self.run.nu_tol,
            nu_min_depth: RpfParams::default().nu_min_depth,
            nu_cap: self.run.nu_cap,
        }
    }

    pub fn ensemble(&self) -> Result<Ensemble> {
        let base = self.ensemble.base;
        let maps = self
            .ensemble
            .maps
            .iter()
            .map(|m| {
                let branches = m
                    .branches
                    .iter()
                    .map(|b| Branch::new(b.domain, b.family.clone()))
                    .collect::<Result<Vec<_>>>()?;
                OpenMap::new(base, branches, m.hole.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let potential = match &self.potential {
            PotentialConfig::Constant { log_g } => Potential::Constant(*log_g),
            PotentialConfig::Geometric { t } => Potential::Geometric(*t),
            PotentialConfig::PiecewiseAffineLog { pieces } => Potential::LogPiecewise(
                pieces.iter().map(|p| log_weight(base, p)).collect::<Result<Vec<_>>>()?,
            ),
        };
        let res = Resolution { nodes: self.resolution.nodes, ..Resolution::default() };
        let driver = self.driver.clone();
        let symbols = driver.validate()?;
        if symbols != maps.len() {
            return Err(RpfError::input(format!(
                "driver has {symbols} symbols but {} maps are configured",
                maps.len()
            )));
        }
        Ensemble::new(maps, potential, driver, res)
    }
}

fn log_weight(base: (f64, f64), pieces: &[AffineLogPiece]) -> Result<PiecewiseFn> {
    let mut p: Vec<&AffineLogPiece> = pieces.iter().collect();
    p.sort_by(|a, b| a.domain.0.total_cmp(&b.domain.0));
    let tol = 1e-12 * (base.1 - base.0);
    let mut breaks = vec![base.0];
    for (i, piece) in p.iter().enumerate() {
        let last = *breaks.last().unwrap();
        if (piece.domain.0 - last).abs() > tol || !(piece.domain.1 > piece.domain.0) {
            return Err(RpfError::input(format!("log-weight piece {i} does not continue the tiling")));
        }
        breaks.push(piece.domain.1);
    }
    if p.is_empty() || (breaks.last().unwrap() - base.1).abs() > tol {
        return Err(RpfError::input("log-weight pieces must tile the base interval"));
    }
    *breaks.first_mut().unwrap() = base.0;
    *breaks.last_mut().unwrap() = base.1;
    PiecewiseFn::new(
        breaks,
        p.iter().map(|q| Piece::Affine { slope: q.slope, intercept: q.intercept }).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_map::branch_stats;

    #[test]
    fn builtins_load() {
        for (name, _) in BUILTINS {
            let cfg = builtin(name).unwrap();
            assert_eq!(&cfg.name, name);
            cfg.ensemble().unwrap();
            if let Some(f) = &cfg.escape {
                f.validate(cfg.ensemble.maps.len()).unwrap();
            }
        }
    }

    #[test]
    fn figure1_branch_counts() {
        let ens = builtin("figure1").unwrap().ensemble().unwrap();
        let counts: Vec<(u128, u128)> = (0..2)
            .map(|s| {
                let st = branch_stats(ens.maps(), &[s]).unwrap();
                (st.full, st.partial_run)
            })
            .collect();
        assert_eq!(counts, vec![(5, 2), (6, 2)]);
    }

    #[test]
    fn round_trip_and_rejections() {
        let cfg = builtin("doubling-baseline").unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let bad = cfg.to_json().replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(RunConfig::from_json(&bad), Err(RpfError::InvalidInput(_))));
        let typo = cfg.to_json().replace("\"hole\"", "\"holes\"");
        assert!(RunConfig::from_json(&typo).is_err());
    }

    #[test]
    fn piecewise_log_weight_is_built() {
        let text = builtin("doubling-baseline").unwrap().to_json().replace(
            "\"kind\": \"constant\",\n    \"log_g\": 0.0",
            "\"kind\": \"piecewise_affine_log\", \"pieces\": [[{\"domain\": [0.0, 0.5], \"slope\": 0.0, \"intercept\": -1.0}, {\"domain\": [0.5, 1.0], \"slope\": 1.0, \"intercept\": -1.5}]]",
        );
        let ens = RunConfig::from_json(&text).unwrap().ensemble().unwrap();
        assert!(matches!(ens.potential(), Potential::LogPiecewise(_)));
        assert!((ens.weight_summary(0).sup - (-0.5f64).exp()).abs() < 1e-14);
    }
}
