//! JSON run configuration.
//!
//! ```json
//! {
//!   "task": "solve",
//!   "domain": {
//!     "shape": "disk", "params": { "center": [0, 0], "radius": 1 },
//!     "R": 2.5, "mu": 9.42477796,
//!     "obstacles": { "kind": "constant", "params": { "lower": 1, "upper": 2 } }
//!   },
//!   "resolution": 257,
//!   "penalty": { "eps": 0.05 }
//! }
//! ```
//!
//! Errors carry the JSON path of the offending key, e.g. `domain.mu`. Parsing checks
//! everything that needs no lattice; [`RunConfig::validate`] also rasterizes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{build_grid, rasterize, DomainMasks, DomainSpec, Shape};
use crate::energy::PenaltyParams;
use crate::error::{Error, Result};
use crate::obstacles::{make_obstacles, ObstacleKind, ObstaclePair};
use crate::solver::SolveParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Solve,
    Sweep,
    Verify,
    OracleCompare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldFormat {
    #[default]
    Csv,
    Bin,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub kind: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub shape: String,
    pub params: Value,
    #[serde(rename = "R")]
    pub outer_radius: f64,
    pub mu: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub obstacles: ObstacleConfig,
}

fn default_dim() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    /// Start each solve from the previous one; cold starts run in parallel.
    #[serde(default = "yes")]
    pub warm_start: bool,
}

fn default_rel_tol() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Refinement study resolutions (empty: skipped).
    pub resolutions: Vec<usize>,
    pub corner_exclusion: f64,
    /// Window radius of the flat-face probe (absent: skipped).
    pub flat_window: Option<f64>,
    /// Comparison energy of the volume bound (absent: the initial field's).
    pub m_probe: Option<f64>,
    /// Collar width of the clearance probe (absent: `2h`).
    pub clearance_delta: Option<f64>,
    pub nondegeneracy_probe: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            resolutions: Vec::new(),
            corner_exclusion: 0.25,
            flat_window: None,
            m_probe: None,
            clearance_delta: None,
            nondegeneracy_probe: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub domain: DomainConfig,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub solver: SolveParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Output directory (the CLI flag takes precedence).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub field_format: FieldFormat,
}

/// Largest accepted lattice size per axis.
pub const MAX_RESOLUTION: usize = 4097;

fn default_resolution() -> usize {
    129
}

/// A validated configuration turned into solver inputs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: DomainSpec,
    pub kind: ObstacleKind,
    pub masks: DomainMasks,
    pub obstacles: ObstaclePair,
    pub penalty: PenaltyParams,
}

fn at(path: &str, e: impl std::fmt::Display) -> Error {
    Error::config(path, e.to_string())
}

/// Tagged presets are buffered by serde, so errors inside `params` point at `params`.
fn typed<T: serde::de::DeserializeOwned>(v: Value, prefix: &str) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::config(format!("{prefix}.params"), e.to_string()))
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn shape(&self) -> Result<Shape> {
        let d = &self.domain;
        if !["disk", "rect", "polygon"].contains(&d.shape.as_str()) {
            return Err(at("domain.shape", format!("unknown shape {:?}; expected disk, rect or polygon", d.shape)));
        }
        typed(serde_json::json!({ "shape": d.shape, "params": d.params }), "domain")
    }

    pub fn obstacle_kind(&self) -> Result<ObstacleKind> {
        let o = &self.domain.obstacles;
        const KINDS: [&str; 4] = ["constant", "paraboloid", "touching", "tent"];
        if !KINDS.contains(&o.kind.as_str()) {
            return Err(at("domain.obstacles.kind", format!("unknown obstacle preset {:?}; expected one of {KINDS:?}", o.kind)));
        }
        let kind: ObstacleKind = typed(serde_json::json!({ "kind": o.kind, "params": o.params }), "domain.obstacles")?;
        kind.check_params().map_err(|e| at("domain.obstacles.params", e))?;
        Ok(kind)
    }

    pub fn spec(&self) -> Result<DomainSpec> {
        let d = &self.domain;
        if !(d.outer_radius.is_finite() && d.outer_radius > 0.0) {
            return Err(at("domain.R", format!("must be positive, got {}", d.outer_radius)));
        }
        if !(d.mu.is_finite() && d.mu > 0.0) {
            return Err(at("domain.mu", format!("must be positive, got {}", d.mu)));
        }
        if !(d.dim == 1 || d.dim == 2) {
            return Err(at("domain.dim", format!("must be 1 or 2, got {}", d.dim)));
        }
        DomainSpec::with_dim(self.shape()?, d.outer_radius, d.mu, d.dim).map_err(|e| match e {
            Error::InsufficientExteriorVolume { .. } => at("domain.mu", e),
            other => at("domain.params", other),
        })
    }

    /// Penalty parameters for a given `sup_D φ`.
    pub fn penalty_params(&self, sup_phi: f64) -> Result<PenaltyParams> {
        PenaltyParams::new(self.penalty.eps, self.domain.mu, sup_phi).map_err(|e| at("penalty.eps", e))
    }

    /// Builds the lattice problem at `resolution`.
    pub fn prepare_at(&self, resolution: usize) -> Result<Prepared> {
        let spec = self.spec()?;
        let kind = self.obstacle_kind()?;
        let g = build_grid(&spec, resolution).map_err(|e| at("resolution", e))?;
        let masks = rasterize(&spec, &g).map_err(|e| match e {
            Error::InsufficientExteriorVolume { .. } => at("domain.mu", e),
            other => at("domain", other),
        })?;
        let obstacles = make_obstacles(&kind, &masks).map_err(|e| at("domain.obstacles", e))?;
        let penalty = self.penalty_params(obstacles.sup_phi())?;
        if masks.omega_measure <= penalty.mu {
            return Err(at(
                "domain.mu",
                Error::InsufficientExteriorVolume { available: masks.omega_measure, mu: penalty.mu },
            ));
        }
        Ok(Prepared { spec, kind, masks, obstacles, penalty })
    }

    pub fn prepare(&self) -> Result<Prepared> {
        self.prepare_at(self.resolution)
    }

    /// Structural checks plus a full preparation of the lattice problem.
    pub fn validate(&self) -> Result<()> {
        self.check()?;
        self.prepare().map(|_| ())
    }

    /// Checks that need no lattice.
    pub fn check(&self) -> Result<()> {
        if !(6..=MAX_RESOLUTION).contains(&self.resolution) {
            return Err(at("resolution", format!("must lie in 6..={MAX_RESOLUTION}, got {}", self.resolution)));
        }
        self.spec()?;
        self.obstacle_kind()?;
        if !(self.penalty.eps > 0.0 && self.penalty.eps < 1.0) {
            return Err(at("penalty.eps", format!("must lie in (0, 1), got {}", self.penalty.eps)));
        }
        self.solver.validate().map_err(|e| at("solver", e))?;
        match (&self.sweep, self.task) {
            (None, Task::Sweep) => return Err(at("sweep", "task sweep needs a sweep section")),
            (Some(s), _) => {
                if s.eps.is_empty() {
                    return Err(at("sweep.eps", "must not be empty"));
                }
                if s.eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) || s.eps.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(at("sweep.eps", "must be strictly decreasing in (0, 1)"));
                }
                if !(s.rel_tol > 0.0) {
                    return Err(at("sweep.rel_tol", "must be positive"));
                }
            }
            _ => {}
        }
        let v = &self.verify;
        if !v.resolutions.is_empty() && (v.resolutions.len() < 3 || v.resolutions.windows(2).any(|w| w[1] <= w[0])) {
            return Err(at("verify.resolutions", "need at least 3 increasing resolutions"));
        }
        if !(v.corner_exclusion >= 0.0) {
            return Err(at("verify.corner_exclusion", "must be >= 0"));
        }
        if v.flat_window.is_some_and(|w| !(w > 0.0)) {
            return Err(at("verify.flat_window", "must be positive"));
        }
        if v.clearance_delta.is_some_and(|w| !(w > 0.0)) {
            return Err(at("verify.clearance_delta", "must be positive"));
        }
        for (i, &r) in v.resolutions.iter().enumerate() {
            if r > MAX_RESOLUTION {
                return Err(at(&format!("verify.resolutions[{i}]"), format!("must be at most {MAX_RESOLUTION}")));
            }
            build_grid(&self.spec()?, r).map_err(|e| at(&format!("verify.resolutions[{i}]"), e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: &str = r#"{
        "task": "solve",
        "domain": {
            "shape": "disk", "params": { "center": [0, 0], "radius": 1 },
            "R": 2.5, "mu": 9.42477796,
            "obstacles": { "kind": "constant", "params": { "lower": 1, "upper": 2 } }
        },
        "resolution": 65,
        "penalty": { "eps": 0.05 }
    }"#;

    fn with(path: &[&str], value: Value) -> String {
        let mut v: Value = serde_json::from_str(GOLDEN).unwrap();
        let mut cur = &mut v;
        for key in &path[..path.len() - 1] {
            cur = &mut cur[*key];
        }
        cur[path[path.len() - 1]] = value;
        v.to_string()
    }

    fn error_path(s: &str) -> String {
        match RunConfig::from_json_str(s).and_then(|c| c.validate()) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn golden_config_parses() {
        let c = RunConfig::from_json_str(GOLDEN).unwrap();
        assert_eq!(c.task, Task::Solve);
        let p = c.prepare().unwrap();
        assert_eq!(p.masks.grid().nx, 65);
        assert_eq!(p.kind, ObstacleKind::Constant { lower: 1.0, upper: 2.0 });
        assert_eq!(c.solver, SolveParams::default());
    }

    #[test]
    fn errors_name_the_offending_key() {
        assert_eq!(error_path(&with(&["domain", "mu"], (-1.0).into())), "domain.mu");
        assert_eq!(error_path(&with(&["domain", "R"], 0.0.into())), "domain.R");
        assert_eq!(error_path(&with(&["penalty", "eps"], 1.5.into())), "penalty.eps");
        assert_eq!(error_path(&with(&["domain", "shape"], "hexagon".into())), "domain.shape");
        assert_eq!(error_path(&with(&["domain", "params", "radius"], "big".into())), "domain.params");
        assert_eq!(error_path(&with(&["domain", "obstacles", "kind"], "cone".into())), "domain.obstacles.kind");
        assert_eq!(error_path(&with(&["domain", "obstacles", "params", "upper"], 1.0.into())), "domain.obstacles");
        assert_eq!(
            error_path(&with(&["domain", "obstacles", "params"], serde_json::json!({ "lower": 1 }))),
            "domain.obstacles.params"
        );
        assert_eq!(error_path(&with(&["resolution"], 5.into())), "resolution");
        assert_eq!(error_path(&with(&["solver", "max_itres"], 5.into())), "solver.max_itres");
        assert_eq!(error_path(&with(&["solver", "tolerance"], "x".into())), "solver.tolerance");
        assert_eq!(error_path(&with(&["task"], "sweep".into())), "sweep");
        assert_eq!(error_path(&with(&["domain", "mu"], 100.0.into())), "domain.mu");
    }

    #[test]
    fn sweep_section_is_checked() {
        let s = with(&["sweep"], serde_json::json!({ "eps": [0.1, 0.2] }));
        assert_eq!(error_path(&s), "sweep.eps");
        let s = with(&["sweep"], serde_json::json!({ "eps": [0.2, 0.1] }));
        let c = RunConfig::from_json_str(&s).unwrap();
        let sw = c.sweep.unwrap();
        assert!(sw.warm_start && sw.rel_tol == 0.01);
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::from_json_str(GOLDEN).unwrap();
        let again = RunConfig::from_json_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn garbage_is_a_config_error() {
        assert!(matches!(RunConfig::from_json_str("{"), Err(Error::Config { .. })));
        assert!(matches!(RunConfig::from_json_str("[]"), Err(Error::Config { .. })));
    }
}
