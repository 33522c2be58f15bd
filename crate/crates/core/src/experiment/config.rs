use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{build_distribution, parse_distribution_spec, LatticePoint, StepDistribution};

pub const CONFIG_VERSION: u32 = 1;

/// Everything a run depends on. A saved config re-runs to identical reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub version: u32,
    /// `simple` (alias `srw`) or a path to a distribution spec file.
    pub model: String,
    pub dim: usize,
    pub steps: u64,
    pub horizon_factor: u64,
    /// Number of replicas; replica `r` uses stream `r` of `base_seed`.
    pub seeds: u64,
    pub base_seed: u64,
    pub green_tol: f64,
    pub delta: f64,
    pub radius: f64,
    pub eps: f64,
    pub coverage_radius_max: f64,
    pub thm13_c: f64,
    pub thm13_eps: f64,
    pub thm13_audit: usize,
    pub top_k: usize,
    pub site: String,
    pub kmax: usize,
    pub jmax: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            model: "simple".into(),
            dim: 3,
            steps: 1_000_000,
            horizon_factor: 10,
            seeds: 20,
            base_seed: 0,
            green_tol: 1e-9,
            delta: 0.0,
            radius: 2.0,
            eps: 0.25,
            coverage_radius_max: 3.0,
            thm13_c: 1.0,
            thm13_eps: 0.1,
            thm13_audit: 10,
            top_k: 10,
            site: "1,0,0".into(),
            kmax: 15,
            jmax: 40,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        match table.get("version").and_then(|v| v.as_integer()) {
            Some(v) if v == CONFIG_VERSION as i64 => {}
            Some(v) => return Err(Error::Config(format!("unsupported config version {v}"))),
            None => return Err(Error::Config("config must start with version = 1".into())),
        }
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("{e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.dim < 3 {
            return Err(Error::DimensionTooSmall { dim: self.dim });
        }
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if self.base_seed > i64::MAX as u64 || self.steps > i64::MAX as u64 {
            return bad("base_seed and steps must fit a TOML integer (< 2^63)");
        }
        if self.horizon_factor == 0 {
            return bad("horizon_factor must be >= 1");
        }
        if !(self.green_tol > 0.0) {
            return bad("green_tol must be positive");
        }
        if !(self.delta >= 0.0 && self.delta < 1.0) {
            return bad("delta must lie in [0, 1)");
        }
        if !(self.radius >= 0.0) || !(self.coverage_radius_max > 0.0) {
            return bad("radii must be non-negative");
        }
        if !(self.eps > 0.0 && self.thm13_eps > 0.0 && self.thm13_c > 0.0) {
            return bad("eps, thm13_eps and thm13_c must be positive");
        }
        Ok(())
    }

    pub fn distribution(&self) -> Result<StepDistribution> {
        load_model(&self.model, self.dim)
    }

    pub fn site_point(&self) -> Result<LatticePoint> {
        let x: LatticePoint = self.site.parse()?;
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.dim() });
        }
        Ok(x)
    }
}

/// `simple`/`srw`, or a distribution spec file whose `dim` must match.
pub fn load_model(model: &str, dim: usize) -> Result<StepDistribution> {
    match model {
        "simple" | "srw" => StepDistribution::simple(dim),
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read model file {path}: {e}")))?;
            let (d, spec) = parse_distribution_spec(&text)?;
            if d != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: d });
            }
            build_distribution(d, &spec)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn version_and_unknown_keys() {
        assert!(ExperimentConfig::from_toml("version = 1\nsteps = 10\n").is_ok());
        assert!(ExperimentConfig::from_toml("steps = 10\n").is_err());
        assert!(ExperimentConfig::from_toml("version = 2\n").is_err());
        assert!(ExperimentConfig::from_toml("version = 1\nsteeps = 10\n").is_err());
        assert!(ExperimentConfig::from_toml("version = 1\ndim = 2\n").is_err());
    }

    #[test]
    fn model_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        std::fs::write(&p, "dim=3\nsimple\n").unwrap();
        let d = load_model(p.to_str().unwrap(), 3).unwrap();
        assert!(d.is_simple());
        assert!(load_model(p.to_str().unwrap(), 4).is_err());
        assert!(load_model("/nonexistent/model", 3).is_err());
    }

    proptest! {
        #[test]
        fn toml_round_trip(
            steps in 1u64..1_000_000_000,
            seeds in 0u64..1000,
            base in 0..=i64::MAX as u64,
            tol in 1e-14f64..1e-2,
            delta in 0.0f64..0.99,
            radius in 0.0f64..10.0,
        ) {
            let cfg = ExperimentConfig { steps, seeds, base_seed: base, green_tol: tol, delta, radius, ..Default::default() };
            let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
