//! Scenario configuration files.
//!
//! Every key is optional; an empty file gives the defaults below.
//!
//! ```toml
//! n = 2
//! seed = 7
//!
//! [field]
//! family = "log_power"   # "identity", "log_power" or "constant"
//! amp = 0.5              # log_power: g(r) = amp (log(e/r))^(-s)
//! s = 0.75
//! g = 0.0                # constant: g(r) = g
//! eps = 1e-3
//!
//! [grid]
//! per_octave = 32
//! r_min = 1.52587890625e-5   # rounded down to a power of two; omit for the default depth
//! top_octaves = 2
//!
//! [harmonics]
//! degree = 8
//!
//! [boundary]
//! constant = 0.3
//! linear = [1.0, 0.0, 0.0]
//! quadratic = 0.5
//!
//! [ratio]
//! j_min = 6
//! j_max = 14
//! bound = 3.0
//!
//! [tolerances]
//! fixed_point = 1e-9
//! equivalence = 1e-4
//! weak_residual = 1e-6
//! sharpness = 0.10
//! suite_scale = 1.0      # multiplies every property-suite tolerance
//!
//! [output]
//! dir = "out"
//! ```

use serde::Deserialize;
use sqdini::pipeline::{FixedPointOptions, RatioOptions, SharpnessOptions};
use sqdini::scenario::{BoundarySpec, FieldSpec, ScenarioSpec};
use sqdini::suites::SuiteTolerances;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub harmonics: HarmonicsConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub ratio: RatioConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Default, Deserialize, Clone, Copy, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Identity,
    #[default]
    LogPower,
    Constant,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    #[serde(default)]
    pub family: Family,
    pub amp: Option<f64>,
    pub s: Option<f64>,
    pub g: Option<f64>,
    pub eps: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub per_octave: Option<usize>,
    pub r_min: Option<f64>,
    pub top_octaves: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicsConfig {
    pub degree: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub constant: Option<f64>,
    pub linear: Option<Vec<f64>>,
    pub quadratic: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioConfig {
    pub j_min: Option<i64>,
    pub j_max: Option<i64>,
    pub bound: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub fixed_point: Option<f64>,
    pub equivalence: Option<f64>,
    pub weak_residual: Option<f64>,
    pub sharpness: Option<f64>,
    pub suite_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(msg()))
    }
}

fn positive(name: &str, v: Option<f64>) -> Result<(), ConfigError> {
    match v {
        Some(x) => check(x.is_finite() && x > 0.0, || format!("{name} = {x} must be positive and finite")),
        None => Ok(()),
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Range checks that do not depend on the numerical core.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = &self.field;
        let unused = |key: &str, v: Option<f64>| {
            check(v.is_none(), || format!("field.{key} is not used by family {:?}", f.family))
        };
        match f.family {
            Family::Identity => {
                unused("amp", f.amp)?;
                unused("s", f.s)?;
                unused("g", f.g)?;
            }
            Family::LogPower => unused("g", f.g)?,
            Family::Constant => {
                unused("amp", f.amp)?;
                unused("s", f.s)?;
            }
        }
        for (k, v) in [("field.amp", f.amp), ("field.g", f.g)] {
            if let Some(x) = v {
                check(x.is_finite() && x.abs() < 1e3, || format!("{k} = {x} outside (-1e3, 1e3)"))?;
            }
        }
        positive("field.s", f.s)?;
        positive("tolerances.fixed_point", self.tolerances.fixed_point)?;
        positive("tolerances.equivalence", self.tolerances.equivalence)?;
        positive("tolerances.weak_residual", self.tolerances.weak_residual)?;
        positive("tolerances.sharpness", self.tolerances.sharpness)?;
        positive("tolerances.suite_scale", self.tolerances.suite_scale)?;
        positive("ratio.bound", self.ratio.bound)?;
        if let Some(r) = self.grid.r_min {
            check(r.is_finite() && r > 0.0 && r < 0.5, || format!("grid.r_min = {r} outside (0, 1/2)"))?;
        }
        if let Some(l) = &self.boundary.linear {
            check(l.len() == self.dimension(), || {
                format!("boundary.linear has {} entries for n = {}", l.len(), self.dimension())
            })?;
        }
        if let Some(j) = self.ratio.j_min {
            check(j >= 1, || format!("ratio.j_min = {j} must be at least 1"))?;
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.n.unwrap_or(2)
    }

    pub fn field_spec(&self) -> FieldSpec {
        let f = &self.field;
        match f.family {
            Family::Identity => FieldSpec::Identity,
            Family::LogPower => FieldSpec::LogPower {
                amp: f.amp.unwrap_or(0.5),
                s: f.s.unwrap_or(0.75),
            },
            Family::Constant => FieldSpec::Constant { g: f.g.unwrap_or(0.0) },
        }
    }

    /// Octaves below `r = 1` implied by `grid.r_min`.
    pub fn depth(&self) -> Option<usize> {
        self.grid.r_min.map(|r| (-r.log2()).ceil() as usize)
    }

    pub fn scenario(&self) -> Result<ScenarioSpec, ConfigError> {
        self.validate()?;
        let d = ScenarioSpec::default();
        let b = &self.boundary;
        let mut linear = [0.0; 3];
        match &b.linear {
            Some(l) => linear[..l.len()].copy_from_slice(l),
            None => linear = d.boundary.linear,
        }
        let ratio = RatioOptions {
            j_min: self.ratio.j_min.unwrap_or(d.ratio.j_min),
            j_max: self.ratio.j_max.unwrap_or(d.ratio.j_max),
            bound: self.ratio.bound.unwrap_or(d.ratio.bound),
            ..d.ratio.clone()
        };
        let fixed_point = FixedPointOptions {
            tol: self.tolerances.fixed_point.unwrap_or(d.fixed_point.tol),
            ..d.fixed_point.clone()
        };
        let spec = ScenarioSpec {
            n: self.dimension(),
            field: self.field_spec(),
            eps: self.field.eps.unwrap_or(d.eps),
            per_octave: self.grid.per_octave.unwrap_or(d.per_octave),
            depth: self.depth(),
            top: self.grid.top_octaves.unwrap_or(d.top),
            degree: self.harmonics.degree.unwrap_or(d.degree),
            boundary: BoundarySpec {
                constant: b.constant.unwrap_or(d.boundary.constant),
                linear,
                quadratic: b.quadratic.unwrap_or(d.boundary.quadratic),
            },
            ratio,
            fixed_point,
            equivalence_tol: self.tolerances.equivalence.unwrap_or(d.equivalence_tol),
            weak_tol: self.tolerances.weak_residual.unwrap_or(d.weak_tol),
            ..d
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    pub fn sharpness(&self) -> Result<SharpnessOptions, ConfigError> {
        self.validate()?;
        let d = SharpnessOptions::default();
        let opts = SharpnessOptions {
            per_octave: self.grid.per_octave.unwrap_or(d.per_octave),
            depth_octaves: self.depth().unwrap_or(d.depth_octaves),
            tol: self.tolerances.sharpness.unwrap_or(d.tol),
            ..d
        };
        check(opts.j_hi as usize <= opts.depth_octaves, || {
            format!("grid.r_min must be at most 2^-{} for the sharpness window", opts.j_hi)
        })?;
        Ok(opts)
    }

    pub fn suite_tolerances(&self) -> SuiteTolerances {
        SuiteTolerances::default().scaled(self.tolerances.suite_scale.unwrap_or(1.0))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(7)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ScenarioConfig, ConfigError> {
        ScenarioConfig::parse(s, Path::new("test.toml"))
    }

    #[test]
    fn empty_config_gives_core_defaults() {
        let cfg = parse("").unwrap();
        let spec = cfg.scenario().unwrap();
        let d = ScenarioSpec::default();
        assert_eq!(spec.n, d.n);
        assert_eq!(spec.field, d.field);
        assert_eq!(spec.per_octave, d.per_octave);
        assert_eq!(spec.depth, None);
        assert_eq!(spec.boundary, d.boundary);
        assert_eq!(cfg.seed(), 7);
        assert_eq!(cfg.suite_tolerances().fixed_point, SuiteTolerances::default().fixed_point);
    }

    #[test]
    fn r_min_rounds_down_to_a_power_of_two() {
        let cfg = parse("[grid]\nr_min = 1e-5\n").unwrap();
        assert_eq!(cfg.depth(), Some(17));
        let cfg = parse("[grid]\nr_min = 0.0009765625\n").unwrap();
        assert_eq!(cfg.depth(), Some(10));
    }

    #[test]
    fn families_map_to_field_specs() {
        let cfg = parse("[field]\nfamily = \"constant\"\ng = -0.25\n").unwrap();
        assert_eq!(cfg.field_spec(), FieldSpec::Constant { g: -0.25 });
        let cfg = parse("[field]\nfamily = \"identity\"\n").unwrap();
        assert_eq!(cfg.field_spec(), FieldSpec::Identity);
        let cfg = parse("[field]\namp = -0.5\n").unwrap();
        assert_eq!(cfg.field_spec(), FieldSpec::LogPower { amp: -0.5, s: 0.75 });
    }

    #[test]
    fn rejects_unknown_keys_and_wrong_types() {
        assert!(matches!(parse("[field]\nkappa = 1.0\n"), Err(ConfigError::Parse { .. })));
        assert!(matches!(parse("[extra]\n"), Err(ConfigError::Parse { .. })));
        assert!(matches!(parse("n = \"two\"\n"), Err(ConfigError::Parse { .. })));
        assert!(matches!(parse("[field]\nfamily = \"wavy\"\n"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn rejects_out_of_range_values() {
        for s in [
            "n = 5\n",
            "[field]\ns = -1.0\n",
            "[field]\neps = 0.0\n",
            "[grid]\nr_min = 0.9\n",
            "[grid]\nper_octave = 2\n",
            "[harmonics]\ndegree = 40\n",
            "[boundary]\nlinear = [1.0, 2.0, 3.0]\n",
            "[ratio]\nj_min = 9\nj_max = 4\n",
            "[tolerances]\nequivalence = -1e-4\n",
            "[field]\nfamily = \"constant\"\ns = 0.5\n",
        ] {
            let cfg = parse(s).unwrap();
            assert!(cfg.scenario().is_err(), "{s}");
        }
    }

    #[test]
    fn sharpness_window_must_fit_the_grid() {
        assert!(parse("[grid]\nr_min = 0.001\n").unwrap().sharpness().is_err());
        let opts = parse("[grid]\nr_min = 1e-6\n").unwrap().sharpness().unwrap();
        assert_eq!(opts.depth_octaves, 20);
    }
}
