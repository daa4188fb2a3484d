use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::oracle::{ChipLaw, Dims, OracleInput};
use crate::par::Execution;
use crate::replica::{ScatterGainLaw, SolverConfig, SystemParams, UserClass};

use super::table::Format;

fn one() -> f64 {
    1.0
}

fn qpsk() -> String {
    "qpsk".into()
}

fn unit_gains() -> Vec<(f64, f64)> {
    vec![(1.0, 1.0)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    #[serde(default = "one")]
    pub weight: f64,
    /// Transmit over receive antennas, `M / N`.
    pub mu: f64,
    /// Transmit antennas over scatterers, `M / S`.
    pub gamma: f64,
    /// `qpsk`, `qamN` or `gaussian`.
    #[serde(default = "qpsk")]
    pub constellation: String,
    #[serde(default = "one")]
    pub power: f64,
    /// `(gain, probability)` atoms of the squared scatterer attenuation.
    #[serde(default = "unit_gains")]
    pub gains: Vec<(f64, f64)>,
}

/// System at one operating point. SNR is `P / sigma2` with `P` the
/// weight-averaged class power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSpec {
    pub beta: f64,
    pub snr_db: f64,
    pub classes: Vec<ClassSpec>,
}

impl BaseSpec {
    pub fn single(beta: f64, snr_db: f64, mu: f64, gamma: f64, constellation: &str) -> Self {
        Self {
            beta,
            snr_db,
            classes: vec![ClassSpec {
                weight: 1.0,
                mu,
                gamma,
                constellation: constellation.into(),
                power: 1.0,
                gains: unit_gains(),
            }],
        }
    }

    /// Copy with the axis variable set to `value`; `mu` and `gamma` apply to
    /// every class.
    pub fn at(&self, axis: Axis, value: f64) -> Self {
        let mut s = self.clone();
        match axis {
            Axis::SnrDb => s.snr_db = value,
            Axis::Beta => s.beta = value,
            Axis::Mu => s.classes.iter_mut().for_each(|c| c.mu = value),
            Axis::Gamma => s.classes.iter_mut().for_each(|c| c.gamma = value),
        }
        s
    }

    /// Same system with Gaussian inputs of unchanged power.
    pub fn gaussian(&self) -> Self {
        let mut s = self.clone();
        s.classes.iter_mut().for_each(|c| c.constellation = "gaussian".into());
        s
    }

    pub fn mean_power(&self) -> f64 {
        let w: f64 = self.classes.iter().map(|c| c.weight).sum();
        self.classes.iter().map(|c| c.weight * c.power).sum::<f64>() / w
    }

    pub fn sigma2(&self) -> f64 {
        self.mean_power() / 10f64.powf(self.snr_db / 10.0)
    }

    pub fn params(&self) -> Result<SystemParams> {
        if self.classes.is_empty() {
            return Err(Error::Config("at least one user class is required".into()));
        }
        if !(-40.0..=60.0).contains(&self.snr_db) {
            return Err(Error::Config(format!("snr_db {} outside [-40, 60]", self.snr_db)));
        }
        let classes = self
            .classes
            .iter()
            .map(|c| {
                let constellation = Constellation::from_name(&c.constellation, c.power)?;
                let gains = ScatterGainLaw::new(c.gains.clone())?;
                UserClass::new(c.weight, c.mu, c.gamma, constellation, gains)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(config_error)?;
        SystemParams::new(self.beta, self.sigma2(), classes).map_err(config_error)
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    #[default]
    SnrDb,
    Gamma,
    Beta,
    Mu,
}

impl Axis {
    fn check(self, v: f64) -> Result<()> {
        let ok = match self {
            Axis::SnrDb => (-40.0..=60.0).contains(&v),
            _ => v > 0.0 && v.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("axis value {v} out of range for {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directions {
    #[default]
    Ascending,
    Descending,
    Both,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    /// Curve table; stdout when absent.
    pub table: Option<PathBuf>,
    /// Append-only JSON-lines cache.
    pub cache: Option<PathBuf>,
    /// Finite-size records.
    pub oracle: Option<PathBuf>,
}

fn every() -> usize {
    5
}

fn draws() -> usize {
    1
}

/// Finite-size runs at sampled grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    /// Run at every `every`-th grid point of the sweep.
    #[serde(default = "every")]
    pub every: usize,
    pub dims: Dims,
    #[serde(default)]
    pub chip_law: ChipLaw,
    pub input: OracleInput,
    pub seeds: usize,
    /// Symbol and noise draws per channel (QPSK input).
    #[serde(default = "draws")]
    pub draws: usize,
}

/// A sweep, or a single point when `grid` is empty and `solve` is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: BaseSpec,
    #[serde(default)]
    pub axis: Axis,
    #[serde(default)]
    pub grid: Vec<f64>,
    #[serde(default)]
    pub directions: Directions,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    /// Run the oracle at sampled points of `sweep`.
    #[serde(default)]
    pub oracle_in_sweep: bool,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub seed: u64,
}

impl SweepConfig {
    pub fn new(base: BaseSpec, axis: Axis, grid: Vec<f64>) -> Self {
        Self {
            base,
            axis,
            grid,
            directions: Directions::default(),
            solver: SolverConfig::default(),
            outputs: Outputs::default(),
            format: Format::default(),
            oracle: None,
            oracle_in_sweep: false,
            execution: Execution::default(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies `key.path=value` overrides to the JSON form of `self`.
    /// Values parse as JSON, falling back to a plain string.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for set in sets {
            let (path, raw) = set
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{set}' is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
            let mut node = &mut doc;
            for key in path.split('.') {
                node = match node {
                    Value::Object(map) => map.entry(key).or_insert(Value::Null),
                    Value::Array(items) => key
                        .parse::<usize>()
                        .ok()
                        .and_then(|i| items.get_mut(i))
                        .ok_or_else(|| Error::Config(format!("no element '{key}' in '{path}'")))?,
                    _ => return Err(Error::Config(format!("'{path}' does not name a field"))),
                };
            }
            *node = value;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.base.params()?;
        self.solver.validate().map_err(config_error)?;
        for &v in &self.grid {
            self.axis.check(v)?;
            self.base.at(self.axis, v).params()?;
        }
        let rising = self.grid.windows(2).all(|w| w[1] > w[0]);
        let falling = self.grid.windows(2).all(|w| w[1] < w[0]);
        if !(rising || falling) {
            return Err(Error::Config("grid must be strictly monotone".into()));
        }
        if let Some(o) = &self.oracle {
            o.dims.validate().map_err(config_error)?;
            if o.every == 0 || o.seeds == 0 || o.draws == 0 {
                return Err(Error::Config("oracle every, seeds and draws must be >= 1".into()));
            }
        }
        if self.oracle_in_sweep && self.oracle.is_none() {
            return Err(Error::Config("oracle_in_sweep needs an oracle section".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "base": {"beta": 1.0, "snr_db": 10.0, "classes": [{"mu": 1.0, "gamma": 1.0}]},
        "grid": [0, 5, 10]
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = SweepConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.axis, Axis::SnrDb);
        assert_eq!(c.base.classes[0].constellation, "qpsk");
        assert_eq!(c.solver, SolverConfig::default());
        c.validate().unwrap();
        let p = c.base.params().unwrap();
        assert!((p.sigma2 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SweepConfig::from_json(r#"{"base": 1}"#).is_err());
        assert!(SweepConfig::from_json(&MINIMAL.replace("\"grid\"", "\"gird\"")).is_err());
        let mut c = SweepConfig::from_json(MINIMAL).unwrap();
        c.grid = vec![0.0, 5.0, 5.0];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.grid = vec![0.0, 70.0];
        assert!(c.validate().is_err());
        c.grid = vec![];
        c.base.classes[0].constellation = "qam8".into();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn descending_grid_is_monotone() {
        let mut c = SweepConfig::from_json(MINIMAL).unwrap();
        c.grid.reverse();
        c.validate().unwrap();
    }

    #[test]
    fn overrides() {
        let c = SweepConfig::from_json(MINIMAL).unwrap();
        let d = c
            .with_overrides(&[
                "base.beta=2".into(),
                "base.classes.0.constellation=gaussian".into(),
                "solver.tol=1e-9".into(),
                "directions=both".into(),
            ])
            .unwrap();
        assert_eq!(d.base.beta, 2.0);
        assert_eq!(d.base.classes[0].constellation, "gaussian");
        assert_eq!(d.solver.tol, 1e-9);
        assert_eq!(d.directions, Directions::Both);
        assert!(c.with_overrides(&["base.beta".into()]).is_err());
        assert!(c.with_overrides(&["base.beta.x=1".into()]).is_err());
    }

    #[test]
    fn axis_application() {
        let b = BaseSpec::single(1.0, 10.0, 1.0, 1.0, "qpsk");
        assert_eq!(b.at(Axis::Gamma, 0.25).classes[0].gamma, 0.25);
        assert_eq!(b.at(Axis::Mu, 2.0).classes[0].mu, 2.0);
        assert_eq!(b.at(Axis::Beta, 3.0).beta, 3.0);
        assert_eq!(b.gaussian().classes[0].constellation, "gaussian");
    }
}
