//! Experiment configuration files (TOML).
//!
//! ```toml
//! x0 = [1.0, 1.0, 1.0]
//! window = 100
//! epsilon = 1e-3              # optional
//! targets = [[0], [1], [0, 1, 2]]
//! sensor_subsets = [[0, 2]]   # optional, output indices
//! output_scales = [1.0, 2.0]  # optional, one per output
//!
//! [system]
//! kind = "linear"             # or "fly_model"
//! time = "continuous"         # or "discrete"; linear only
//! dt = 0.01
//! a = [[0.0, 1.0], [-1.0, 0.0]]
//! c = [[1.0, 0.0]]
//!
//! [[inputs]]                  # piecewise-constant segments
//! value = []                  # one entry per input channel
//! duration = 1.0
//!
//! [eiso]                      # optional
//! alpha = 1e-2
//! beta = 1e-3
//! sigma0 = 1e-6
//!
//! [[sensor_sets]]             # `sensors` command only, replaces system.c
//! name = "x1"
//! c = [[1.0, 0.0]]
//! ```
//!
//! All indices are 0-based. The trajectory has one sample per input value,
//! so its length is the total segment duration divided by `dt`.

use crate::eiso::EisoParams;
use crate::empobs::DEFAULT_EPSILON;
use crate::sysmodel::{self, InputSchedule, SystemModel, TimeKind};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Linear {
        time: TimeKind,
        dt: f64,
        a: Vec<Vec<f64>>,
        #[serde(default)]
        c: Vec<Vec<f64>>,
    },
    FlyModel {
        dt: f64,
    },
}

impl SystemConfig {
    pub fn dt(&self) -> f64 {
        match self {
            SystemConfig::Linear { dt, .. } | SystemConfig::FlyModel { dt } => *dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub value: Vec<f64>,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSet {
    pub name: String,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub x0: Vec<f64>,
    pub inputs: Vec<Segment>,
    pub window: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub eiso: EisoParams,
    pub targets: Vec<Vec<usize>>,
    #[serde(default)]
    pub sensor_subsets: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub output_scales: Option<Vec<f64>>,
    #[serde(default)]
    pub sensor_sets: Vec<SensorSet>,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn to_matrix(field: &str, rows: &[Vec<f64>], ncols: Option<usize>) -> Result<DMatrix<f64>, ConfigError> {
    let Some(first) = rows.first() else {
        return Err(invalid(field, "matrix has no rows"));
    };
    let cols = ncols.unwrap_or(first.len());
    if cols == 0 {
        return Err(invalid(field, "matrix has no columns"));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(invalid(
                format!("{field}[{i}]"),
                format!("expected {cols} entries, got {}", r.len()),
            ));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("{field}[{i}]"), "entries must be finite"));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn check_index_sets(field: &str, sets: &[Vec<usize>], bound: usize) -> Result<(), ConfigError> {
    for (i, set) in sets.iter().enumerate() {
        if set.is_empty() {
            return Err(invalid(format!("{field}[{i}]"), "empty index set"));
        }
        for (k, &v) in set.iter().enumerate() {
            if v >= bound {
                return Err(invalid(
                    format!("{field}[{i}]"),
                    format!("index {v} out of range (must be below {bound})"),
                ));
            }
            if set[..k].contains(&v) {
                return Err(invalid(format!("{field}[{i}]"), format!("index {v} repeated")));
            }
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn state_dim(&self) -> usize {
        match &self.system {
            SystemConfig::Linear { a, .. } => a.len(),
            SystemConfig::FlyModel { .. } => 5,
        }
    }

    fn input_dim(&self) -> usize {
        match &self.system {
            SystemConfig::Linear { .. } => 0,
            SystemConfig::FlyModel { .. } => 2,
        }
    }

    fn output_dim(&self) -> Option<usize> {
        match &self.system {
            SystemConfig::Linear { c, .. } if c.is_empty() => None,
            SystemConfig::Linear { c, .. } => Some(c.len()),
            SystemConfig::FlyModel { .. } => Some(3),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let dt = self.system.dt();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("system.dt", format!("must be positive, got {dt}")));
        }
        let n = self.state_dim();
        if let SystemConfig::Linear { a, c, .. } = &self.system {
            to_matrix("system.a", a, Some(a.len()))?;
            if c.is_empty() {
                if self.sensor_sets.is_empty() {
                    return Err(invalid("system.c", "required unless sensor_sets is given"));
                }
            } else {
                to_matrix("system.c", c, Some(n))?;
            }
        }
        for (i, s) in self.sensor_sets.iter().enumerate() {
            if !matches!(self.system, SystemConfig::Linear { .. }) {
                return Err(invalid("sensor_sets", "only supported for linear systems"));
            }
            to_matrix(&format!("sensor_sets[{i}].c"), &s.c, Some(n))?;
        }
        if self.x0.len() != n {
            return Err(invalid("x0", format!("expected {n} entries, got {}", self.x0.len())));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("x0", "entries must be finite"));
        }
        if self.inputs.is_empty() {
            return Err(invalid("inputs", "at least one segment is required"));
        }
        let m = self.input_dim();
        for (i, seg) in self.inputs.iter().enumerate() {
            if seg.value.len() != m {
                return Err(invalid(
                    format!("inputs[{i}].value"),
                    format!("expected {m} entries, got {}", seg.value.len()),
                ));
            }
            if !(seg.duration > 0.0 && seg.duration.is_finite()) {
                return Err(invalid(format!("inputs[{i}].duration"), "must be positive"));
            }
        }
        self.schedule()?;
        if self.window == 0 {
            return Err(invalid("window", "must be at least 1"));
        }
        let samples = self.samples()?;
        if self.window > samples {
            return Err(invalid(
                "window",
                format!("{} exceeds the trajectory length of {samples} samples", self.window),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon", "must be positive"));
        }
        let e = &self.eiso;
        for (name, v) in [
            ("eiso.alpha", e.alpha),
            ("eiso.beta", e.beta),
            ("eiso.sigma0", e.sigma0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if e.max_iterations == 0 {
            return Err(invalid("eiso.max_iterations", "must be at least 1"));
        }
        if self.targets.is_empty() {
            return Err(invalid("targets", "at least one target set is required"));
        }
        check_index_sets("targets", &self.targets, n)?;
        if let Some(p) = self.output_dim() {
            if let Some(subsets) = &self.sensor_subsets {
                if subsets.is_empty() {
                    return Err(invalid("sensor_subsets", "empty list; omit the field instead"));
                }
                check_index_sets("sensor_subsets", subsets, p)?;
            }
            if let Some(scales) = &self.output_scales {
                if scales.len() != p {
                    return Err(invalid(
                        "output_scales",
                        format!("expected {p} entries, got {}", scales.len()),
                    ));
                }
                if scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                    return Err(invalid("output_scales", "entries must be positive"));
                }
            }
        } else if self.sensor_subsets.is_some() || self.output_scales.is_some() {
            return Err(invalid(
                "sensor_subsets",
                "sensor_subsets and output_scales need system.c",
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<InputSchedule, ConfigError> {
        let segments: Vec<(Vec<f64>, f64)> = self.inputs.iter().map(|s| (s.value.clone(), s.duration)).collect();
        InputSchedule::from_segments(&segments, self.system.dt()).map_err(|e| invalid("inputs", e.to_string()))
    }

    /// Trajectory length in samples.
    pub fn samples(&self) -> Result<usize, ConfigError> {
        Ok(self.schedule()?.len())
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0)
    }

    /// The configured system; `c` overrides the linear output matrix.
    pub fn build_system(&self, c: Option<&[Vec<f64>]>) -> Result<SystemModel, ConfigError> {
        match &self.system {
            SystemConfig::Linear { time, a, c: c0, .. } => {
                let n = a.len();
                let a = to_matrix("system.a", a, Some(n))?;
                let c = to_matrix("system.c", c.unwrap_or(c0), Some(n))?;
                sysmodel::linear_system(a, c, *time).map_err(|e| invalid("system", e.to_string()))
            }
            SystemConfig::FlyModel { .. } => Ok(sysmodel::fly_model()),
        }
    }
}
