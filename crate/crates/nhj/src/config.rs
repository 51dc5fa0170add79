//! JSON run configuration.
//!
//! ```json
//! {
//!   "scenario": "knife_edge",
//!   "params": { "mass": 1.0, "p": [1.0, 0.0, 0.0] },
//!   "grid": { "cells": [48, 48, 48], "time_steps": 400 },
//!   "time": { "window": [0.0, 1.0], "trajectory_steps": 400 },
//!   "x0": [0.0, 0.0, 0.785],
//!   "audit": { "perturbations": 100, "amplitude": 0.1, "seed": 7, "slack": 1e-6 }
//! }
//! ```
//!
//! Only `scenario` is required. Unknown keys are rejected.

use std::io::Read;
use std::path::{Path, PathBuf};

use nhj_core::scenario::{Builtin, Scenario, ScenarioParams};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ParseError at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("SchemaError at line {line}, column {column}: {message}")]
    Schema {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Scenario(#[from] nhj_core::Error),
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub time: TimeConfig,
    pub x0: Option<Vec<f64>>,
    /// Overrides the launch velocity of the d'Alembert run.
    pub v0: Option<Vec<f64>>,
    #[serde(default)]
    pub audit: AuditConfig,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub n: Option<usize>,
    pub mass: Option<f64>,
    pub p: Option<Vec<f64>>,
    pub q: Option<f64>,
    pub omega_osc: Option<f64>,
    pub a1: Option<f64>,
    pub b1: Option<f64>,
    pub g: Option<f64>,
    pub p1: Option<f64>,
    pub domain: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub cells: Option<Vec<usize>>,
    pub time_steps: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub window: Option<[f64; 2]>,
    pub trajectory_steps: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub perturbations: Option<usize>,
    pub amplitude: Option<f64>,
    pub seed: Option<u64>,
    pub slack: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| {
            let (line, column, message) = (e.line(), e.column(), e.to_string());
            match e.classify() {
                serde_json::error::Category::Data => ConfigError::Schema {
                    line,
                    column,
                    message,
                },
                _ => ConfigError::Parse {
                    line,
                    column,
                    message,
                },
            }
        })
    }

    /// Reads a config file; `-` reads standard input.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut text = String::new();
        let io = |source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        };
        if path == Path::new("-") {
            std::io::stdin().read_to_string(&mut text).map_err(io)?;
        } else {
            text = std::fs::read_to_string(path).map_err(io)?;
        }
        Self::from_json(&text)
    }

    pub fn builtin(&self) -> Result<Builtin, ConfigError> {
        Ok(Builtin::from_name(&self.scenario)?)
    }

    pub fn scenario_params(&self) -> ScenarioParams {
        let p = &self.params;
        ScenarioParams {
            n: p.n,
            mass: p.mass,
            p: p.p.clone(),
            q: p.q,
            omega_osc: p.omega_osc,
            a1: p.a1,
            b1: p.b1,
            g: p.g,
            p1: p.p1,
            domain: p.domain.clone(),
            time_window: self.time.window,
        }
    }

    pub fn build_scenario(&self) -> Result<Scenario, ConfigError> {
        Ok(Scenario::builtin(self.builtin()?, &self.scenario_params())?)
    }
}

/// Parses `1.5,-2,0.25`.
pub fn parse_vector(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| format!("`{}` is not a number: {e}", s.trim()))
        })
        .collect()
}

/// Parses `48,48,48`.
pub fn parse_counts(text: &str) -> Result<Vec<usize>, String> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| format!("`{}` is not a count: {e}", s.trim()))
        })
        .collect()
}
