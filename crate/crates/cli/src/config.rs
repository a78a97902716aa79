//! Settings resolution: flags override the config file, which overrides the
//! `NOPA_SEED` fallback and the built-in defaults.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use nopa_core::{FeedforwardGains, InputSpec, ProtocolConfig};

use crate::CliError;

pub const DEFAULT_REFLECTIVITY: f64 = 0.5;
pub const DEFAULT_SQUEEZING: f64 = 1.0;
pub const DEFAULT_MONTECARLO_SHOTS: usize = 100_000;
pub const MIN_MONTECARLO_SHOTS: usize = 100;
/// Refuse grids beyond this many points per axis.
pub const MAX_GRID_POINTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combos {
    #[default]
    Nopa,
    Cluster,
    Ghz,
}

/// Inclusive `start:stop:step` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Grid {
    /// Grid points, snapped to 1e-12 so `0.1:0.9:0.1` yields `0.9` rather
    /// than `0.9000000000000001`.
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|k| ((self.start + k as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(format!("grid `{s}` must be start:stop:step"));
        };
        let num = |t: &str| -> Result<f64, String> {
            let v: f64 = t.trim().parse().map_err(|_| format!("`{t}` is not a number"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("`{t}` is not finite"))
            }
        };
        let grid = Grid {
            start: num(start)?,
            stop: num(stop)?,
            step: num(step)?,
        };
        if grid.step <= 0.0 {
            return Err(format!("grid step must be > 0, got {}", grid.step));
        }
        if grid.stop < grid.start {
            return Err(format!("grid `{s}` is empty (stop < start)"));
        }
        if (grid.stop - grid.start) / grid.step >= MAX_GRID_POINTS as f64 {
            return Err(format!("grid `{s}` has more than {MAX_GRID_POINTS} points"));
        }
        Ok(grid)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

impl Serialize for Grid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Config file contents; every field is optional and flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default, rename = "R", alias = "reflectivity")]
    pub reflectivity: Option<f64>,
    #[serde(default)]
    pub r1: Option<f64>,
    #[serde(default)]
    pub r2: Option<f64>,
    #[serde(default)]
    pub shots: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default, rename = "grid_R")]
    pub grid_reflectivity: Option<Grid>,
    #[serde(default)]
    pub grid_r: Option<Grid>,
    #[serde(default)]
    pub emit_ledger: Option<bool>,
    #[serde(default)]
    pub network: Option<bool>,
    #[serde(default)]
    pub combos: Option<Combos>,
    #[serde(default)]
    pub state: Option<PathBuf>,
    #[serde(default)]
    pub input_s: Option<InputSpec>,
    #[serde(default)]
    pub input_i: Option<InputSpec>,
    #[serde(default)]
    pub gains: Option<FeedforwardGains>,
}

impl CliConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config file: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// `self` with every field set in `over` replaced.
    pub fn overlay(self, over: CliConfig) -> CliConfig {
        CliConfig {
            reflectivity: over.reflectivity.or(self.reflectivity),
            r1: over.r1.or(self.r1),
            r2: over.r2.or(self.r2),
            shots: over.shots.or(self.shots),
            seed: over.seed.or(self.seed),
            output: over.output.or(self.output),
            format: over.format.or(self.format),
            grid_reflectivity: over.grid_reflectivity.or(self.grid_reflectivity),
            grid_r: over.grid_r.or(self.grid_r),
            emit_ledger: over.emit_ledger.or(self.emit_ledger),
            network: over.network.or(self.network),
            combos: over.combos.or(self.combos),
            state: over.state.or(self.state),
            input_s: over.input_s.or(self.input_s),
            input_i: over.input_i.or(self.input_i),
            gains: over.gains.or(self.gains),
        }
    }

    /// Protocol configuration with defaults filled in and validated.
    pub fn protocol(&self, default_shots: usize) -> Result<ProtocolConfig, CliError> {
        let cfg = ProtocolConfig {
            reflectivity: self.reflectivity.unwrap_or(DEFAULT_REFLECTIVITY),
            r1: self.r1.unwrap_or(DEFAULT_SQUEEZING),
            r2: self.r2.unwrap_or(DEFAULT_SQUEEZING),
            input_s: self.input_s.unwrap_or_default(),
            input_i: self.input_i.unwrap_or_default(),
            gains: self.gains,
            seed: self.seed.unwrap_or(0),
            shots: self.shots.unwrap_or(default_shots),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Parses a `NOPA_SEED` value.
pub fn seed_from_env(value: Option<&str>) -> Result<Option<u64>, CliError> {
    value
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("NOPA_SEED `{v}` is not an unsigned integer")))
        })
        .transpose()
}
