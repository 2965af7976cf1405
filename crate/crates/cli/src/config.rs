//! Flat `key = value` scenario configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use heatlab::heat::MIN_POINTS;
use heatlab::timecurve::MIN_INTERVALS;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value {
        key: &'static str,
        value: String,
        reason: String,
    },
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    None,
    GaussReal,
    GaussImag,
}

impl fmt::Display for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PotentialKind::None => "none",
            PotentialKind::GaussReal => "gauss-real",
            PotentialKind::GaussImag => "gauss-imag",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub delta: f64,
    pub r: f64,
    pub k: usize,
    /// Overrides the command's primary tolerance when set.
    pub tol: Option<f64>,
    pub grid_m: usize,
    pub box_l: f64,
    pub grid_n: usize,
    pub steps: usize,
    pub potential: PotentialKind,
    pub amplitude: f64,
    pub gamma_factor: f64,
    pub xi: f64,
    pub epsilon: f64,
    /// Time slice used by `sharpness`.
    pub t: f64,
    pub out: PathBuf,
    pub plot: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            delta: 3.0,
            r: 1.0,
            k: 50,
            tol: None,
            grid_m: 512,
            box_l: 12.0,
            grid_n: 1024,
            steps: 1000,
            potential: PotentialKind::None,
            amplitude: 0.5,
            gamma_factor: 1.0,
            xi: 1.0,
            epsilon: 1e-6,
            t: 0.5,
            out: PathBuf::from("heatlab-out"),
            plot: false,
        }
    }
}

fn parse_f64(key: &'static str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value.parse().map_err(|_| ConfigError::Value {
        key,
        value: value.into(),
        reason: "not a number".into(),
    })?;
    if !v.is_finite() {
        return Err(ConfigError::Value {
            key,
            value: value.into(),
            reason: "must be finite".into(),
        });
    }
    Ok(v)
}

fn parse_usize(key: &'static str, value: &str) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key,
        value: value.into(),
        reason: "not a non-negative integer".into(),
    })
}

fn parse_bool(key: &'static str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::Value {
            key,
            value: value.into(),
            reason: "expected true or false".into(),
        }),
    }
}

fn check(key: &'static str, value: &str, ok: bool, reason: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Value {
            key,
            value: value.into(),
            reason: reason.into(),
        })
    }
}

impl ScenarioConfig {
    /// Sets one key. Keys are case-insensitive and accept `-` for `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "delta" => {
                let v = parse_f64("delta", value)?;
                check("delta", value, v >= 2.0, "must be at least 2")?;
                self.delta = v;
            }
            "r" => {
                let v = parse_f64("R", value)?;
                check("R", value, v > 0.0, "must be positive")?;
                self.r = v;
            }
            "k" => {
                let v = parse_usize("K", value)?;
                check("K", value, (1..=1_000_000).contains(&v), "must lie in 1..=1000000")?;
                self.k = v;
            }
            "tol" => {
                let v = parse_f64("tol", value)?;
                check("tol", value, v > 0.0, "must be positive")?;
                self.tol = Some(v);
            }
            "grid_m" => {
                let v = parse_usize("grid-M", value)?;
                check("grid-M", value, v >= MIN_INTERVALS, "must be at least 64")?;
                self.grid_m = v;
            }
            "box_l" => {
                let v = parse_f64("box-L", value)?;
                check("box-L", value, v > 0.0, "must be positive")?;
                self.box_l = v;
            }
            "grid_n" => {
                let v = parse_usize("grid-N", value)?;
                check(
                    "grid-N",
                    value,
                    v >= MIN_POINTS && v.is_power_of_two(),
                    "must be a power of two >= 256",
                )?;
                self.grid_n = v;
            }
            "steps" => {
                let v = parse_usize("steps", value)?;
                check("steps", value, v >= 1, "must be positive")?;
                self.steps = v;
            }
            "potential" => {
                self.potential = match value {
                    "none" => PotentialKind::None,
                    "gauss-real" => PotentialKind::GaussReal,
                    "gauss-imag" => PotentialKind::GaussImag,
                    _ => {
                        return Err(ConfigError::Value {
                            key: "potential",
                            value: value.into(),
                            reason: "expected none, gauss-real or gauss-imag".into(),
                        })
                    }
                }
            }
            "amplitude" => {
                let v = parse_f64("amplitude", value)?;
                check("amplitude", value, v >= 0.0, "must be non-negative")?;
                self.amplitude = v;
            }
            "gamma_factor" => {
                let v = parse_f64("gamma-factor", value)?;
                check("gamma-factor", value, v > 0.0, "must be positive")?;
                self.gamma_factor = v;
            }
            "xi" => self.xi = parse_f64("xi", value)?,
            "epsilon" => {
                let v = parse_f64("epsilon", value)?;
                check("epsilon", value, v > 0.0, "must be positive")?;
                self.epsilon = v;
            }
            "t" => {
                let v = parse_f64("t", value)?;
                check("t", value, v > 0.0, "must be positive")?;
                self.t = v;
            }
            "out" => {
                check("out", value, !value.is_empty(), "must not be empty")?;
                self.out = PathBuf::from(value);
            }
            "plot" => self.plot = parse_bool("plot", value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, path: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
                path: path.into(),
                line: i + 1,
            })?;
            if key.trim().is_empty() {
                return Err(ConfigError::Syntax {
                    path: path.into(),
                    line: i + 1,
                });
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// `(key, value)` pairs in a fixed order, as accepted by [`Self::set`].
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        vec![
            ("delta", self.delta.to_string()),
            ("R", self.r.to_string()),
            ("K", self.k.to_string()),
            ("tol", self.tol.map_or("default".into(), |t| t.to_string())),
            ("grid-M", self.grid_m.to_string()),
            ("box-L", self.box_l.to_string()),
            ("grid-N", self.grid_n.to_string()),
            ("steps", self.steps.to_string()),
            ("potential", self.potential.to_string()),
            ("amplitude", self.amplitude.to_string()),
            ("gamma-factor", self.gamma_factor.to_string()),
            ("xi", self.xi.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("t", self.t.to_string()),
            ("out", self.out.display().to_string()),
            ("plot", self.plot.to_string()),
        ]
    }
}
