//! Parameter space and the map between user-facing values and the unbounded
//! vector the optimizer samples in.
//!
//! Parameters flagged `positive` live on a log axis internally: `encode`
//! applies `ln`, `decode` applies `exp`. Everything else is passed through.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest initial value accepted for a positive parameter.
pub const MIN_POSITIVE_INIT: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub init: f64,
    #[serde(default)]
    pub positive: bool,
}

/// Ordered set of named parameters. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParamSpec>", into = "Vec<ParamSpec>")]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidConfig("search space has no parameters".into()));
        }
        let mut seen = HashSet::new();
        for p in &params {
            if p.name.is_empty() {
                return Err(Error::InvalidConfig("parameter name is empty".into()));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate parameter `{}`", p.name)));
            }
            if !p.init.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "parameter `{}` has non-finite init {}",
                    p.name, p.init
                )));
            }
            if p.positive && p.init < MIN_POSITIVE_INIT {
                return Err(Error::InvalidConfig(format!(
                    "positive parameter `{}` needs init >= {MIN_POSITIVE_INIT:e}, got {}",
                    p.name, p.init
                )));
            }
        }
        Ok(Self { params })
    }

    /// Unflagged parameters named `x0..x{d-1}`, all initialised at `init`.
    pub fn unbounded(dimension: usize, init: f64) -> Result<Self> {
        Self::new(
            (0..dimension)
                .map(|i| ParamSpec { name: format!("x{i}"), init, positive: false })
                .collect(),
        )
    }

    pub fn dimension(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn initial_values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.init).collect()
    }

    /// User space to internal space.
    pub fn encode(&self, user: &[f64]) -> Result<Vec<f64>> {
        self.check_len(user.len())?;
        self.params
            .iter()
            .zip(user)
            .enumerate()
            .map(|(index, (p, &v))| {
                if !v.is_finite() {
                    return Err(Error::NonFinite { index, value: v });
                }
                if p.positive {
                    if v <= 0.0 {
                        return Err(Error::NonPositive { name: p.name.clone(), value: v });
                    }
                    Ok(v.ln())
                } else {
                    Ok(v)
                }
            })
            .collect()
    }

    /// Internal space to user space. Positive parameters come back strictly
    /// positive; `exp` of a very negative input is clamped to the smallest
    /// positive subnormal rather than flushing to zero.
    pub fn decode(&self, internal: &[f64]) -> Result<Vec<f64>> {
        self.check_len(internal.len())?;
        self.params
            .iter()
            .zip(internal)
            .enumerate()
            .map(|(index, (p, &z))| {
                if !z.is_finite() {
                    return Err(Error::NonFinite { index, value: z });
                }
                if p.positive {
                    Ok(z.exp().max(f64::from_bits(1)))
                } else {
                    Ok(z)
                }
            })
            .collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dimension() {
            return Err(Error::DimensionMismatch { expected: self.dimension(), actual: len });
        }
        Ok(())
    }
}

impl TryFrom<Vec<ParamSpec>> for SearchSpace {
    type Error = Error;

    fn try_from(params: Vec<ParamSpec>) -> Result<Self> {
        Self::new(params)
    }
}

impl From<SearchSpace> for Vec<ParamSpec> {
    fn from(space: SearchSpace) -> Self {
        space.params
    }
}

/// On-disk space configuration:
/// `{"name", "sigma0", "lambda"?, "seed"?, "params": [{"name", "init", "positive"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub name: String,
    pub sigma0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub params: SearchSpace,
}

impl SpaceConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SpaceConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma0 must be > 0, got {}", self.sigma0)));
        }
        if let Some(l) = self.lambda {
            if l < 2 {
                return Err(Error::InvalidConfig(format!("lambda must be >= 2, got {l}")));
            }
        }
        Ok(())
    }

    pub fn space(&self) -> &SearchSpace {
        &self.params
    }
}
