//! Synthetic test functions and simulated comparison oracles.

use std::cell::RefCell;
use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Candidate;
use crate::error::{Error, Result};
use crate::preference::{Heuristic, Verdict};

/// Losses below this are clamped before taking `log10`.
pub const LOSS_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Function {
    Sphere,
    Ackley,
    Rosenbrock,
    Zakharov,
}

impl Function {
    pub const ALL: [Function; 4] = [Function::Sphere, Function::Ackley, Function::Rosenbrock, Function::Zakharov];

    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Function::Sphere => x.iter().map(|v| v * v).sum(),
            Function::Ackley => {
                let n = x.len() as f64;
                let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
                let cos = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
                -20.0 * (-0.2 * sq.sqrt()).exp() - cos.exp() + 20.0 + E
            }
            Function::Rosenbrock => x
                .windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                .sum(),
            Function::Zakharov => {
                let sq: f64 = x.iter().map(|v| v * v).sum();
                let lin: f64 = x.iter().enumerate().map(|(i, v)| 0.5 * (i + 1) as f64 * v).sum();
                sq + lin.powi(2) + lin.powi(4)
            }
        }
    }

    /// Location of the global minimum (value 0) in `d` dimensions.
    pub fn optimum(self, d: usize) -> Vec<f64> {
        match self {
            Function::Rosenbrock => vec![1.0; d],
            _ => vec![0.0; d],
        }
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Function::Sphere => "sphere",
            Function::Ackley => "ackley",
            Function::Rosenbrock => "rosenbrock",
            Function::Zakharov => "zakharov",
        })
    }
}

impl FromStr for Function {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sphere" => Ok(Function::Sphere),
            "ackley" => Ok(Function::Ackley),
            "rosenbrock" => Ok(Function::Rosenbrock),
            "zakharov" => Ok(Function::Zakharov),
            other => Err(Error::InvalidConfig(format!("unknown test function `{other}`"))),
        }
    }
}

/// A test function in a fixed dimension, optionally shifted so that
/// `evaluate(x) = base(x − shift)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub function: Function,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<f64>>,
}

impl Objective {
    pub fn new(function: Function, dimension: usize) -> Self {
        Self { function, dimension, shift: None }
    }

    pub fn shifted(function: Function, shift: Vec<f64>) -> Self {
        Self { function, dimension: shift.len(), shift: Some(shift) }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, actual: x.len() });
        }
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(match &self.shift {
            None => self.function.eval(x),
            Some(s) => {
                let y: Vec<f64> = x.iter().zip(s).map(|(a, b)| a - b).collect();
                self.function.eval(&y)
            }
        })
    }

    pub fn name(&self) -> String {
        match self.shift {
            None => self.function.to_string(),
            Some(_) => format!("shifted-{}", self.function),
        }
    }
}

/// `log10` of the gap to the optimum value 0, floored at [`LOSS_FLOOR`].
pub fn log_loss(f: f64) -> f64 {
    f.max(LOSS_FLOOR).log10()
}

/// Crossover noise: each comparison reports the worse side with probability `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyComparisonModel {
    crossover_p: f64,
    rng: ChaCha8Rng,
}

impl NoisyComparisonModel {
    /// `p` must lie in `[0, 0.5]`; `0.5` carries no information.
    pub fn new(crossover_p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=0.5).contains(&crossover_p) {
            return Err(Error::InvalidConfig(format!("crossover probability must be in [0, 0.5], got {crossover_p}")));
        }
        Ok(Self { crossover_p, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn crossover_p(&self) -> f64 {
        self.crossover_p
    }

    /// Compares by value (lower is better, ties favour the left) and flips
    /// the outcome with probability `p`. A fresh draw is made on every call,
    /// including at `p = 0`, so the RNG stream does not depend on `p`.
    pub fn compare(&mut self, f_left: f64, f_right: f64) -> Verdict {
        let truth = Verdict::from_values(f_left, f_right);
        let u: f64 = self.rng.random();
        if u < self.crossover_p {
            truth.flipped()
        } else {
            truth
        }
    }
}

/// Exact comparison by objective value, used to settle deferrals.
#[derive(Debug, Clone)]
pub struct ObjectiveHeuristic {
    objective: Objective,
}

pub fn heuristic_oracle(objective: &Objective) -> ObjectiveHeuristic {
    ObjectiveHeuristic { objective: objective.clone() }
}

impl Heuristic for ObjectiveHeuristic {
    fn cost(&self, candidate: &Candidate) -> Result<f64> {
        self.objective.evaluate(&candidate.internal)
    }
}

/// Objective heuristic whose answers go through a crossover model, for
/// simulations where deferred comparisons are also noisy.
#[derive(Debug)]
pub struct NoisyHeuristic {
    inner: ObjectiveHeuristic,
    model: RefCell<NoisyComparisonModel>,
}

impl NoisyHeuristic {
    pub fn new(objective: &Objective, model: NoisyComparisonModel) -> Self {
        Self { inner: heuristic_oracle(objective), model: RefCell::new(model) }
    }
}

impl Heuristic for NoisyHeuristic {
    fn cost(&self, candidate: &Candidate) -> Result<f64> {
        self.inner.cost(candidate)
    }

    fn compare(&self, left: &Candidate, right: &Candidate) -> Result<(Verdict, bool)> {
        let (l, r) = (self.cost(left)?, self.cost(right)?);
        Ok((self.model.borrow_mut().compare(l, r), l == r))
    }
}
