//! Linear reward learning from logged preferences, and optimizing the
//! learned reward with plain CMA-ES as a baseline against SortCMA.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{run_sortcma_with, RunSpec};
use crate::engine::{rank_by_value, EngineConfig, EngineState};
use crate::error::{Error, Result};
use crate::objectives::heuristic_oracle;
use crate::preference::{AnswerSource, PreferenceRecord, Verdict};

/// Default L2 strength on standardized features.
pub const DEFAULT_L2: f64 = 1.0;

const NEWTON_MAX_ITERS: usize = 100;
const NEWTON_TOL: f64 = 1e-10;

/// `reward(φ) = weights · φ`; higher is preferred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub weights: Vec<f64>,
    pub regularization: f64,
    pub pairs: usize,
}

impl RewardModel {
    pub fn reward(&self, features: &[f64]) -> f64 {
        self.weights.iter().zip(features).map(|(w, f)| w * f).sum()
    }

    /// Probability that `a` is preferred over `b`.
    pub fn prefer_probability(&self, a: &[f64], b: &[f64]) -> f64 {
        sigmoid(self.reward(a) - self.reward(b))
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Winner-minus-loser feature differences of every non-deferred preference
/// that carries candidate vectors.
fn pair_differences<F>(records: &[PreferenceRecord], features: &F) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    records
        .iter()
        .filter(|r| r.source != AnswerSource::Heuristic)
        .filter_map(|r| {
            let (l, rr) = (features(r.left_x.as_deref()?), features(r.right_x.as_deref()?));
            let (w, lo) = match r.outcome {
                Verdict::FirstBetter => (l, rr),
                Verdict::SecondBetter => (rr, l),
            };
            Some(w.iter().zip(&lo).map(|(a, b)| a - b).collect())
        })
        .collect()
}

/// Fits an L2-regularized logistic model `P(winner ≻ loser) = σ(w·(φ_w − φ_l))`
/// by Newton's method on RMS-standardized differences.
pub fn fit_linear_reward<F>(records: &[PreferenceRecord], features: F, l2: f64) -> Result<RewardModel>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let diffs = pair_differences(records, &features);
    fit_differences(&diffs, l2)
}

pub(crate) fn fit_differences(diffs: &[Vec<f64>], l2: f64) -> Result<RewardModel> {
    if diffs.is_empty() {
        return Err(Error::Empty("no usable non-deferred preferences"));
    }
    if !(l2 > 0.0 && l2.is_finite()) {
        return Err(Error::InvalidConfig(format!("regularization must be > 0, got {l2}")));
    }
    let d = diffs[0].len();
    if d == 0 || diffs.iter().any(|v| v.len() != d) {
        return Err(Error::DegenerateData("feature vectors have inconsistent length".into()));
    }
    let n = diffs.len();
    let scale: Vec<f64> =
        (0..d).map(|j| (diffs.iter().map(|v| v[j] * v[j]).sum::<f64>() / n as f64).sqrt()).collect();
    if scale.iter().all(|&s| s == 0.0) {
        return Err(Error::DegenerateData("every pair has identical features".into()));
    }
    let z = DMatrix::from_fn(n, d, |i, j| if scale[j] > 0.0 { diffs[i][j] / scale[j] } else { 0.0 });

    let mut w = DVector::<f64>::zeros(d);
    for _ in 0..NEWTON_MAX_ITERS {
        let margins = &z * &w;
        let mut grad = l2 * &w;
        let mut hess = DMatrix::<f64>::identity(d, d) * l2;
        for i in 0..n {
            let p = sigmoid(margins[i]);
            let row = z.row(i).transpose();
            grad -= (1.0 - p) * &row;
            hess += p * (1.0 - p) * &row * row.transpose();
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::DegenerateData("Hessian is not positive definite".into()))?
            .solve(&grad);
        w -= &step;
        if step.norm() < NEWTON_TOL * (1.0 + w.norm()) {
            break;
        }
    }
    let weights = (0..d).map(|j| if scale[j] > 0.0 { w[j] / scale[j] } else { 0.0 }).collect();
    Ok(RewardModel { weights, regularization: l2, pairs: n })
}

/// Result of direct CMA-ES on a learned reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedOptimum {
    pub internal: Vec<f64>,
    pub reward: f64,
    pub evaluations: u64,
}

/// Runs ordinary CMA-ES (ranking by direct evaluation) maximizing the
/// learned reward for `generations` generations and returns the
/// highest-reward point it sampled.
pub fn optimize_learned_reward<F>(
    model: &RewardModel,
    features: F,
    config: &EngineConfig,
    generations: usize,
) -> Result<LearnedOptimum>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut engine = EngineState::new(config)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..generations {
        let gen = engine.sample_generation()?;
        let ranked = rank_by_value(&gen, |x| -model.reward(&features(x)));
        let top = gen.iter().find(|c| c.id == ranked[0]).expect("ranked from this generation");
        let r = model.reward(&features(&top.internal));
        if best.as_ref().is_none_or(|(b, _)| r > *b) {
            best = Some((r, top.internal.clone()));
        }
        engine.update(&ranked)?;
    }
    let (reward, internal) = best.ok_or(Error::Empty("no generations run"))?;
    Ok(LearnedOptimum { internal, reward, evaluations: (generations * config.lambda) as u64 })
}

/// Side-by-side outcome of SortCMA and the learned-reward baseline at the
/// same evaluation budget. Losses are true objective values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub seed: u64,
    pub sortcma_loss: f64,
    pub sortcma_evaluations: u64,
    pub sortcma_queries: u64,
    pub learned_loss: f64,
    pub learned_evaluations: u64,
    pub regularization: f64,
    pub pairs: usize,
    pub weights: Vec<f64>,
}

/// SortCMA against `cost` with a simulated oracle, then a reward fit on the
/// preferences it logged, then CMA-ES on that reward with the same engine
/// configuration and budget. Features are the raw internal vector.
pub fn reward_learning_study<C>(spec: &RunSpec, cost: C, l2: f64) -> Result<RewardReport>
where
    C: Fn(&[f64]) -> Result<f64>,
{
    let heuristic = heuristic_oracle(&spec.objective);
    let out = run_sortcma_with(spec, &cost, &heuristic)?;
    let identity = |x: &[f64]| x.to_vec();
    let model = fit_linear_reward(&out.preferences, identity, l2)?;
    let config = spec.engine_config();
    let learned = optimize_learned_reward(&model, identity, &config, spec.generations)?;
    let last = out.records.last().expect("at least one generation");
    Ok(RewardReport {
        seed: spec.seed,
        sortcma_loss: out.final_value,
        sortcma_evaluations: last.evaluations,
        sortcma_queries: last.queries,
        learned_loss: cost(&learned.internal)?,
        learned_evaluations: learned.evaluations,
        regularization: model.regularization,
        pairs: model.pairs,
        weights: model.weights,
    })
}
