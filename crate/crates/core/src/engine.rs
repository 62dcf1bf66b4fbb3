//! Seedable CMA-ES distribution engine.
//!
//! The engine never sees function values. Each generation it hands out λ
//! candidates sampled from `m + σ·N(0, C)` and later takes them back ranked
//! best-first; how the ranking was obtained (direct evaluation or a
//! comparison sort) is the caller's business.
//!
//! All state, including the RNG position, serializes to a versioned JSON
//! snapshot so an interrupted run resumes bit-exactly.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Snapshot format version written by [`EngineState`]'s serializer.
pub const SNAPSHOT_VERSION: u32 = 1;

/// Default population size, `4 + floor(3 ln d)`.
pub fn default_lambda(dimension: usize) -> usize {
    let d = dimension.max(1) as f64;
    (4 + (3.0 * d.ln()).floor() as usize).max(2)
}

/// Unnormalized weights `ln((λ+1)/2) − ln k` for ranks `k = 1..=λ`.
///
/// Ranks past the midpoint come out negative.
pub fn raw_weights(lambda: usize) -> Vec<f64> {
    let centre = ((lambda as f64 + 1.0) / 2.0).ln();
    (1..=lambda).map(|k| centre - (k as f64).ln()).collect()
}

/// Positive recombination weights for the best `μ = floor(λ/2)` ranks,
/// normalized to sum to one. Returns `(weights, μ)`.
pub fn recombination_weights(lambda: usize) -> (Vec<f64>, usize) {
    let mu = (lambda / 2).max(1);
    let mut w = raw_weights(lambda);
    w.truncate(mu);
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    (w, mu)
}

/// Learning rates and damping derived from `(d, λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyParams {
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub expected_norm: f64,
}

impl StrategyParams {
    pub fn new(dimension: usize, lambda: usize) -> Self {
        let n = dimension as f64;
        let (weights, mu) = recombination_weights(lambda);
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let expected_norm = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self { mu, weights, mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, expected_norm }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub dimension: usize,
    pub lambda: usize,
    pub sigma0: f64,
    pub mean0: Vec<f64>,
    pub seed: u64,
}

impl EngineConfig {
    /// Config with the default population size for `mean0.len()`.
    pub fn new(mean0: Vec<f64>, sigma0: f64, seed: u64) -> Self {
        Self { dimension: mean0.len(), lambda: default_lambda(mean0.len()), sigma0, mean0, seed }
    }

    pub fn with_lambda(mut self, lambda: usize) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::InvalidConfig("dimension must be >= 1".into()));
        }
        if self.lambda < 2 {
            return Err(Error::InvalidConfig(format!("lambda must be >= 2, got {}", self.lambda)));
        }
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma0 must be > 0, got {}", self.sigma0)));
        }
        if self.mean0.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, actual: self.mean0.len() });
        }
        if let Some((index, &value)) = self.mean0.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(())
    }
}

/// Identifier of a sampled candidate, unique within one engine's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateId(pub u64);

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: CandidateId,
    pub internal: Vec<f64>,
    pub generation: u64,
}

/// Full distribution state of one CMA-ES run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EngineSnapshot", into = "EngineSnapshot")]
pub struct EngineState {
    lambda: usize,
    mean: DVector<f64>,
    sigma: f64,
    covariance: DMatrix<f64>,
    path_sigma: DVector<f64>,
    path_c: DVector<f64>,
    generation: u64,
    next_id: u64,
    pending: Vec<Candidate>,
    rng: ChaCha8Rng,
}

impl EngineState {
    pub fn new(config: &EngineConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dimension;
        Ok(Self {
            lambda: config.lambda,
            mean: DVector::from_column_slice(&config.mean0),
            sigma: config.sigma0,
            covariance: DMatrix::identity(d, d),
            path_sigma: DVector::zeros(d),
            path_c: DVector::zeros(d),
            generation: 0,
            next_id: 0,
            pending: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Candidates handed out by the last [`sample_generation`](Self::sample_generation)
    /// and not yet consumed by [`update`](Self::update).
    pub fn pending(&self) -> &[Candidate] {
        &self.pending
    }

    pub fn strategy(&self) -> StrategyParams {
        StrategyParams::new(self.dimension(), self.lambda)
    }

    /// Draws λ offspring `m + σ·B·D·z`, `z ~ N(0, I)`, where `C = B·D²·Bᵀ`.
    ///
    /// Sampling again before `update` replaces the pending generation.
    pub fn sample_generation(&mut self) -> Result<Vec<Candidate>> {
        let d = self.dimension();
        let (basis, scales) = self.eigen()?;
        let transform = &basis * DMatrix::from_diagonal(&scales.map(f64::sqrt));
        let mut out = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut self.rng)));
            let x = &self.mean + self.sigma * (&transform * z);
            out.push(Candidate {
                id: CandidateId(self.next_id),
                internal: x.as_slice().to_vec(),
                generation: self.generation,
            });
            self.next_id += 1;
        }
        self.pending = out.clone();
        Ok(out)
    }

    /// Consumes the pending generation ranked best-first (by id) and applies
    /// the mean, cumulative step-size, and rank-one plus rank-μ covariance updates.
    pub fn update(&mut self, ranked: &[CandidateId]) -> Result<()> {
        let order = self.resolve_ranking(ranked)?;
        let sp = self.strategy();
        let d = self.dimension();
        let n = d as f64;

        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = order
            .iter()
            .take(sp.mu)
            .map(|&i| (DVector::from_column_slice(&self.pending[i].internal) - &old_mean) / self.sigma)
            .collect();

        let mut new_mean = DVector::zeros(d);
        for (&i, w) in order.iter().zip(&sp.weights) {
            new_mean += *w * DVector::from_column_slice(&self.pending[i].internal);
        }
        let mean_step = (&new_mean - &old_mean) / self.sigma;

        let (basis, scales) = self.eigen()?;
        let inv_sqrt = &basis * DMatrix::from_diagonal(&scales.map(|v| 1.0 / v.sqrt())) * basis.transpose();

        let cs = sp.c_sigma;
        self.path_sigma = (1.0 - cs) * &self.path_sigma + (cs * (2.0 - cs) * sp.mu_eff).sqrt() * (&inv_sqrt * &mean_step);

        // Stall the rank-one path while |p_σ| is still unusually long.
        let ps_norm = self.path_sigma.norm();
        let decay = 1.0 - (1.0 - cs).powf(2.0 * (self.generation as f64 + 1.0));
        let h_sigma = ps_norm / decay.sqrt() < (1.4 + 2.0 / (n + 1.0)) * sp.expected_norm;
        let h = if h_sigma { 1.0 } else { 0.0 };

        let cc = sp.c_c;
        self.path_c = (1.0 - cc) * &self.path_c + h * (cc * (2.0 - cc) * sp.mu_eff).sqrt() * &mean_step;

        let mut rank_mu = DMatrix::zeros(d, d);
        for (y, w) in steps.iter().zip(&sp.weights) {
            rank_mu += *w * y * y.transpose();
        }
        let delta_h = (1.0 - h) * cc * (2.0 - cc);
        let keep = 1.0 - sp.c_1 - sp.c_mu + sp.c_1 * delta_h;
        let mut cov = keep * &self.covariance
            + sp.c_1 * &self.path_c * self.path_c.transpose()
            + sp.c_mu * rank_mu;
        cov = (&cov + cov.transpose()) * 0.5;

        let sigma = self.sigma * ((cs / sp.d_sigma) * (ps_norm / sp.expected_norm - 1.0)).exp();
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Factorization(format!("step size left the positive reals: {sigma}")));
        }

        self.covariance = cov;
        self.sigma = sigma;
        self.mean = new_mean;
        self.generation += 1;
        self.pending.clear();
        Ok(())
    }

    fn resolve_ranking(&self, ranked: &[CandidateId]) -> Result<Vec<usize>> {
        if self.pending.is_empty() {
            return Err(Error::NotAPermutation("no generation has been sampled".into()));
        }
        if ranked.len() != self.pending.len() {
            return Err(Error::NotAPermutation(format!(
                "expected {} candidates, got {}",
                self.pending.len(),
                ranked.len()
            )));
        }
        let index: HashMap<CandidateId, usize> =
            self.pending.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
        let mut seen = vec![false; self.pending.len()];
        ranked
            .iter()
            .map(|id| {
                let &i = index
                    .get(id)
                    .ok_or_else(|| Error::NotAPermutation(format!("{id} is not in the current generation")))?;
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::NotAPermutation(format!("{id} ranked twice")));
                }
                Ok(i)
            })
            .collect()
    }

    fn eigen(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if self.covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("covariance has non-finite entries".into()));
        }
        let eig = SymmetricEigen::new(self.covariance.clone());
        if let Some(&bad) = eig.eigenvalues.iter().find(|&&v| v.is_nan() || v <= 0.0) {
            return Err(Error::Factorization(format!("covariance is not positive definite (eigenvalue {bad})")));
        }
        Ok((eig.eigenvectors, eig.eigenvalues))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Serialized form: matrices row-major, RNG state as a hex blob of
/// `seed ‖ stream ‖ word position`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EngineSnapshot {
    version: u32,
    dimension: usize,
    lambda: usize,
    mean: Vec<f64>,
    sigma: f64,
    covariance: Vec<f64>,
    path_sigma: Vec<f64>,
    path_c: Vec<f64>,
    generation: u64,
    next_id: u64,
    pending: Vec<Candidate>,
    rng_state: String,
}

impl From<EngineState> for EngineSnapshot {
    fn from(s: EngineState) -> Self {
        let d = s.dimension();
        let mut covariance = Vec::with_capacity(d * d);
        for r in 0..d {
            covariance.extend((0..d).map(|c| s.covariance[(r, c)]));
        }
        let mut rng = Vec::with_capacity(56);
        rng.extend_from_slice(&s.rng.get_seed());
        rng.extend_from_slice(&s.rng.get_stream().to_le_bytes());
        rng.extend_from_slice(&s.rng.get_word_pos().to_le_bytes());
        Self {
            version: SNAPSHOT_VERSION,
            dimension: d,
            lambda: s.lambda,
            mean: s.mean.as_slice().to_vec(),
            sigma: s.sigma,
            covariance,
            path_sigma: s.path_sigma.as_slice().to_vec(),
            path_c: s.path_c.as_slice().to_vec(),
            generation: s.generation,
            next_id: s.next_id,
            pending: s.pending,
            rng_state: hex::encode(rng),
        }
    }
}

impl TryFrom<EngineSnapshot> for EngineState {
    type Error = Error;

    fn try_from(s: EngineSnapshot) -> Result<Self> {
        if s.version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported engine snapshot version {}", s.version)));
        }
        let d = s.dimension;
        let vec_ok = |v: &[f64]| v.len() == d;
        if d == 0 || !vec_ok(&s.mean) || !vec_ok(&s.path_sigma) || !vec_ok(&s.path_c) || s.covariance.len() != d * d {
            return Err(Error::Snapshot("engine snapshot has inconsistent dimensions".into()));
        }
        if s.pending.iter().any(|c| c.internal.len() != d) {
            return Err(Error::Snapshot("pending candidate has wrong dimension".into()));
        }
        let bytes = hex::decode(&s.rng_state).map_err(|e| Error::Snapshot(format!("rng_state: {e}")))?;
        if bytes.len() != 56 {
            return Err(Error::Snapshot(format!("rng_state must be 56 bytes, got {}", bytes.len())));
        }
        let seed: [u8; 32] = bytes[..32].try_into().expect("length checked");
        let stream = u64::from_le_bytes(bytes[32..40].try_into().expect("length checked"));
        let word_pos = u128::from_le_bytes(bytes[40..56].try_into().expect("length checked"));
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self {
            lambda: s.lambda,
            mean: DVector::from_vec(s.mean),
            sigma: s.sigma,
            covariance: DMatrix::from_row_slice(d, d, &s.covariance),
            path_sigma: DVector::from_vec(s.path_sigma),
            path_c: DVector::from_vec(s.path_c),
            generation: s.generation,
            next_id: s.next_id,
            pending: s.pending,
            rng,
        })
    }
}

/// Ranks a generation by direct evaluation, lowest value first.
/// Equal values keep sampling order.
pub fn rank_by_value<F>(candidates: &[Candidate], mut f: F) -> Vec<CandidateId>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut scored: Vec<(f64, CandidateId)> = candidates.iter().map(|c| (f(&c.internal), c.id)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.into_iter().map(|(_, id)| id).collect()
}
