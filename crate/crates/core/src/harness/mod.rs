//! Batch experiments with simulated oracles.
//!
//! A run alternates sample → comparison sort → update for `g` generations,
//! then picks a final answer among the generation winners with the same
//! noisy oracle. Replicates are independent and run on a rayon pool; output
//! order depends only on the plan, never on scheduling.

mod reward;
mod schedule;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{default_lambda, Candidate, CandidateId, EngineConfig, EngineState};
use crate::error::{Error, Result};
use crate::objectives::{heuristic_oracle, log_loss, Function, NoisyComparisonModel, NoisyHeuristic, Objective};
use crate::preference::{
    drive, AnswerSource, Choice, ComparisonQuery, Heuristic, Phase, PreferenceRecord, Selector, SortMachine, SortStats,
    Tournament,
};

pub use self::reward::{
    fit_linear_reward, optimize_learned_reward, reward_learning_study, LearnedOptimum, RewardModel, RewardReport,
    DEFAULT_L2,
};
pub use self::schedule::{run_schedule_ablation, shifted_instances, AblationSpec, CostRecord};

/// Header of every CSV the harness writes.
pub const CSV_HEADER: &str = "seed,generation,evaluations,queries,best_f,log_loss,heuristic_fraction";

/// Evaluation budget the default generation count aims for.
pub const DEFAULT_EVALUATIONS: usize = 3_000;

/// Independent sub-seed for one purpose within a replicate (splitmix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_ENGINE: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_DEFER: u64 = 4;
const STREAM_HEURISTIC_NOISE: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalMode {
    /// `g − 1` comparison linear tournament.
    Tournament,
    /// Full comparison sort over all generation winners.
    FullSort,
}

impl FromStr for FinalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tournament" => Ok(FinalMode::Tournament),
            "full-sort" => Ok(FinalMode::FullSort),
            other => Err(Error::InvalidConfig(format!("unknown final mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Single,
    Global,
    Local,
    Batch,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Schedule::Single),
            "global" => Ok(Schedule::Global),
            "local" => Ok(Schedule::Local),
            "batch" => Ok(Schedule::Batch),
            other => Err(Error::InvalidConfig(format!("unknown schedule `{other}`"))),
        }
    }
}

/// Simulated-user behaviour shared by every comparison of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub crossover_p: f64,
    /// Probability that the simulated user defers a comparison to the heuristic.
    pub defer_rate: f64,
    /// Apply crossover noise to deferred comparisons too.
    pub noisy_heuristic: bool,
}

impl OracleSpec {
    pub fn noisy(crossover_p: f64) -> Self {
        Self { crossover_p, defer_rate: 0.0, noisy_heuristic: false }
    }

    pub fn exact() -> Self {
        Self::noisy(0.0)
    }
}

/// One replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub objective: Objective,
    pub oracle: OracleSpec,
    pub seed: u64,
    pub generations: usize,
    pub lambda: Option<usize>,
    pub sigma0: f64,
    /// Initial mean; drawn uniformly from `[-3, 3]^d` per seed when absent.
    pub mean0: Option<Vec<f64>>,
    pub final_mode: FinalMode,
}

impl RunSpec {
    pub fn new(objective: Objective, crossover_p: f64, seed: u64, generations: usize) -> Self {
        Self {
            objective,
            oracle: OracleSpec::noisy(crossover_p),
            seed,
            generations,
            lambda: None,
            sigma0: 1.0,
            mean0: None,
            final_mode: FinalMode::Tournament,
        }
    }

    pub fn lambda(&self) -> usize {
        self.lambda.unwrap_or_else(|| default_lambda(self.objective.dimension))
    }

    pub fn engine_config(&self) -> EngineConfig {
        let d = self.objective.dimension;
        let mean0 = self.mean0.clone().unwrap_or_else(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, STREAM_INIT));
            (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()
        });
        EngineConfig::new(mean0, self.sigma0, derive_seed(self.seed, STREAM_ENGINE)).with_lambda(self.lambda())
    }

    fn validate(&self) -> Result<()> {
        if self.generations == 0 {
            return Err(Error::InvalidConfig("generations must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.oracle.defer_rate) {
            return Err(Error::InvalidConfig(format!("defer rate must be in [0, 1], got {}", self.oracle.defer_rate)));
        }
        Ok(())
    }
}

/// Progress after one generation. The last record of a run describes the
/// final selection: its `best_f` is the selected candidate's value and its
/// `queries` include the final-selection queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub generation: u64,
    pub evaluations: u64,
    pub queries: u64,
    pub best_f: f64,
    pub log_loss: f64,
    pub heuristic_fraction: f64,
}

/// Everything a replicate produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub final_candidate: Candidate,
    pub final_value: f64,
    pub generation_bests: Vec<Candidate>,
    pub final_stats: SortStats,
    pub per_generation: Vec<SortStats>,
    pub preferences: Vec<PreferenceRecord>,
    pub engine: EngineState,
}

/// Answers queries the way a simulated user would: maybe defer, otherwise
/// report the noisy comparison of the two cached values.
pub(crate) struct SimulatedUser {
    noise: NoisyComparisonModel,
    defer: ChaCha8Rng,
    defer_rate: f64,
}

impl SimulatedUser {
    pub(crate) fn new(oracle: &OracleSpec, seed: u64) -> Result<Self> {
        Ok(Self {
            noise: NoisyComparisonModel::new(oracle.crossover_p, derive_seed(seed, STREAM_NOISE))?,
            defer: ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_DEFER)),
            defer_rate: oracle.defer_rate,
        })
    }

    pub(crate) fn answer(&mut self, q: &ComparisonQuery, values: &HashMap<CandidateId, f64>) -> Choice {
        if self.defer_rate > 0.0 && self.defer.random::<f64>() < self.defer_rate {
            return Choice::DeferToHeuristic;
        }
        self.noise.compare(values[&q.left.id], values[&q.right.id]).into()
    }
}

/// Runs one SortCMA replicate against `cost`, which must return the true
/// (noise-free) value of a point in internal coordinates.
pub fn run_sortcma_with<C>(spec: &RunSpec, cost: C, heuristic: &dyn Heuristic) -> Result<RunOutcome>
where
    C: Fn(&[f64]) -> Result<f64>,
{
    spec.validate()?;
    let mut engine = EngineState::new(&spec.engine_config())?;
    let lambda = engine.lambda() as u64;
    let mut user = SimulatedUser::new(&spec.oracle, spec.seed)?;

    let mut values: HashMap<CandidateId, f64> = HashMap::new();
    let mut records = Vec::with_capacity(spec.generations);
    let mut bests = Vec::with_capacity(spec.generations);
    let mut per_generation = Vec::with_capacity(spec.generations);
    let mut preferences = Vec::new();
    let (mut queries, mut deferred) = (0u64, 0u64);
    let mut best_so_far = f64::INFINITY;

    for g in 0..spec.generations {
        let generation = engine.sample_generation()?;
        for c in &generation {
            values.insert(c.id, cost(&c.internal)?);
        }
        let mut sel = Selector::Sort(SortMachine::begin(generation, Phase::GenerationSort, g as u64)?);
        let (order, stats) = drive(&mut sel, |q| user.answer(q, &values), Some(heuristic), |r| {
            preferences.push(PreferenceRecord::from_resolution(r, AnswerSource::Simulated, 0))
        })?;
        engine.update(&order.iter().map(|c| c.id).collect::<Vec<_>>())?;

        let winner = order.into_iter().next().expect("non-empty generation");
        best_so_far = best_so_far.min(values[&winner.id]);
        queries += stats.query_count;
        deferred += stats.heuristic_count;
        per_generation.push(stats);
        bests.push(winner);
        records.push(RunRecord {
            seed: spec.seed,
            generation: g as u64 + 1,
            evaluations: (g as u64 + 1) * lambda,
            queries,
            best_f: best_so_far,
            log_loss: log_loss(best_so_far),
            heuristic_fraction: fraction(deferred, queries),
        });
    }

    let mut sel = match spec.final_mode {
        FinalMode::Tournament => Selector::Tournament(Tournament::begin(bests.clone())?),
        FinalMode::FullSort => Selector::Sort(SortMachine::begin(bests.clone(), Phase::FinalSelection, spec.generations as u64)?),
    };
    let (order, final_stats) = drive(&mut sel, |q| user.answer(q, &values), Some(heuristic), |r| {
        preferences.push(PreferenceRecord::from_resolution(r, AnswerSource::Simulated, 0))
    })?;
    let final_candidate = order.into_iter().next().expect("non-empty final selection");
    let final_value = values[&final_candidate.id];
    queries += final_stats.query_count;
    deferred += final_stats.heuristic_count;
    let last = records.last_mut().expect("at least one generation");
    last.queries = queries;
    last.best_f = final_value;
    last.log_loss = log_loss(final_value);
    last.heuristic_fraction = fraction(deferred, queries);

    Ok(RunOutcome {
        records,
        final_candidate,
        final_value,
        generation_bests: bests,
        final_stats,
        per_generation,
        preferences,
        engine,
    })
}

/// One replicate on a benchmark objective with its exact (or noisy)
/// heuristic for deferrals.
pub fn run_sortcma(spec: &RunSpec) -> Result<RunOutcome> {
    let objective = spec.objective.clone();
    let cost = move |x: &[f64]| objective.evaluate(x);
    if spec.oracle.noisy_heuristic {
        let model = NoisyComparisonModel::new(spec.oracle.crossover_p, derive_seed(spec.seed, STREAM_HEURISTIC_NOISE))?;
        run_sortcma_with(spec, cost, &NoisyHeuristic::new(&spec.objective, model))
    } else {
        run_sortcma_with(spec, cost, &heuristic_oracle(&spec.objective))
    }
}

fn fraction(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

/// A grid of replicates: every dimension × crossover probability × seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub function: Function,
    pub dimensions: Vec<usize>,
    pub crossover: Vec<f64>,
    pub seeds: u64,
    /// Generations per run; `None` targets [`DEFAULT_EVALUATIONS`] evaluations.
    pub generations: Option<usize>,
    pub lambda: Option<usize>,
    pub sigma0: f64,
    pub schedule: Schedule,
    pub instances: usize,
    pub final_mode: FinalMode,
    pub defer_rate: f64,
    pub noisy_heuristic: bool,
}

impl ExperimentPlan {
    /// Default noisy-comparison study grid for `function`.
    pub fn study(function: Function) -> Self {
        Self {
            function,
            dimensions: vec![2, 8, 32],
            crossover: vec![0.0, 0.1, 0.25, 0.4],
            seeds: 20,
            generations: None,
            lambda: None,
            sigma0: 1.0,
            schedule: Schedule::Single,
            instances: 4,
            final_mode: FinalMode::Tournament,
            defer_rate: 0.0,
            noisy_heuristic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.is_empty() || self.crossover.is_empty() {
            return Err(Error::InvalidConfig("dimension and crossover lists must be non-empty".into()));
        }
        if self.dimensions.contains(&0) {
            return Err(Error::InvalidConfig("dimensions must be >= 1".into()));
        }
        if self.seeds == 0 {
            return Err(Error::InvalidConfig("seeds must be >= 1".into()));
        }
        if self.generations == Some(0) {
            return Err(Error::InvalidConfig("generations must be >= 1".into()));
        }
        if self.schedule != Schedule::Single && self.instances == 0 {
            return Err(Error::InvalidConfig("instances must be >= 1".into()));
        }
        if let Some(&p) = self.crossover.iter().find(|p| !(0.0..=0.5).contains(*p)) {
            return Err(Error::InvalidConfig(format!("crossover probability must be in [0, 0.5], got {p}")));
        }
        Ok(())
    }

    pub fn lambda_for(&self, dimension: usize) -> usize {
        self.lambda.unwrap_or_else(|| default_lambda(dimension))
    }

    pub fn generations_for(&self, dimension: usize) -> usize {
        self.generations
            .unwrap_or_else(|| ((DEFAULT_EVALUATIONS as f64 / self.lambda_for(dimension) as f64).round() as usize).max(1))
    }

    pub fn run_spec(&self, dimension: usize, crossover_p: f64, seed: u64) -> RunSpec {
        RunSpec {
            objective: Objective::new(self.function, dimension),
            oracle: OracleSpec { crossover_p, defer_rate: self.defer_rate, noisy_heuristic: self.noisy_heuristic },
            seed,
            generations: self.generations_for(dimension),
            lambda: self.lambda,
            sigma0: self.sigma0,
            mean0: None,
            final_mode: self.final_mode,
        }
    }
}

/// Records of every replicate in one grid cell, ordered by seed.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub dimension: usize,
    pub crossover_p: f64,
    pub schedule: Schedule,
    pub records: Vec<RunRecord>,
}

impl CellResult {
    pub fn to_csv(&self) -> String {
        write_csv(&self.records)
    }

    /// Conventional file name for this cell's CSV.
    pub fn file_name(&self, function: Function) -> String {
        match self.schedule {
            Schedule::Single => format!("{function}_d{}_p{}.csv", self.dimension, self.crossover_p),
            s => format!("{}_d{}_p{}.csv", format!("{s:?}").to_lowercase(), self.dimension, self.crossover_p),
        }
    }

    /// Per-seed record at the given 1-based generation.
    pub fn at_generation(&self, generation: u64) -> Vec<&RunRecord> {
        self.records.iter().filter(|r| r.generation == generation).collect()
    }

    pub fn final_records(&self) -> Vec<&RunRecord> {
        let last = self.records.iter().map(|r| r.generation).max().unwrap_or(0);
        self.at_generation(last)
    }
}

/// Runs every replicate of `plan` in parallel. Any failed replicate fails the
/// whole grid; the error names the cell and seed.
pub fn run_plan(plan: &ExperimentPlan) -> Result<Vec<CellResult>> {
    plan.validate()?;
    let cells: Vec<(usize, f64)> =
        plan.dimensions.iter().flat_map(|&d| plan.crossover.iter().map(move |&p| (d, p))).collect();
    let tasks: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| (0..plan.seeds).map(move |s| (c, s))).collect();

    let results: Vec<Result<Vec<RunRecord>>> = tasks
        .par_iter()
        .map(|&(c, seed)| {
            let (d, p) = cells[c];
            let res = match plan.schedule {
                Schedule::Single => run_sortcma(&plan.run_spec(d, p, seed)).map(|o| o.records),
                schedule => {
                    let spec = AblationSpec::from_plan(plan, d, p, seed);
                    run_schedule_ablation(&spec, schedule).map(|rs| rs.into_iter().map(|r| r.into_run_record(seed)).collect())
                }
            };
            res.map_err(|e| Error::InvalidConfig(format!("replicate d={d} p={p} seed={seed} failed: {e}")))
        })
        .collect();

    let mut out: Vec<CellResult> = cells
        .iter()
        .map(|&(dimension, crossover_p)| CellResult { dimension, crossover_p, schedule: plan.schedule, records: Vec::new() })
        .collect();
    for (&(c, _), res) in tasks.iter().zip(results) {
        out[c].records.extend(res?);
    }
    Ok(out)
}

pub fn write_csv(records: &[RunRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{},{}",
            r.seed, r.generation, r.evaluations, r.queries, r.best_f, r.log_loss, r.heuristic_fraction
        );
    }
    s
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ordinary least squares `y = a + b x`; returns `(slope, r²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, sxy * sxy / (sxx * syy))
}
