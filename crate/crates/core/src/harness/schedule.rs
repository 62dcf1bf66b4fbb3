use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, ExperimentPlan, OracleSpec, RunRecord, RunSpec, Schedule, SimulatedUser};
use crate::engine::{Candidate, CandidateId, EngineState};
use crate::error::{Error, Result};
use crate::objectives::{log_loss, Function, Objective};
use crate::preference::{drive, Phase, Selector, SortMachine};

const STREAM_SHIFTS: u64 = 50;
const STREAM_BATCH: u64 = 60;
const STREAM_LANE: u64 = 100;

/// Multi-instance ablation: `instances` shifted copies of one function.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub function: Function,
    pub dimension: usize,
    pub crossover_p: f64,
    pub seed: u64,
    pub generations: usize,
    pub lambda: Option<usize>,
    pub sigma0: f64,
    pub instances: usize,
}

impl AblationSpec {
    pub fn from_plan(plan: &ExperimentPlan, dimension: usize, crossover_p: f64, seed: u64) -> Self {
        Self {
            function: plan.function,
            dimension,
            crossover_p,
            seed,
            generations: plan.generations_for(dimension),
            lambda: plan.lambda,
            sigma0: plan.sigma0,
            instances: plan.instances,
        }
    }

    fn run_spec(&self) -> RunSpec {
        let mut spec = RunSpec::new(Objective::new(self.function, self.dimension), self.crossover_p, self.seed, self.generations);
        spec.lambda = self.lambda;
        spec.sigma0 = self.sigma0;
        spec
    }
}

/// Total cost across all instances after one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub iteration: u64,
    pub evaluations: u64,
    pub queries: u64,
    pub total_cost: f64,
}

impl CostRecord {
    pub fn into_run_record(self, seed: u64) -> RunRecord {
        RunRecord {
            seed,
            generation: self.iteration,
            evaluations: self.evaluations,
            queries: self.queries,
            best_f: self.total_cost,
            log_loss: log_loss(self.total_cost),
            heuristic_fraction: 0.0,
        }
    }
}

/// Shifted instances with offsets drawn uniformly from `[-1, 1]^d`.
pub fn shifted_instances(function: Function, dimension: usize, count: usize, seed: u64) -> Vec<Objective> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHIFTS));
    (0..count)
        .map(|_| Objective::shifted(function, (0..dimension).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect()
}

/// Instance visited at each iteration under the batch schedule: every pass of
/// `count` iterations visits a fresh shuffle of all instances.
pub fn batch_sequence(count: usize, iterations: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_BATCH));
    let mut out = Vec::with_capacity(iterations);
    while out.len() < iterations {
        let mut pass: Vec<usize> = (0..count).collect();
        pass.shuffle(&mut rng);
        out.extend(pass);
    }
    out.truncate(iterations);
    out
}

/// One SortCMA optimizer stepped a generation at a time.
struct Lane {
    engine: EngineState,
    user: SimulatedUser,
    queries: u64,
}

impl Lane {
    fn new(spec: &RunSpec, lane_seed: u64) -> Result<Self> {
        let mut config = spec.engine_config();
        if lane_seed != spec.seed {
            config.seed = derive_seed(lane_seed, 2);
        }
        Ok(Self {
            engine: EngineState::new(&config)?,
            user: SimulatedUser::new(&OracleSpec::noisy(spec.oracle.crossover_p), lane_seed)?,
            queries: 0,
        })
    }

    fn step<C>(&mut self, cost: C) -> Result<Candidate>
    where
        C: Fn(&[f64]) -> Result<f64>,
    {
        let generation = self.engine.sample_generation()?;
        let values = generation
            .iter()
            .map(|c| Ok((c.id, cost(&c.internal)?)))
            .collect::<Result<HashMap<CandidateId, f64>>>()?;
        let g = self.engine.generation();
        let mut sel = Selector::Sort(SortMachine::begin(generation, Phase::GenerationSort, g)?);
        let user = &mut self.user;
        let (order, stats) = drive(&mut sel, |q| user.answer(q, &values), None, |_| {})?;
        self.engine.update(&order.iter().map(|c| c.id).collect::<Vec<_>>())?;
        self.queries += stats.query_count;
        Ok(order.into_iter().next().expect("non-empty generation"))
    }
}

fn total(instances: &[Objective], x: &[f64]) -> Result<f64> {
    instances.iter().map(|o| o.evaluate(x)).sum()
}

/// Runs one schedule and returns the total cost across instances per iteration.
///
/// * `global` ranks by the summed cost over all instances.
/// * `local` tunes one optimizer per instance and sums their individual costs.
/// * `batch` ranks each generation by a single instance, cycling through a
///   reshuffled order each pass; the reported cost is still the total.
pub fn run_schedule_ablation(spec: &AblationSpec, schedule: Schedule) -> Result<Vec<CostRecord>> {
    if spec.instances == 0 {
        return Err(Error::InvalidConfig("ablation needs at least one instance".into()));
    }
    if spec.generations == 0 {
        return Err(Error::InvalidConfig("generations must be >= 1".into()));
    }
    let run = spec.run_spec();
    let lambda = run.lambda() as u64;
    let instances = shifted_instances(spec.function, spec.dimension, spec.instances, spec.seed);
    let mut out = Vec::with_capacity(spec.generations);

    match schedule {
        Schedule::Single => return Err(Error::InvalidConfig("`single` is not a multi-instance schedule".into())),
        Schedule::Global | Schedule::Batch => {
            let sequence = batch_sequence(instances.len(), spec.generations, spec.seed);
            let mut lane = Lane::new(&run, spec.seed)?;
            for (t, &visit) in sequence.iter().enumerate() {
                let winner = if schedule == Schedule::Global {
                    lane.step(|x| total(&instances, x))?
                } else {
                    lane.step(|x| instances[visit].evaluate(x))?
                };
                out.push(CostRecord {
                    iteration: t as u64 + 1,
                    evaluations: (t as u64 + 1) * lambda,
                    queries: lane.queries,
                    total_cost: total(&instances, &winner.internal)?,
                });
            }
        }
        Schedule::Local => {
            let mut lanes = (0..instances.len())
                .map(|i| {
                    let lane_seed = if i == 0 { spec.seed } else { derive_seed(spec.seed, STREAM_LANE + i as u64) };
                    Lane::new(&run, lane_seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let k = instances.len() as u64;
            for t in 0..spec.generations {
                let mut cost = 0.0;
                for (lane, objective) in lanes.iter_mut().zip(&instances) {
                    let winner = lane.step(|x| objective.evaluate(x))?;
                    cost += objective.evaluate(&winner.internal)?;
                }
                out.push(CostRecord {
                    iteration: t as u64 + 1,
                    evaluations: (t as u64 + 1) * lambda * k,
                    queries: lanes.iter().map(|l| l.queries).sum(),
                    total_cost: cost,
                });
            }
        }
    }
    Ok(out)
}
