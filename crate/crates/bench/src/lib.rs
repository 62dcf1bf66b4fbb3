//! Workloads shared by the criterion benchmarks in `benches/`.

use sortcma_core::engine::rank_by_value;
use sortcma_core::harness::{run_sortcma, RunSpec};
use sortcma_core::preference::{drive, Selector, SortMachine};
use sortcma_core::{Candidate, CandidateId, EngineConfig, EngineState, Function, Objective, Phase, Verdict};

pub fn engine(dimension: usize, seed: u64) -> EngineState {
    EngineState::new(&EngineConfig::new(vec![1.0; dimension], 0.5, seed)).expect("valid config")
}

/// One sample + exact-rank + update cycle on the sphere.
pub fn generation_step(engine: &mut EngineState) {
    let gen = engine.sample_generation().expect("sampling");
    let ranked = rank_by_value(&gen, |x| x.iter().map(|v| v * v).sum());
    engine.update(&ranked).expect("update");
}

/// `n` scalar candidates with distinct values in a scrambled order.
pub fn scrambled(n: usize) -> Vec<Candidate> {
    (0..n)
        .map(|i| Candidate { id: CandidateId(i as u64), internal: vec![((i * 7919) % n) as f64], generation: 0 })
        .collect()
}

/// Sorts `items` through the comparison state machine; returns the query count.
pub fn comparison_sort(items: Vec<Candidate>) -> u64 {
    let mut sel = Selector::Sort(SortMachine::begin(items, Phase::GenerationSort, 0).expect("non-empty"));
    let (_, stats) = drive(
        &mut sel,
        |q| Verdict::from_values(q.left.internal[0], q.right.internal[0]).into(),
        None,
        |_| {},
    )
    .expect("exact answers");
    stats.query_count
}

/// A short noisy Ackley replicate; returns the final value.
pub fn short_run(dimension: usize, generations: usize, seed: u64) -> f64 {
    run_sortcma(&RunSpec::new(Objective::new(Function::Ackley, dimension), 0.1, seed, generations))
        .expect("replicate")
        .final_value
}
