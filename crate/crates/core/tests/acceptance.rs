//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::SymmetricEigen;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sortcma_core::engine::{rank_by_value, raw_weights, recombination_weights};
use sortcma_core::harness::{
    fit_linear_reward, linear_fit, median, reward_learning_study, run_plan, run_schedule_ablation, run_sortcma,
    AblationSpec, ExperimentPlan, RunSpec, Schedule, DEFAULT_L2,
};
use sortcma_core::objectives::NoisyComparisonModel;
use sortcma_core::preference::{drive, AnswerSource, QueryId, Selector, SortMachine, Tournament};
use sortcma_core::session::{Hooks, QueryResponse, SessionRecord, SessionStore, WireChoice};
use sortcma_core::{
    Candidate, CandidateId, Choice, ComparisonQuery, EngineConfig, EngineState, Function, Objective, ParamSpec, Phase,
    PreferenceRecord, SearchSpace, SpaceConfig, Verdict,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn candidates(values: &[f64]) -> Vec<Candidate> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| Candidate { id: CandidateId(i as u64), internal: vec![v], generation: 0 })
        .collect()
}

fn exact(q: &ComparisonQuery) -> Choice {
    Verdict::from_values(q.left.internal[0], q.right.internal[0]).into()
}

fn bound(lambda: usize) -> u64 {
    (lambda * (lambda as f64).log2().ceil() as usize + lambda) as u64
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for trial in 0..1000 {
        let n = rng.random_range(2..=16);
        let mut values: Vec<f64> = (0..n).map(|i| i as f64 + rng.random::<f64>() * 0.5).collect();
        values.shuffle(&mut rng);
        let items = candidates(&values);
        let mut sel = Selector::Sort(SortMachine::begin(items.clone(), Phase::GenerationSort, 0).unwrap());
        let (order, _) = drive(&mut sel, exact, None, |_| {}).unwrap();
        let got: Vec<CandidateId> = order.iter().map(|c| c.id).collect();
        if got != rank_by_value(&items, |x| x[0]) {
            return Err(format!("trial {trial} (n={n}) differs from sort-by-f"));
        }
    }

    let objective = Objective::new(Function::Sphere, 4);
    let mut spec = RunSpec::new(objective.clone(), 0.0, 4, 50);
    spec.mean0 = Some(vec![1.0, -2.0, 0.5, 3.0]);
    let config = spec.engine_config();
    let mut via_sort = EngineState::new(&config).unwrap();
    let mut direct = EngineState::new(&config).unwrap();
    let f = |x: &[f64]| objective.evaluate(x).unwrap();
    for g in 0..50 {
        let gen = via_sort.sample_generation().unwrap();
        let mut sel = Selector::Sort(SortMachine::begin(gen, Phase::GenerationSort, g).unwrap());
        let (order, _) =
            drive(&mut sel, |q| Verdict::from_values(f(&q.left.internal), f(&q.right.internal)).into(), None, |_| {})
                .unwrap();
        via_sort.update(&order.iter().map(|c| c.id).collect::<Vec<_>>()).unwrap();

        let gen = direct.sample_generation().unwrap();
        direct.update(&rank_by_value(&gen, f)).unwrap();

        let same = via_sort.mean().iter().zip(direct.mean()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same || via_sort.sigma().to_bits() != direct.sigma().to_bits() {
            return Err(format!("mean trajectory diverged at generation {}", g + 1));
        }
    }
    // The batch harness with a noise-free simulated user walks the same path.
    let harness = run_sortcma(&spec).unwrap();
    check(
        harness.engine == direct,
        "1000/1000 sorts equal sort-by-f; 50-generation sphere d=4 trajectory bitwise identical".into(),
    )
}

fn noise_calibration() -> Outcome {
    let trials = 10_000;
    let mut details = Vec::new();
    let mut ok = true;
    for (i, p) in [0.1, 0.25].into_iter().enumerate() {
        let mut model = NoisyComparisonModel::new(p, 77 + i as u64).unwrap();
        let flips = (0..trials).filter(|_| model.compare(0.0, 1.0) == Verdict::SecondBetter).count();
        let rate = flips as f64 / trials as f64;
        ok &= (rate - p).abs() <= 0.015;
        details.push(format!("p={p}: flip rate {rate:.4}"));
    }
    let mut model = NoisyComparisonModel::new(0.5, 99).unwrap();
    let firsts = (0..trials).filter(|_| model.compare(0.0, 1.0) == Verdict::FirstBetter).count();
    let rate = firsts as f64 / trials as f64;
    ok &= (rate - 0.5).abs() <= 0.02;
    details.push(format!("p=0.5: first side chosen {rate:.4}"));
    check(ok, details.join(", "))
}

/// Ackley grid (dimension → [(p, median gen-1 log-loss, median final log-loss)]).
type Grid = BTreeMap<usize, Vec<(f64, f64, f64)>>;

fn ackley_grid() -> Grid {
    let plan = ExperimentPlan::study(Function::Ackley);
    let mut grid = Grid::new();
    for cell in run_plan(&plan).unwrap() {
        let first = median(&cell.at_generation(1).iter().map(|r| r.log_loss).collect::<Vec<_>>());
        let last = median(&cell.final_records().iter().map(|r| r.log_loss).collect::<Vec<_>>());
        grid.entry(cell.dimension).or_default().push((cell.crossover_p, first, last));
    }
    for series in grid.values_mut() {
        series.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    grid
}

fn grid_reproduction(grid: &Grid) -> Outcome {
    let mut ok = true;
    let mut cells = Vec::new();
    for (d, series) in grid {
        for &(p, first, last) in series {
            if p <= 0.25 {
                ok &= last < first;
            }
            cells.push(format!("d={d} p={p}: {first:.2}->{last:.2}"));
        }
    }

    let sphere = ExperimentPlan { dimensions: vec![8], crossover: vec![0.0], ..ExperimentPlan::study(Function::Sphere) };
    let cell = &run_plan(&sphere).unwrap()[0];
    let g = sphere.generations_for(8) as u64;
    // Converging segment: skip the first fifth (step-size adaptation) and the
    // last row, which reports the final selection.
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for gen in (g / 5).max(1)..g {
        let at = cell.at_generation(gen);
        xs.push(at[0].evaluations as f64);
        ys.push(median(&at.iter().map(|r| r.best_f.log10()).collect::<Vec<_>>()));
    }
    let (slope, r2) = linear_fit(&xs, &ys);
    ok &= slope < 0.0 && r2 > 0.9;
    check(
        ok,
        format!(
            "(a) median log-loss gen 1 -> final [{}]; (b) sphere d=8 p=0: slope {slope:.3e} per evaluation, R^2 {r2:.4}",
            cells.join("; ")
        ),
    )
}

fn noise_monotonicity(grid: &Grid) -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for (d, series) in grid {
        let inversions = series.windows(2).filter(|w| w[1].2 < w[0].2).count();
        ok &= inversions <= 1;
        let meds: Vec<String> = series.iter().map(|(p, _, m)| format!("p={p}:{m:.2}")).collect();
        details.push(format!("d={d} [{}] {inversions} inversion(s)", meds.join(" ")));
    }
    check(ok, details.join("; "))
}

fn query_accounting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for lambda in 2..=64usize {
        for trial in 0..20u64 {
            let values: Vec<f64> = (0..lambda).map(|_| rng.random()).collect();
            let p = if trial % 2 == 0 { 0.0 } else { 0.4 };
            let mut noise = NoisyComparisonModel::new(p, trial).unwrap();
            let mut sel = Selector::Sort(SortMachine::begin(candidates(&values), Phase::GenerationSort, 0).unwrap());
            let (_, stats) =
                drive(&mut sel, |q| noise.compare(q.left.internal[0], q.right.internal[0]).into(), None, |_| {})
                    .unwrap();
            if stats.query_count > bound(lambda) {
                return Err(format!("lambda={lambda}: {} queries > bound {}", stats.query_count, bound(lambda)));
            }
            worst = worst.max(stats.query_count as f64 / bound(lambda) as f64);
        }
    }
    for g in [1usize, 2, 5, 15, 40] {
        let values: Vec<f64> = (0..g).map(|_| rng.random()).collect();
        let mut sel = Selector::Tournament(Tournament::begin(candidates(&values)).unwrap());
        let (_, stats) = drive(&mut sel, exact, None, |_| {}).unwrap();
        if stats.query_count as usize != g - 1 {
            return Err(format!("final selection over {g} asked {} queries", stats.query_count));
        }
    }
    for g in [1usize, 15] {
        let out = run_sortcma(&RunSpec::new(Objective::new(Function::Ackley, 3), 0.25, 3, g)).unwrap();
        let b = bound(out.engine.lambda());
        if out.per_generation.iter().any(|s| s.query_count > b) || out.final_stats.query_count != g as u64 - 1 {
            return Err(format!("harness run with g={g} broke the query budget"));
        }
    }
    check(
        true,
        format!(
            "lambda 2..64 within lambda*ceil(log2 lambda)+lambda (worst {:.0}% of bound); final selection asks g-1",
            worst * 100.0
        ),
    )
}

fn weights() -> Outcome {
    let expected: [(usize, &[f64]); 2] = [(2, &[0.4055, -0.2877]), (4, &[0.9163, 0.2231, -0.1823, -0.4700])];
    for (lambda, want) in expected {
        let got = raw_weights(lambda);
        if got.iter().zip(want).any(|(a, b)| (a - b).abs() > 1e-4) {
            return Err(format!("raw weights for lambda={lambda}: {got:?}"));
        }
    }
    for lambda in 2..=10usize {
        let raw = raw_weights(lambda);
        let h = ((lambda + 1) as f64 / 2.0).ln();
        for (k, w) in raw.iter().enumerate() {
            if (w - (h - ((k + 1) as f64).ln())).abs() > 1e-4 {
                return Err(format!("raw weight {} for lambda={lambda} is {w}", k + 1));
            }
        }
        let (w, mu) = recombination_weights(lambda);
        let sum: f64 = w.iter().sum();
        if mu != lambda / 2
            || w.iter().any(|&v| v <= 0.0)
            || w.windows(2).any(|p| p[1] >= p[0])
            || (sum - 1.0).abs() > 1e-12
        {
            return Err(format!("recombination weights for lambda={lambda}: {w:?}"));
        }
    }
    let (w4, _) = recombination_weights(4);
    check(
        (w4[0] - 0.8042).abs() < 1e-4 && (w4[1] - 0.1958).abs() < 1e-4,
        "raw weights match ln((lambda+1)/2) - ln k for lambda 2..10; recombination weights positive, decreasing, sum to 1"
            .into(),
    )
}

fn engine_health() -> Outcome {
    let mut details = Vec::new();
    for d in [2usize, 12, 35] {
        let mut engine = EngineState::new(&EngineConfig::new(vec![0.0; d], 0.5, d as u64)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(d as u64 + 100);
        let (mut max_asym, mut min_eig) = (0.0f64, f64::INFINITY);
        for step in 0..500 {
            let mut ids: Vec<CandidateId> = engine.sample_generation().unwrap().iter().map(|c| c.id).collect();
            ids.shuffle(&mut rng);
            engine.update(&ids).unwrap();
            let c = engine.covariance();
            max_asym = max_asym.max((c - c.transpose()).amax());
            let eig = SymmetricEigen::new(c.clone()).eigenvalues.min();
            min_eig = min_eig.min(eig);
            let s = engine.sigma();
            if max_asym > 1e-12 || eig <= 0.0 || !(s.is_finite() && s > 0.0) {
                return Err(format!(
                    "d={d} unhealthy after {} updates (asymmetry {max_asym:e}, min eigenvalue {eig:e}, sigma {s:e})",
                    step + 1
                ));
            }
        }
        details.push(format!("d={d}: asymmetry {max_asym:.1e}, min eigenvalue {min_eig:.2e}, sigma {:.2e}", engine.sigma()));
    }
    check(true, details.join("; "))
}

fn schedule_ablation() -> Outcome {
    let generations = 60;
    let mut finals = HashMap::new();
    let mut ok = true;
    let mut details = Vec::new();
    for schedule in [Schedule::Global, Schedule::Local, Schedule::Batch] {
        let runs: Vec<_> = (0..10)
            .map(|seed| {
                let spec = AblationSpec {
                    function: Function::Sphere,
                    dimension: 6,
                    crossover_p: 0.1,
                    seed,
                    generations,
                    lambda: None,
                    sigma0: 1.0,
                    instances: 4,
                };
                run_schedule_ablation(&spec, schedule).unwrap()
            })
            .collect();
        let first = median(&runs.iter().map(|r| r[0].total_cost).collect::<Vec<_>>());
        let last = median(&runs.iter().map(|r| r[generations - 1].total_cost).collect::<Vec<_>>());
        ok &= last < first;
        finals.insert(schedule, last);
        details.push(format!("{schedule:?}: {first:.2} -> {last:.3}"));
    }
    let (g, b) = (finals[&Schedule::Global], finals[&Schedule::Batch]);
    let ratio = g.max(b) / g.min(b);
    ok &= ratio < 2.0;
    details.push(format!("global/batch final ratio {ratio:.3}"));
    check(ok, details.join("; "))
}

fn reward_baseline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let truth = [0.8, -1.5, 0.3, 2.0, -0.7];
    let reward = |x: &[f64]| x.iter().zip(&truth).map(|(a, w)| a * w).sum::<f64>();
    let pair = |rng: &mut ChaCha8Rng| {
        let a: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let outcome = if reward(&a) >= reward(&b) { Verdict::FirstBetter } else { Verdict::SecondBetter };
        PreferenceRecord {
            query_id: QueryId("q".into()),
            generation: 0,
            phase: Phase::GenerationSort,
            left_id: CandidateId(0),
            right_id: CandidateId(1),
            choice: outcome.into(),
            source: AnswerSource::Simulated,
            timestamp: 0,
            outcome,
            left_x: Some(a),
            right_x: Some(b),
        }
    };
    let train: Vec<_> = (0..200).map(|_| pair(&mut rng)).collect();
    let held_out: Vec<_> = (0..200).map(|_| pair(&mut rng)).collect();
    let model = fit_linear_reward(&train, |x: &[f64]| x.to_vec(), DEFAULT_L2).unwrap();
    let correct = held_out
        .iter()
        .filter(|r| {
            let p = model.prefer_probability(r.left_x.as_ref().unwrap(), r.right_x.as_ref().unwrap());
            (p >= 0.5) == (r.outcome == Verdict::FirstBetter)
        })
        .count();
    let accuracy = correct as f64 / held_out.len() as f64;
    let dot: f64 = model.weights.iter().zip(&truth).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine = dot / (norm(&model.weights) * norm(&truth));

    let mut losses = Vec::new();
    for seed in 0..10 {
        let spec = RunSpec::new(Objective::new(Function::Ackley, 8), 0.1, seed, 300);
        let objective = spec.objective.clone();
        let r = reward_learning_study(&spec, |x: &[f64]| objective.evaluate(x), DEFAULT_L2)
            .map_err(|e| format!("Ackley d=8 report failed for seed {seed}: {e}"))?;
        if r.sortcma_evaluations != r.learned_evaluations || !r.sortcma_loss.is_finite() || !r.learned_loss.is_finite() {
            return Err(format!("malformed report for seed {seed}"));
        }
        losses.push((r.sortcma_loss, r.learned_loss));
    }
    let sortcma = median(&losses.iter().map(|l| l.0).collect::<Vec<_>>());
    let learned = median(&losses.iter().map(|l| l.1).collect::<Vec<_>>());
    check(
        accuracy > 0.9 && cosine > 0.95,
        format!(
            "held-out accuracy {accuracy:.3}, cosine {cosine:.4}; 10 Ackley d=8 reports (median loss SortCMA {sortcma:.3}, learned reward {learned:.3})"
        ),
    )
}

fn crash_resume() -> Outcome {
    let config = SpaceConfig {
        name: "resume".into(),
        sigma0: 0.2,
        lambda: None,
        seed: Some(2024),
        params: SearchSpace::new(
            (0..5).map(|i| ParamSpec { name: format!("p{i}"), init: 0.5 + i as f64, positive: i % 2 == 0 }).collect(),
        )
        .unwrap(),
    };
    // Scripted operator: a fixed pseudo-random left/right sequence and a
    // terminate request at a fixed step.
    let script = |step: u64| {
        if ChaCha8Rng::seed_from_u64(step).random::<bool>() {
            WireChoice::Left
        } else {
            WireChoice::Right
        }
    };
    let terminate_at = 75;

    let run = |restart_every: Option<u64>| -> (Vec<String>, SessionRecord) {
        let dir = tempfile::tempdir().unwrap();
        let open = || SessionStore::open(dir.path(), Some(config.clone()), Hooks::default()).unwrap();
        let mut store = open();
        let id = store.create_with_id("s".into(), None).unwrap();
        let mut trace = Vec::new();
        for step in 0.. {
            if step == terminate_at {
                store.terminate(&id).unwrap();
            }
            let q = match store.query(&id).unwrap() {
                QueryResponse::Query(q) => q,
                QueryResponse::Done { winner, .. } => {
                    trace.push(format!("winner {}", serde_json::to_string(&winner).unwrap()));
                    break;
                }
            };
            trace.push(serde_json::to_string(&q).unwrap());
            store.answer(&id, &q.query_id, script(step)).unwrap();
            if restart_every.is_some_and(|k| (step + 1) % k == 0) {
                drop(store);
                store = open();
            }
        }
        (trace, store.record(&id).unwrap())
    };

    let (reference, ref_record) = run(None);
    for k in [1, 2, 7] {
        let (trace, record) = run(Some(k));
        if trace != reference {
            let at = trace.iter().zip(&reference).position(|(a, b)| a != b).unwrap_or(trace.len().min(reference.len()));
            return Err(format!("restarting every {k} ack(s) diverged at query {at}"));
        }
        if record != ref_record {
            return Err(format!("restarting every {k} ack(s) left a different final record"));
        }
    }
    check(
        true,
        format!(
            "{} queries (sorting + final selection) identical with restarts after every 1, 2 and 7 acks",
            reference.len() - 1
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let grid = std::cell::OnceCell::new();
    let criteria: Vec<Criterion> = vec![
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("noise model calibration", Box::new(noise_calibration)),
        ("ackley grid reproduction", Box::new(|| grid_reproduction(grid.get_or_init(ackley_grid)))),
        ("noise monotonicity", Box::new(|| noise_monotonicity(grid.get_or_init(ackley_grid)))),
        ("query accounting", Box::new(query_accounting)),
        ("weights", Box::new(weights)),
        ("engine health", Box::new(engine_health)),
        ("schedule ablation", Box::new(schedule_ablation)),
        ("reward-learning baseline", Box::new(reward_baseline)),
        ("crash-resume", Box::new(crash_resume)),
    ];
    let total = criteria.len();
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let out = f();
        let (tag, detail) = match &out {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {name} ({:.1}s): {detail}", t.elapsed().as_secs_f64());
    }
    println!("acceptance: {}/{total} criteria passed in {:.1}s", total - failed, started.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
