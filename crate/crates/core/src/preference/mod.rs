//! Rankings from pairwise preferences.
//!
//! Both selectors here are explicit state machines: they hand out one
//! [`ComparisonQuery`] at a time, suspend until it is answered, and can be
//! serialized at any point in between. That is what lets a human sit on the
//! other end of a network round trip.

mod log;
mod sort;
mod tournament;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::{recombination_weights, Candidate};
use crate::error::{Error, Result};

pub use self::log::{now_millis, read_log, AnswerSource, PreferenceLog, PreferenceRecord};
pub use self::sort::{timsort_min_run, SortMachine};
pub use self::tournament::Tournament;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    GenerationSort,
    FinalSelection,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryId(pub String);

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// "Which of these two is better?"
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonQuery {
    pub query_id: QueryId,
    pub left: Candidate,
    pub right: Candidate,
    pub phase: Phase,
    pub generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Choice {
    FirstBetter,
    SecondBetter,
    DeferToHeuristic,
}

/// A resolved comparison outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    FirstBetter,
    SecondBetter,
}

impl Verdict {
    /// Lower value wins; ties go to the first (left) side.
    pub fn from_values(left: f64, right: f64) -> Self {
        if right < left {
            Verdict::SecondBetter
        } else {
            Verdict::FirstBetter
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Verdict::FirstBetter => Verdict::SecondBetter,
            Verdict::SecondBetter => Verdict::FirstBetter,
        }
    }
}

impl From<Verdict> for Choice {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::FirstBetter => Choice::FirstBetter,
            Verdict::SecondBetter => Choice::SecondBetter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preference {
    pub query_id: QueryId,
    pub choice: Choice,
}

impl Preference {
    pub fn new(query: &ComparisonQuery, choice: impl Into<Choice>) -> Self {
        Self { query_id: query.query_id.clone(), choice: choice.into() }
    }
}

/// Scalar cost used to settle deferred comparisons. Lower is better.
pub trait Heuristic {
    fn cost(&self, candidate: &Candidate) -> Result<f64>;

    /// Settles one comparison; the flag reports an exact tie.
    fn compare(&self, left: &Candidate, right: &Candidate) -> Result<(Verdict, bool)> {
        let (l, r) = (self.cost(left)?, self.cost(right)?);
        Ok((Verdict::from_values(l, r), l == r))
    }
}

impl<F> Heuristic for F
where
    F: Fn(&Candidate) -> Result<f64>,
{
    fn cost(&self, candidate: &Candidate) -> Result<f64> {
        self(candidate)
    }
}

/// What happened to one answered query.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub query: ComparisonQuery,
    pub verdict: Verdict,
    pub deferred: bool,
    /// The heuristic scored both sides equally and the tie went to the left.
    pub tie: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortStats {
    pub query_count: u64,
    pub heuristic_count: u64,
    pub tie_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SortStep {
    NeedsAnswer(ComparisonQuery),
    /// Items ordered best-first.
    Done(Vec<Candidate>, SortStats),
}

/// Query bookkeeping shared by the selectors: id allocation, the single
/// pending query, and answer validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Asker {
    prefix: String,
    phase: Phase,
    generation: u64,
    next_query: u64,
    pending: Option<ComparisonQuery>,
    /// Item indices of the pending comparison.
    pending_pair: Option<(usize, usize)>,
    stats: SortStats,
}

impl Asker {
    fn new(phase: Phase, generation: u64) -> Self {
        let prefix = match phase {
            Phase::GenerationSort => format!("g{generation}"),
            Phase::FinalSelection => "final".to_string(),
        };
        Self { prefix, phase, generation, next_query: 0, pending: None, pending_pair: None, stats: SortStats::default() }
    }

    fn issue(&mut self, items: &[Candidate], pair: (usize, usize)) -> ComparisonQuery {
        if let Some(q) = &self.pending {
            return q.clone();
        }
        let q = ComparisonQuery {
            query_id: QueryId(format!("{}-q{}", self.prefix, self.next_query)),
            left: items[pair.0].clone(),
            right: items[pair.1].clone(),
            phase: self.phase,
            generation: self.generation,
        };
        self.next_query += 1;
        self.pending = Some(q.clone());
        self.pending_pair = Some(pair);
        q
    }

    fn resolve(&mut self, answer: &Preference, heuristic: Option<&dyn Heuristic>) -> Result<Resolution> {
        let query = match &self.pending {
            Some(q) if q.query_id == answer.query_id => q.clone(),
            other => {
                return Err(Error::StaleQuery {
                    got: answer.query_id.0.clone(),
                    expected: other.as_ref().map(|q| q.query_id.0.clone()),
                })
            }
        };
        let (verdict, deferred, tie) = match answer.choice {
            Choice::FirstBetter => (Verdict::FirstBetter, false, false),
            Choice::SecondBetter => (Verdict::SecondBetter, false, false),
            Choice::DeferToHeuristic => {
                let h = heuristic.ok_or(Error::NoHeuristic)?;
                let (verdict, tie) = h.compare(&query.left, &query.right)?;
                (verdict, true, tie)
            }
        };
        self.pending = None;
        self.pending_pair = None;
        self.stats.query_count += 1;
        self.stats.heuristic_count += deferred as u64;
        self.stats.tie_count += tie as u64;
        Ok(Resolution { query, verdict, deferred, tie })
    }
}

fn check_unique(items: &[Candidate]) -> Result<()> {
    let mut ids: Vec<_> = items.iter().map(|c| c.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateCandidate(w[0].to_string()));
    }
    Ok(())
}

/// Either selector behind one interface, for callers that persist whichever
/// one is active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Selector {
    Sort(SortMachine),
    Tournament(Tournament),
}

impl Selector {
    pub fn poll(&mut self) -> SortStep {
        match self {
            Selector::Sort(m) => m.poll(),
            Selector::Tournament(t) => t.poll(),
        }
    }

    pub fn answer(&mut self, answer: &Preference, heuristic: Option<&dyn Heuristic>) -> Result<Resolution> {
        match self {
            Selector::Sort(m) => m.answer(answer, heuristic),
            Selector::Tournament(t) => t.answer(answer, heuristic),
        }
    }

    pub fn pending(&self) -> Option<&ComparisonQuery> {
        match self {
            Selector::Sort(m) => m.pending(),
            Selector::Tournament(t) => t.pending(),
        }
    }

    pub fn stats(&self) -> SortStats {
        match self {
            Selector::Sort(m) => m.stats(),
            Selector::Tournament(t) => t.stats(),
        }
    }

    pub fn phase(&self) -> Phase {
        match self {
            Selector::Sort(m) => m.phase(),
            Selector::Tournament(_) => Phase::FinalSelection,
        }
    }
}

/// Runs a selector to completion, answering each query with `oracle`.
/// Deferrals returned by the oracle go to `heuristic`. Every resolution is
/// passed to `observe` in order.
pub fn drive<O, V>(
    selector: &mut Selector,
    mut oracle: O,
    heuristic: Option<&dyn Heuristic>,
    mut observe: V,
) -> Result<(Vec<Candidate>, SortStats)>
where
    O: FnMut(&ComparisonQuery) -> Choice,
    V: FnMut(&Resolution),
{
    loop {
        match selector.poll() {
            SortStep::Done(order, stats) => return Ok((order, stats)),
            SortStep::NeedsAnswer(q) => {
                let pref = Preference::new(&q, oracle(&q));
                let res = selector.answer(&pref, heuristic)?;
                observe(&res);
            }
        }
    }
}

/// Pairs each ranked position with its recombination weight. Positions past
/// `μ = floor(λ/2)` are not parents and are dropped.
pub fn rank_to_weights(order: &[Candidate], lambda: usize) -> Result<Vec<(Candidate, f64)>> {
    if order.len() != lambda {
        return Err(Error::DimensionMismatch { expected: lambda, actual: order.len() });
    }
    let (weights, _) = recombination_weights(lambda);
    Ok(order.iter().cloned().zip(weights).collect())
}
