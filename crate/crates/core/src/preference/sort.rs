use serde::{Deserialize, Serialize};

use super::{check_unique, Asker, ComparisonQuery, Heuristic, Phase, Preference, Resolution, SortStats, SortStep, Verdict};
use crate::engine::Candidate;
use crate::error::{Error, Result};

/// Timsort's minimum run length: `n` itself below 64, otherwise a value in
/// `[32, 64]` chosen so `n / minrun` is close to a power of two.
pub fn timsort_min_run(mut n: usize) -> usize {
    let mut r = 0;
    while n >= 64 {
        r |= n & 1;
        n >>= 1;
    }
    n + r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "kebab-case")]
enum Progress {
    /// Binary-inserting `order[i]` into the sorted prefix `order[run_start..i]`,
    /// currently searching `[lo, hi)`.
    Insert { run_start: usize, run_end: usize, i: usize, lo: usize, hi: usize },
    /// Merging sorted runs `order[start..mid]` and `order[mid..end]`.
    Merge { width: usize, start: usize, mid: usize, end: usize, i: usize, j: usize, out: Vec<usize> },
    Done,
}

/// Stable comparison sort driven one answer at a time.
///
/// Runs of `min_run` items are built with binary insertion, then merged
/// bottom-up, Timsort style. With the default run length any input shorter
/// than 64 is a single insertion-sorted run. On a tie (left preferred) the
/// earlier item stays first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortMachine {
    items: Vec<Candidate>,
    /// Working permutation of `items`, best-first once done.
    order: Vec<usize>,
    min_run: usize,
    progress: Progress,
    asker: Asker,
}

impl SortMachine {
    pub fn begin(items: Vec<Candidate>, phase: Phase, generation: u64) -> Result<Self> {
        let run = timsort_min_run(items.len());
        Self::with_min_run(items, phase, generation, run)
    }

    pub fn with_min_run(items: Vec<Candidate>, phase: Phase, generation: u64, min_run: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("nothing to sort"));
        }
        check_unique(&items)?;
        let n = items.len();
        let min_run = min_run.clamp(1, n);
        Ok(Self {
            order: (0..n).collect(),
            progress: Progress::Insert { run_start: 0, run_end: min_run, i: 1, lo: 0, hi: 1 },
            items,
            min_run,
            asker: Asker::new(phase, generation),
        })
    }

    pub fn items(&self) -> &[Candidate] {
        &self.items
    }

    pub fn phase(&self) -> Phase {
        self.asker.phase
    }

    pub fn pending(&self) -> Option<&ComparisonQuery> {
        self.asker.pending.as_ref()
    }

    pub fn stats(&self) -> SortStats {
        self.asker.stats
    }

    pub fn is_done(&self) -> bool {
        matches!(self.progress, Progress::Done)
    }

    /// Returns the pending query (issuing it if needed) or the finished order.
    /// Idempotent until the pending query is answered.
    pub fn poll(&mut self) -> SortStep {
        match self.settle() {
            Some(pair) => SortStep::NeedsAnswer(self.asker.issue(&self.items, pair)),
            None => SortStep::Done(self.order.iter().map(|&i| self.items[i].clone()).collect(), self.asker.stats),
        }
    }

    pub fn answer(&mut self, answer: &Preference, heuristic: Option<&dyn Heuristic>) -> Result<Resolution> {
        let res = self.asker.resolve(answer, heuristic)?;
        self.apply(res.verdict);
        Ok(res)
    }

    /// Single-call driver: supply the answer to the pending query (or `None`
    /// when nothing is pending) and get the next query or the result.
    pub fn step(&mut self, answer: Option<&Preference>, heuristic: Option<&dyn Heuristic>) -> Result<SortStep> {
        match (answer, self.asker.pending.is_some()) {
            (Some(a), _) => {
                self.answer(a, heuristic)?;
            }
            (None, true) => return Err(Error::AnswerMissing),
            (None, false) => {}
        }
        Ok(self.poll())
    }

    /// Advances through comparison-free moves until the next comparison
    /// `(left item, right item)` is required. `None` once sorted.
    fn settle(&mut self) -> Option<(usize, usize)> {
        let n = self.items.len();
        loop {
            match &mut self.progress {
                Progress::Insert { run_start, run_end, i, lo, hi } => {
                    if *i >= *run_end {
                        let next = *run_end;
                        self.progress = if next < n {
                            let end = (next + self.min_run).min(n);
                            Progress::Insert { run_start: next, run_end: end, i: next + 1, lo: next, hi: next + 1 }
                        } else {
                            merge_pass(self.min_run, n)
                        };
                        continue;
                    }
                    if lo < hi {
                        let mid = (*lo + *hi) / 2;
                        return Some((self.order[mid], self.order[*i]));
                    }
                    self.order[*lo..=*i].rotate_right(1);
                    *i += 1;
                    *lo = *run_start;
                    *hi = *i;
                }
                Progress::Merge { width, start, mid, end, i, j, out } => {
                    if *i < *mid && *j < *end {
                        return Some((self.order[*i], self.order[*j]));
                    }
                    out.extend_from_slice(&self.order[*i..*mid]);
                    out.extend_from_slice(&self.order[*j..*end]);
                    self.order[*start..*end].copy_from_slice(out);
                    out.clear();
                    let w = *width;
                    let next = *end;
                    self.progress = if next + w < n {
                        let m = next + w;
                        Progress::Merge { width: w, start: next, mid: m, end: (m + w).min(n), i: next, j: m, out: Vec::new() }
                    } else {
                        merge_pass(w * 2, n)
                    };
                }
                Progress::Done => return None,
            }
        }
    }

    fn apply(&mut self, verdict: Verdict) {
        match &mut self.progress {
            Progress::Insert { lo, hi, .. } => {
                let mid = (*lo + *hi) / 2;
                match verdict {
                    // the item being inserted beats order[mid]
                    Verdict::SecondBetter => *hi = mid,
                    Verdict::FirstBetter => *lo = mid + 1,
                }
            }
            Progress::Merge { i, j, out, .. } => match verdict {
                Verdict::SecondBetter => {
                    out.push(self.order[*j]);
                    *j += 1;
                }
                Verdict::FirstBetter => {
                    out.push(self.order[*i]);
                    *i += 1;
                }
            },
            Progress::Done => unreachable!("answer accepted with no comparison outstanding"),
        }
    }
}

/// First merge of a bottom-up pass over runs of length `width`.
fn merge_pass(width: usize, n: usize) -> Progress {
    if width >= n {
        return Progress::Done;
    }
    Progress::Merge { width, start: 0, mid: width, end: (2 * width).min(n), i: 0, j: width, out: Vec::new() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::CandidateId;
    use crate::preference::tests::items;
    use crate::preference::Choice;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact(q: &ComparisonQuery) -> Choice {
        Verdict::from_values(q.left.internal[0], q.right.internal[0]).into()
    }

    fn run(machine: &mut SortMachine, mut oracle: impl FnMut(&ComparisonQuery) -> Choice) -> (Vec<Candidate>, SortStats) {
        let mut answer = None;
        loop {
            match machine.step(answer.as_ref(), None).unwrap() {
                SortStep::Done(order, stats) => return (order, stats),
                SortStep::NeedsAnswer(q) => answer = Some(Preference::new(&q, oracle(&q))),
            }
        }
    }

    fn values(order: &[Candidate]) -> Vec<f64> {
        order.iter().map(|c| c.internal[0]).collect()
    }

    fn bound(n: usize) -> u64 {
        let n = n as u64;
        n * (n as f64).log2().ceil() as u64 + n
    }

    #[test]
    fn min_run_values() {
        assert_eq!(timsort_min_run(10), 10);
        assert_eq!(timsort_min_run(63), 63);
        assert_eq!(timsort_min_run(64), 32);
        assert_eq!(timsort_min_run(65), 33);
        assert_eq!(timsort_min_run(128), 32);
    }

    #[test]
    fn singleton_needs_no_queries() {
        let mut m = SortMachine::begin(items(&[5.0]), Phase::GenerationSort, 0).unwrap();
        assert!(matches!(m.poll(), SortStep::Done(ref o, s) if o.len() == 1 && s.query_count == 0));
    }

    #[test]
    fn pair_needs_one_query() {
        let mut m = SortMachine::begin(items(&[2.0, 1.0]), Phase::GenerationSort, 0).unwrap();
        let (order, stats) = run(&mut m, exact);
        assert_eq!(values(&order), vec![1.0, 2.0]);
        assert_eq!(stats.query_count, 1);
    }

    // f = [3, 1, 2]: insert 1 vs 3 (1 wins), then 2 vs 3 at mid=1 (2 wins),
    // then 2 vs 1 (1 wins) -> [1, 2, 3] in three comparisons.
    #[test]
    fn three_items_by_hand() {
        let mut m = SortMachine::begin(items(&[3.0, 1.0, 2.0]), Phase::GenerationSort, 0).unwrap();
        let mut asked = Vec::new();
        let (order, stats) = run(&mut m, |q| {
            asked.push((q.left.internal[0], q.right.internal[0]));
            exact(q)
        });
        assert_eq!(values(&order), vec![1.0, 2.0, 3.0]);
        assert_eq!(asked, vec![(3.0, 1.0), (3.0, 2.0), (1.0, 2.0)]);
        assert_eq!(stats.query_count, 3);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(SortMachine::begin(vec![], Phase::GenerationSort, 0), Err(Error::Empty(_))));
        let mut dup = items(&[1.0, 2.0]);
        dup[1].id = CandidateId(0);
        assert!(matches!(SortMachine::begin(dup, Phase::GenerationSort, 0), Err(Error::DuplicateCandidate(_))));
    }

    #[test]
    fn answer_protocol_errors() {
        let mut m = SortMachine::begin(items(&[1.0, 2.0, 3.0]), Phase::GenerationSort, 4).unwrap();
        let q = match m.step(None, None).unwrap() {
            SortStep::NeedsAnswer(q) => q,
            _ => unreachable!(),
        };
        assert_eq!(q.query_id.0, "g4-q0");
        assert!(matches!(m.step(None, None), Err(Error::AnswerMissing)));
        let stale = Preference { query_id: super::super::QueryId("g4-q9".into()), choice: Choice::FirstBetter };
        assert!(matches!(m.step(Some(&stale), None), Err(Error::StaleQuery { .. })));
        let defer = Preference::new(&q, Choice::DeferToHeuristic);
        assert!(matches!(m.step(Some(&defer), None), Err(Error::NoHeuristic)));
        // nothing above consumed the query
        assert_eq!(m.pending().unwrap().query_id, q.query_id);
        assert_eq!(m.stats().query_count, 0);
        m.step(Some(&Preference::new(&q, Choice::FirstBetter)), None).unwrap();
        // replaying the same answer is stale now
        assert!(matches!(m.answer(&Preference::new(&q, Choice::FirstBetter), None), Err(Error::StaleQuery { .. })));
    }

    #[test]
    fn poll_is_idempotent() {
        let mut m = SortMachine::begin(items(&[3.0, 2.0, 1.0]), Phase::GenerationSort, 0).unwrap();
        let a = m.poll();
        let b = m.poll();
        assert_eq!(a, b);
    }

    #[test]
    fn deferral_to_exact_heuristic_matches_exact_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = |c: &Candidate| -> Result<f64> { Ok(c.internal[0]) };
        for n in 2..20 {
            let vals: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut a = SortMachine::begin(items(&vals), Phase::GenerationSort, 0).unwrap();
            let (exact_order, _) = run(&mut a, exact);
            let mut b = SortMachine::begin(items(&vals), Phase::GenerationSort, 0).unwrap();
            let mut answer = None;
            let (order, stats) = loop {
                match b.step(answer.as_ref(), Some(&h)).unwrap() {
                    SortStep::Done(o, s) => break (o, s),
                    SortStep::NeedsAnswer(q) => answer = Some(Preference::new(&q, Choice::DeferToHeuristic)),
                }
            };
            assert_eq!(order, exact_order);
            assert_eq!(stats.heuristic_count, stats.query_count);
        }
    }

    #[test]
    fn heuristic_ties_keep_sampling_order() {
        let vals = [2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 0.5, 2.0];
        for run_len in [1, 2, 3, 8] {
            let mut m = SortMachine::with_min_run(items(&vals), Phase::GenerationSort, 0, run_len).unwrap();
            let h = |c: &Candidate| -> Result<f64> { Ok(c.internal[0]) };
            let mut answer = None;
            let (order, stats) = loop {
                match m.step(answer.as_ref(), Some(&h)).unwrap() {
                    SortStep::Done(o, s) => break (o, s),
                    SortStep::NeedsAnswer(q) => answer = Some(Preference::new(&q, Choice::DeferToHeuristic)),
                }
            };
            let ids: Vec<u64> = order.iter().map(|c| c.id.0).collect();
            assert_eq!(ids, vec![6, 1, 3, 5, 0, 2, 4, 7], "run length {run_len}");
            assert!(stats.tie_count > 0);
        }
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, usize)> {
        (2usize..80).prop_flat_map(|n| {
            (
                prop::collection::hash_set(-1_000_000i64..1_000_000, n)
                    .prop_map(|s| s.into_iter().map(|v| v as f64 / 7.0).collect::<Vec<_>>()),
                1usize..=n,
            )
        })
    }

    proptest! {
        #[test]
        fn exact_oracle_sorts((vals, run_len) in arb_case()) {
            let mut m = SortMachine::with_min_run(items(&vals), Phase::GenerationSort, 0, run_len).unwrap();
            let (order, stats) = run(&mut m, exact);
            let mut expected = vals.clone();
            expected.sort_by(f64::total_cmp);
            prop_assert_eq!(values(&order), expected);
            prop_assert!(stats.query_count <= bound(vals.len()));
        }

        #[test]
        fn arbitrary_answers_still_permute(n in 1usize..40, seed in any::<u64>(), run_len in 1usize..40) {
            let vals: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = SortMachine::with_min_run(items(&vals), Phase::GenerationSort, 0, run_len).unwrap();
            let (order, stats) = run(&mut m, |_| if rng.random() { Choice::FirstBetter } else { Choice::SecondBetter });
            let mut ids: Vec<u64> = order.iter().map(|c| c.id.0).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..n as u64).collect::<Vec<_>>());
            prop_assert!(stats.query_count <= bound(n));
        }

        #[test]
        fn resume_mid_sort((vals, run_len) in arb_case(), cut in 0usize..200) {
            let mut straight = SortMachine::with_min_run(items(&vals), Phase::GenerationSort, 0, run_len).unwrap();
            let mut asked_straight = Vec::new();
            let (order_straight, _) = run(&mut straight, |q| { asked_straight.push(q.query_id.clone()); exact(q) });

            let mut m = SortMachine::with_min_run(items(&vals), Phase::GenerationSort, 0, run_len).unwrap();
            let mut asked = Vec::new();
            let mut answered = 0;
            let order = loop {
                if answered == cut {
                    let text = serde_json::to_string(&m).unwrap();
                    m = serde_json::from_str(&text).unwrap();
                }
                match m.poll() {
                    SortStep::Done(o, _) => break o,
                    SortStep::NeedsAnswer(q) => {
                        asked.push(q.query_id.clone());
                        m.answer(&Preference::new(&q, exact(&q)), None).unwrap();
                        answered += 1;
                    }
                }
            };
            prop_assert_eq!(asked, asked_straight);
            prop_assert_eq!(order, order_straight);
        }
    }
}
