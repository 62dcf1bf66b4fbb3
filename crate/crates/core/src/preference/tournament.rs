use serde::{Deserialize, Serialize};

use super::{check_unique, Asker, ComparisonQuery, Heuristic, Phase, Preference, Resolution, SortStats, SortStep, Verdict};
use crate::engine::Candidate;
use crate::error::{Error, Result};

/// Linear max-find over `g` candidates: the current champion meets each
/// challenger in turn, so exactly `g − 1` queries are asked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tournament {
    items: Vec<Candidate>,
    champion: usize,
    next: usize,
    asker: Asker,
}

impl Tournament {
    pub fn begin(items: Vec<Candidate>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("final selection needs at least one candidate"));
        }
        check_unique(&items)?;
        let generation = items.iter().map(|c| c.generation).max().unwrap_or(0);
        Ok(Self { items, champion: 0, next: 1, asker: Asker::new(Phase::FinalSelection, generation) })
    }

    pub fn pending(&self) -> Option<&ComparisonQuery> {
        self.asker.pending.as_ref()
    }

    pub fn stats(&self) -> SortStats {
        self.asker.stats
    }

    pub fn is_done(&self) -> bool {
        self.next >= self.items.len()
    }

    /// On completion the winner comes first, followed by the remaining
    /// candidates in input order.
    pub fn poll(&mut self) -> SortStep {
        if self.next < self.items.len() {
            return SortStep::NeedsAnswer(self.asker.issue(&self.items, (self.champion, self.next)));
        }
        let mut order = vec![self.items[self.champion].clone()];
        order.extend(self.items.iter().enumerate().filter(|&(i, _)| i != self.champion).map(|(_, c)| c.clone()));
        SortStep::Done(order, self.asker.stats)
    }

    pub fn answer(&mut self, answer: &Preference, heuristic: Option<&dyn Heuristic>) -> Result<Resolution> {
        let res = self.asker.resolve(answer, heuristic)?;
        if res.verdict == Verdict::SecondBetter {
            self.champion = self.next;
        }
        self.next += 1;
        Ok(res)
    }

    pub fn winner(&self) -> Option<&Candidate> {
        self.is_done().then(|| &self.items[self.champion])
    }
}
