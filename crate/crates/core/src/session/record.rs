use serde::{Deserialize, Serialize};

use crate::engine::{default_lambda, Candidate, EngineConfig, EngineState};
use crate::error::{Error, Result};
use crate::preference::{ComparisonQuery, Heuristic, Phase, Preference, Resolution, Selector, SortMachine, SortStep, Tournament};
use crate::space::{SearchSpace, SpaceConfig};

pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionPhase {
    Sorting,
    FinalSelection,
    Done,
}

/// What the operator should see next.
#[derive(Debug, Clone, PartialEq)]
pub enum Pending {
    Query(ComparisonQuery),
    Done(Candidate),
}

/// Persisted state of one interactive optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub version: u32,
    pub session_id: String,
    pub config: SpaceConfig,
    pub seed: u64,
    pub phase: SessionPhase,
    pub engine: EngineState,
    pub selector: Selector,
    pub generation_bests: Vec<Candidate>,
    pub queries_answered: u64,
    pub heuristic_answered: u64,
    pub winner: Option<Candidate>,
    /// Candidate id → content hash of its rendered media; `None` marks a
    /// failed render.
    #[serde(default)]
    pub media: std::collections::BTreeMap<String, Option<String>>,
}

impl SessionRecord {
    /// Starts at `encode(init)` with σ = `sigma0` and samples generation 0.
    pub fn create(session_id: String, config: SpaceConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let space = config.space();
        let mean0 = space.encode(&space.initial_values())?;
        let lambda = config.lambda.unwrap_or_else(|| default_lambda(space.dimension()));
        let mut engine = EngineState::new(&EngineConfig::new(mean0, config.sigma0, seed).with_lambda(lambda))?;
        let selector = Self::next_sort(&mut engine)?;
        let mut rec = Self {
            version: RECORD_VERSION,
            session_id,
            config,
            seed,
            phase: SessionPhase::Sorting,
            engine,
            selector,
            generation_bests: Vec::new(),
            queries_answered: 0,
            heuristic_answered: 0,
            winner: None,
            media: Default::default(),
        };
        rec.settle()?;
        Ok(rec)
    }

    fn next_sort(engine: &mut EngineState) -> Result<Selector> {
        let generation = engine.sample_generation()?;
        Ok(Selector::Sort(SortMachine::begin(generation, Phase::GenerationSort, engine.generation())?))
    }

    pub fn space(&self) -> &SearchSpace {
        self.config.space()
    }

    pub fn lambda(&self) -> usize {
        self.engine.lambda()
    }

    /// Completed generations.
    pub fn generation(&self) -> u64 {
        self.engine.generation()
    }

    pub fn heuristic_fraction(&self) -> f64 {
        if self.queries_answered == 0 {
            0.0
        } else {
            self.heuristic_answered as f64 / self.queries_answered as f64
        }
    }

    /// Candidates of the generation currently being sorted.
    pub fn current_generation(&self) -> &[Candidate] {
        self.engine.pending()
    }

    pub fn pending(&self) -> Pending {
        match (&self.winner, self.selector.pending()) {
            (Some(w), _) => Pending::Done(w.clone()),
            (None, Some(q)) => Pending::Query(q.clone()),
            (None, None) => unreachable!("settled session always has a pending query or a winner"),
        }
    }

    /// Applies one answer to the pending query and advances: a finished
    /// generation updates the engine and samples the next one; a finished
    /// final selection records the winner.
    pub fn answer(&mut self, answer: &Preference, heuristic: Option<&dyn Heuristic>) -> Result<Resolution> {
        if self.phase == SessionPhase::Done {
            return Err(Error::InvalidPhase("session is done".into()));
        }
        let res = self.selector.answer(answer, heuristic)?;
        self.queries_answered += 1;
        self.heuristic_answered += res.deferred as u64;
        self.settle()?;
        Ok(res)
    }

    /// Switches to final selection over the winners of all completed
    /// generations. An unfinished generation is abandoned.
    pub fn terminate(&mut self) -> Result<()> {
        match self.phase {
            SessionPhase::Sorting => {}
            SessionPhase::FinalSelection => return Err(Error::InvalidPhase("final selection already running".into())),
            SessionPhase::Done => return Err(Error::InvalidPhase("session is done".into())),
        }
        if self.generation_bests.is_empty() {
            return Err(Error::InvalidPhase("no generation has been completed yet".into()));
        }
        self.selector = Selector::Tournament(Tournament::begin(self.generation_bests.clone())?);
        self.phase = SessionPhase::FinalSelection;
        self.settle()
    }

    /// Runs comparison-free transitions until a query is pending or the
    /// session is done.
    fn settle(&mut self) -> Result<()> {
        loop {
            match self.selector.poll() {
                SortStep::NeedsAnswer(_) => return Ok(()),
                SortStep::Done(order, _) => match self.phase {
                    SessionPhase::Sorting => {
                        self.engine.update(&order.iter().map(|c| c.id).collect::<Vec<_>>())?;
                        self.generation_bests.push(order[0].clone());
                        self.selector = Self::next_sort(&mut self.engine)?;
                    }
                    SessionPhase::FinalSelection => {
                        self.winner = Some(order[0].clone());
                        self.phase = SessionPhase::Done;
                        return Ok(());
                    }
                    SessionPhase::Done => return Ok(()),
                },
            }
        }
    }
}
