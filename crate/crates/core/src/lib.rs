//! SortCMA: CMA-ES driven by pairwise comparisons instead of objective values.
//!
//! The engine samples a generation, a [`preference::Selector`] turns answers
//! to "which of these two is better?" into a ranking, and the ranking drives
//! the covariance update. Everything is resumable and serializable so the same
//! machinery backs simulated benchmarks and interactive sessions.

pub mod engine;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod preference;
pub mod session;
pub mod space;

pub use engine::{Candidate, CandidateId, EngineConfig, EngineState};
pub use error::{Error, Result};
pub use objectives::{Function, Objective};
pub use preference::{Choice, ComparisonQuery, Phase, Preference, PreferenceRecord, Verdict};
pub use space::{ParamSpec, SearchSpace, SpaceConfig};
