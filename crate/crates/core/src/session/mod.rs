//! Interactive sessions: one optimization per operator, persisted after every
//! answer so a restarted server continues where it stopped.

mod hooks;
mod record;
mod store;

pub use hooks::{CommandHook, ParamTable, Renderer, Scorer};
pub use record::{Pending, SessionPhase, SessionRecord, RECORD_VERSION};
pub use store::{
    param_table, AnswerAck, CandidateView, Hooks, QueryResponse, QueryView, SessionStatus, SessionStore, WireChoice,
};
