use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::hooks::{ParamTable, Renderer, Scorer};
use super::record::{Pending, SessionPhase, SessionRecord};
use crate::engine::Candidate;
use crate::error::{Error, Result};
use crate::preference::{now_millis, AnswerSource, Choice, Heuristic, Phase, Preference, PreferenceLog, PreferenceRecord, QueryId};
use crate::space::{SearchSpace, SpaceConfig};

/// Operator's answer as sent over the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireChoice {
    Left,
    Right,
    Heuristic,
}

impl From<WireChoice> for Choice {
    fn from(c: WireChoice) -> Self {
        match c {
            WireChoice::Left => Choice::FirstBetter,
            WireChoice::Right => Choice::SecondBetter,
            WireChoice::Heuristic => Choice::DeferToHeuristic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub id: String,
    pub params: ParamTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub query_id: String,
    pub phase: Phase,
    pub generation: u64,
    pub left: CandidateView,
    pub right: CandidateView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryResponse {
    Query(QueryView),
    Done { phase: SessionPhase, winner: CandidateView },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub phase: SessionPhase,
    pub generation: u64,
    pub lambda: usize,
    pub queries_answered: u64,
    pub heuristic_fraction: f64,
    pub heuristic_available: bool,
    pub can_terminate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<CandidateView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerAck {
    pub accepted: bool,
    pub phase: SessionPhase,
    pub generation: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_query_id: Option<String>,
}

/// Hooks shared by every session of a store.
#[derive(Clone, Default)]
pub struct Hooks {
    pub renderer: Option<Arc<dyn Renderer>>,
    pub scorer: Option<Arc<dyn Scorer>>,
}

/// Decodes candidates and asks the scorer; higher score means lower cost.
struct ScoredHeuristic<'a> {
    space: &'a SearchSpace,
    scorer: &'a dyn Scorer,
}

impl Heuristic for ScoredHeuristic<'_> {
    fn cost(&self, candidate: &Candidate) -> Result<f64> {
        Ok(-self.scorer.score(&param_table(self.space, candidate)?)?)
    }
}

pub fn param_table(space: &SearchSpace, candidate: &Candidate) -> Result<ParamTable> {
    let values = space.decode(&candidate.internal)?;
    Ok(space.names().zip(values).map(|(n, v)| (n.to_string(), Value::from(v))).collect())
}

/// Directory-backed collection of sessions.
///
/// Layout: `sessions/<id>.json` (rewritten atomically after every change),
/// `logs/<id>.jsonl` (preference log), `media/<sha256>` (rendered media).
/// Mutations of one session are serialized by its lock; a change becomes
/// visible only after it is on disk.
pub struct SessionStore {
    dir: PathBuf,
    default_config: Option<SpaceConfig>,
    hooks: Hooks,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionRecord>>>>,
}

impl SessionStore {
    /// Opens (or initializes) `dir` and loads every persisted session.
    pub fn open(dir: impl Into<PathBuf>, default_config: Option<SpaceConfig>, hooks: Hooks) -> Result<Self> {
        let dir = dir.into();
        for sub in ["sessions", "logs", "media"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(dir.join("sessions"))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let rec: SessionRecord = serde_json::from_str(&fs::read_to_string(&path)?)
                .map_err(|e| Error::Snapshot(format!("{}: {e}", path.display())))?;
            sessions.insert(rec.session_id.clone(), Arc::new(Mutex::new(rec)));
        }
        log::info!("loaded {} session(s) from {}", sessions.len(), dir.display());
        Ok(Self { dir, default_config, hooks, sessions: RwLock::new(sessions) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn heuristic_available(&self) -> bool {
        self.hooks.scorer.is_some()
    }

    pub fn default_config(&self) -> Option<&SpaceConfig> {
        self.default_config.as_ref()
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.sessions.read().expect("session map poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Creates a session with a fresh id; `None` uses the store's default config.
    pub fn create(&self, config: Option<SpaceConfig>) -> Result<String> {
        self.create_with_id(uuid::Uuid::new_v4().simple().to_string(), config)
    }

    pub fn create_with_id(&self, id: String, config: Option<SpaceConfig>) -> Result<String> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::InvalidConfig(format!("invalid session id `{id}`")));
        }
        let config = config
            .or_else(|| self.default_config.clone())
            .ok_or_else(|| Error::InvalidConfig("no session config supplied and no default configured".into()))?;
        let seed = config.seed.unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0);
        let mut map = self.sessions.write().expect("session map poisoned");
        if map.contains_key(&id) || self.record_path(&id).exists() {
            return Err(Error::DuplicateSession(id));
        }
        let rec = SessionRecord::create(id.clone(), config, seed)?;
        self.persist(&rec)?;
        map.insert(id.clone(), Arc::new(Mutex::new(rec)));
        log::info!("created session {id}");
        Ok(id)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionRecord>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn record(&self, id: &str) -> Result<SessionRecord> {
        Ok(self.session(id)?.lock().expect("session poisoned").clone())
    }

    pub fn status(&self, id: &str) -> Result<SessionStatus> {
        let s = self.session(id)?;
        let rec = s.lock().expect("session poisoned");
        let winner = rec.winner.as_ref().map(|w| self.view(&rec, w)).transpose()?;
        Ok(SessionStatus {
            session_id: rec.session_id.clone(),
            phase: rec.phase,
            generation: rec.generation(),
            lambda: rec.lambda(),
            queries_answered: rec.queries_answered,
            heuristic_fraction: rec.heuristic_fraction(),
            heuristic_available: self.heuristic_available(),
            can_terminate: rec.phase == SessionPhase::Sorting && !rec.generation_bests.is_empty(),
            winner,
        })
    }

    /// The pending query with decoded parameters and media links, or the
    /// winner once the session is done. Renders media on first display.
    pub fn query(&self, id: &str) -> Result<QueryResponse> {
        let s = self.session(id)?;
        let mut rec = s.lock().expect("session poisoned");
        match rec.pending() {
            Pending::Done(w) => Ok(QueryResponse::Done { phase: rec.phase, winner: self.view(&rec, &w)? }),
            Pending::Query(q) => {
                if self.hooks.renderer.is_some() {
                    let mut next = rec.clone();
                    let changed = self.ensure_media(&mut next, &q.left)? | self.ensure_media(&mut next, &q.right)?;
                    if changed {
                        self.persist(&next)?;
                        *rec = next;
                    }
                }
                Ok(QueryResponse::Query(QueryView {
                    query_id: q.query_id.0.clone(),
                    phase: q.phase,
                    generation: q.generation,
                    left: self.view(&rec, &q.left)?,
                    right: self.view(&rec, &q.right)?,
                }))
            }
        }
    }

    /// Applies an answer. The new state and the log line are written before
    /// this returns; on any error the session is unchanged.
    pub fn answer(&self, id: &str, query_id: &str, choice: WireChoice) -> Result<AnswerAck> {
        let s = self.session(id)?;
        let mut rec = s.lock().expect("session poisoned");
        if rec.phase == SessionPhase::Done {
            return Err(Error::InvalidPhase("session is done".into()));
        }
        if choice == WireChoice::Heuristic && self.hooks.scorer.is_none() {
            return Err(Error::NoHeuristic);
        }
        let mut next = rec.clone();
        let pref = Preference { query_id: QueryId(query_id.to_string()), choice: choice.into() };
        let res = {
            let heuristic = self.hooks.scorer.as_deref().map(|scorer| ScoredHeuristic { space: rec.space(), scorer });
            next.answer(&pref, heuristic.as_ref().map(|h| h as &dyn Heuristic))?
        };
        let mut log = PreferenceLog::open(self.log_path(id))?;
        log.append(&PreferenceRecord::from_resolution(&res, AnswerSource::User, now_millis()))?;
        self.persist(&next)?;
        *rec = next;
        let next_query_id = match rec.pending() {
            Pending::Query(q) => Some(q.query_id.0),
            Pending::Done(_) => None,
        };
        Ok(AnswerAck { accepted: true, phase: rec.phase, generation: rec.generation(), next_query_id })
    }

    pub fn terminate(&self, id: &str) -> Result<SessionStatus> {
        {
            let s = self.session(id)?;
            let mut rec = s.lock().expect("session poisoned");
            let mut next = rec.clone();
            next.terminate()?;
            self.persist(&next)?;
            *rec = next;
        }
        self.status(id)
    }

    /// Path of a cached media file, if `hash` names one.
    pub fn media_path(&self, hash: &str) -> Option<PathBuf> {
        if hash.len() != 64 || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
            return None;
        }
        let p = self.dir.join("media").join(hash);
        p.is_file().then_some(p)
    }

    pub fn media_type(&self) -> &str {
        self.hooks.renderer.as_deref().map(|r| r.media_type()).unwrap_or("application/octet-stream")
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join("logs").join(format!("{id}.jsonl"))
    }

    fn record_path(&self, id: &str) -> PathBuf {
        self.dir.join("sessions").join(format!("{id}.json"))
    }

    fn view(&self, rec: &SessionRecord, c: &Candidate) -> Result<CandidateView> {
        let media_url = rec.media.get(&c.id.to_string()).cloned().flatten().map(|h| format!("/media/{h}"));
        Ok(CandidateView { id: c.id.to_string(), params: param_table(rec.space(), c)?, media_url })
    }

    /// Renders `c` unless already attempted. Returns whether `rec` changed.
    fn ensure_media(&self, rec: &mut SessionRecord, c: &Candidate) -> Result<bool> {
        let Some(renderer) = self.hooks.renderer.as_deref() else { return Ok(false) };
        let key = c.id.to_string();
        if rec.media.contains_key(&key) {
            return Ok(false);
        }
        let hash = match renderer.render(&param_table(rec.space(), c)?).and_then(|p| self.cache_media(&p)) {
            Ok(h) => Some(h),
            Err(e) => {
                log::warn!("render failed for {key} in session {}: {e}", rec.session_id);
                None
            }
        };
        rec.media.insert(key, hash);
        Ok(true)
    }

    fn cache_media(&self, path: &Path) -> Result<String> {
        let bytes = fs::read(path)?;
        let hash = hex::encode(Sha256::digest(&bytes));
        let dest = self.dir.join("media").join(&hash);
        if !dest.exists() {
            write_atomic(&dest, &bytes)?;
        }
        Ok(hash)
    }

    fn persist(&self, rec: &SessionRecord) -> Result<()> {
        write_atomic(&self.record_path(&rec.session_id), &serde_json::to_vec(rec)?)
    }
}

/// Write to a sibling temp file, fsync, then rename over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
