use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{Choice, Phase, QueryId, Resolution, Verdict};
use crate::engine::CandidateId;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerSource {
    User,
    Heuristic,
    Simulated,
}

/// One line of the append-only preference log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub query_id: QueryId,
    pub generation: u64,
    pub phase: Phase,
    pub left_id: CandidateId,
    pub right_id: CandidateId,
    /// The answer as given; `defer-to-heuristic` for deferrals.
    pub choice: Choice,
    pub source: AnswerSource,
    /// Unix time in milliseconds.
    pub timestamp: u64,
    /// Which side actually won after any deferral was settled.
    pub outcome: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_x: Option<Vec<f64>>,
}

impl PreferenceRecord {
    /// `direct_source` labels answers that were not deferred.
    pub fn from_resolution(res: &Resolution, direct_source: AnswerSource, timestamp: u64) -> Self {
        let q = &res.query;
        Self {
            query_id: q.query_id.clone(),
            generation: q.generation,
            phase: q.phase,
            left_id: q.left.id,
            right_id: q.right.id,
            choice: if res.deferred { Choice::DeferToHeuristic } else { res.verdict.into() },
            source: if res.deferred { AnswerSource::Heuristic } else { direct_source },
            timestamp,
            outcome: res.verdict,
            left_x: Some(q.left.internal.clone()),
            right_x: Some(q.right.internal.clone()),
        }
    }
}

pub fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// JSON-lines writer. Each `append` is flushed before returning.
#[derive(Debug)]
pub struct PreferenceLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl PreferenceLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, out: BufWriter::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &PreferenceRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<PreferenceRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
