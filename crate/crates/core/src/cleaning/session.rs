use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CleaningError, ReviewDecision};

/// Review progress over a fixed sample. Derived state: it can always be
/// rebuilt by replaying the decision log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReviewSession {
    pub corpus_digest: String,
    pub sample: Vec<String>,
    /// Index into `sample` of the first undecided item; `sample.len()` when done.
    pub cursor: usize,
    pub decisions: BTreeMap<String, ReviewDecision>,
    pub seed: u64,
    pub ratio: f64,
    #[serde(skip)]
    members: BTreeSet<String>,
}

impl ReviewSession {
    pub fn new(corpus_digest: String, sample: Vec<String>, seed: u64, ratio: f64) -> Self {
        let members = sample.iter().cloned().collect();
        Self {
            corpus_digest,
            sample,
            cursor: 0,
            decisions: BTreeMap::new(),
            seed,
            ratio,
            members,
        }
    }

    pub fn contains(&self, record_id: &str) -> bool {
        self.members.contains(record_id)
    }

    pub fn is_complete(&self) -> bool {
        self.cursor >= self.sample.len()
    }

    pub fn next_undecided(&self) -> Option<&str> {
        self.sample.get(self.cursor).map(String::as_str)
    }

    pub fn validate(&self, decision: &ReviewDecision) -> Result<(), CleaningError> {
        decision.check()?;
        if !self.contains(&decision.record_id) {
            return Err(CleaningError::ForeignRecord(decision.record_id.clone()));
        }
        Ok(())
    }

    /// Store a decision in memory (last write wins) and move the cursor to
    /// the next undecided item.
    pub fn record_decision(&mut self, decision: ReviewDecision) -> Result<(), CleaningError> {
        self.validate(&decision)?;
        self.decisions.insert(decision.record_id.clone(), decision);
        while self.cursor < self.sample.len() && self.decisions.contains_key(&self.sample[self.cursor]) {
            self.cursor += 1;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LogLine {
    Open {
        corpus_digest: String,
        seed: u64,
        ratio: f64,
        sample: Vec<String>,
    },
    Decision(ReviewDecision),
}

/// Append-only line-delimited decision log. The first line fixes the
/// sample; every following line is one decision, synced to disk before the
/// append returns.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
    file: File,
}

fn write_line(file: &mut File, line: &LogLine) -> Result<(), CleaningError> {
    let mut buf = serde_json::to_vec(line).map_err(std::io::Error::other)?;
    buf.push(b'\n');
    file.write_all(&buf)?;
    file.sync_data()?;
    Ok(())
}

impl DecisionLog {
    /// Start a new log for `session`. Refuses to overwrite an existing file.
    pub fn create(path: impl AsRef<Path>, session: &ReviewSession) -> Result<Self, CleaningError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().write(true).create_new(true).open(&path)?;
        write_line(
            &mut file,
            &LogLine::Open {
                corpus_digest: session.corpus_digest.clone(),
                seed: session.seed,
                ratio: session.ratio,
                sample: session.sample.clone(),
            },
        )?;
        for d in session.decisions.values() {
            write_line(&mut file, &LogLine::Decision(d.clone()))?;
        }
        Ok(Self { path, file })
    }

    /// Reopen an existing log, returning the replayed session.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, ReviewSession), CleaningError> {
        let path = path.as_ref().to_path_buf();
        let (session, valid_len) = replay(BufReader::new(File::open(&path)?))?;
        let file = OpenOptions::new().read(true).write(true).open(&path)?;
        // drop a torn final line left by a crash mid-append
        if file.metadata()?.len() != valid_len {
            log::warn!("{}: discarding incomplete trailing line", path.display());
            file.set_len(valid_len)?;
        }
        let mut file = file;
        std::io::Seek::seek(&mut file, std::io::SeekFrom::End(0))?;
        Ok((Self { path, file }, session))
    }

    pub fn append(&mut self, decision: &ReviewDecision) -> Result<(), CleaningError> {
        write_line(&mut self.file, &LogLine::Decision(decision.clone()))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Rebuild a session from a decision log.
pub fn replay_log<R: BufRead>(reader: R) -> Result<ReviewSession, CleaningError> {
    replay(reader).map(|(s, _)| s)
}

fn replay<R: BufRead>(mut reader: R) -> Result<(ReviewSession, u64), CleaningError> {
    let mut session: Option<ReviewSession> = None;
    let mut valid_len = 0u64;
    let mut line_no = 0;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let bad = |message: String| CleaningError::LogFormat { line: line_no, message };
        if !buf.ends_with('\n') {
            // an unterminated line was never acknowledged
            break;
        }
        if buf.trim().is_empty() {
            valid_len += n as u64;
            continue;
        }
        let entry: LogLine = serde_json::from_str(&buf).map_err(|e| bad(e.to_string()))?;
        match (entry, session.as_mut()) {
            (LogLine::Open { corpus_digest, seed, ratio, sample }, None) => {
                session = Some(ReviewSession::new(corpus_digest, sample, seed, ratio));
            }
            (LogLine::Open { .. }, Some(_)) => return Err(bad("second header line".into())),
            (LogLine::Decision(_), None) => return Err(bad("decision before header".into())),
            (LogLine::Decision(d), Some(s)) => s.record_decision(d).map_err(|e| bad(e.to_string()))?,
        }
        valid_len += n as u64;
    }
    let session = session.ok_or(CleaningError::LogFormat {
        line: 0,
        message: "log has no header".into(),
    })?;
    Ok((session, valid_len))
}

/// A session whose every accepted decision is durable.
#[derive(Debug)]
pub struct PersistentSession {
    session: ReviewSession,
    log: DecisionLog,
}

impl PersistentSession {
    pub fn create(path: impl AsRef<Path>, session: ReviewSession) -> Result<Self, CleaningError> {
        let log = DecisionLog::create(path, &session)?;
        Ok(Self { session, log })
    }

    /// Resume from `path`, checking that it belongs to the corpus with `digest`.
    pub fn resume(path: impl AsRef<Path>, digest: &str) -> Result<Self, CleaningError> {
        let (log, session) = DecisionLog::open(path)?;
        if session.corpus_digest != digest {
            return Err(CleaningError::DigestMismatch {
                expected: session.corpus_digest,
                actual: digest.to_string(),
            });
        }
        Ok(Self { session, log })
    }

    pub fn session(&self) -> &ReviewSession {
        &self.session
    }

    pub fn log_path(&self) -> &Path {
        self.log.path()
    }

    /// Validate, persist, then apply.
    pub fn record_decision(&mut self, decision: ReviewDecision) -> Result<(), CleaningError> {
        self.session.validate(&decision)?;
        self.log.append(&decision)?;
        self.session.record_decision(decision)
    }
}
