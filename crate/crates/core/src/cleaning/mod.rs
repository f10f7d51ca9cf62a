//! Sampling-based human review of a generated corpus and propagation of
//! the reviewers' corrections to the records nobody looked at.

mod rules;
mod sample;
mod session;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rules::{
    apply_rules, compile_rules, phrase_diff, ChangeEntry, ChangeKind, ChangeLog, CleaningRule,
    Conflict, FlagPolicy, RuleAction, RuleMatch, DEFAULT_RULE_THRESHOLD,
};
pub use sample::{corpus_digest, sample_for_review, stratum_counts, DEFAULT_RATIO};
pub use session::{replay_log, DecisionLog, PersistentSession, ReviewSession};

#[derive(Debug, Error)]
pub enum CleaningError {
    #[error("cannot sample from an empty corpus")]
    EmptyCorpus,
    #[error("sampling ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("record `{0}` is not part of the review sample")]
    ForeignRecord(String),
    #[error("invalid decision for `{record_id}`: {message}")]
    InvalidDecision { record_id: String, message: String },
    #[error("decision log line {line}: {message}")]
    LogFormat { line: usize, message: String },
    #[error("decision log was opened against a different corpus (digest {expected}, corpus has {actual})")]
    DigestMismatch { expected: String, actual: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IssueTag {
    Completeness,
    Relevance,
    Clarity,
}

impl IssueTag {
    pub const ALL: [IssueTag; 3] = [IssueTag::Completeness, IssueTag::Relevance, IssueTag::Clarity];

    pub fn as_str(self) -> &'static str {
        match self {
            IssueTag::Completeness => "completeness",
            IssueTag::Relevance => "relevance",
            IssueTag::Clarity => "clarity",
        }
    }
}

impl fmt::Display for IssueTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IssueTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IssueTag::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown issue tag `{s}` (expected completeness, relevance or clarity)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Edit,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    /// Filled from the URL when posted through the review API.
    #[serde(default)]
    pub record_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub issues: BTreeSet<IssueTag>,
    /// Replacement for the record's final assistant turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_text: Option<String>,
    #[serde(default)]
    pub note: String,
    #[serde(default = "Utc::now")]
    pub timestamp: DateTime<Utc>,
}

impl ReviewDecision {
    pub fn new(record_id: impl Into<String>, verdict: Verdict) -> Self {
        Self {
            record_id: record_id.into(),
            verdict,
            issues: BTreeSet::new(),
            edited_text: None,
            note: String::new(),
            timestamp: Utc::now(),
        }
    }

    pub fn accept(record_id: impl Into<String>) -> Self {
        Self::new(record_id, Verdict::Accept)
    }

    pub fn edit(record_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            edited_text: Some(text.into()),
            ..Self::new(record_id, Verdict::Edit)
        }
    }

    pub fn flag(record_id: impl Into<String>, issues: impl IntoIterator<Item = IssueTag>) -> Self {
        Self {
            issues: issues.into_iter().collect(),
            ..Self::new(record_id, Verdict::Flag)
        }
    }

    /// Structural invariants that do not depend on the session.
    pub fn check(&self) -> Result<(), CleaningError> {
        let bad = |message: &str| CleaningError::InvalidDecision {
            record_id: self.record_id.clone(),
            message: message.to_string(),
        };
        if self.record_id.is_empty() {
            return Err(bad("missing record_id"));
        }
        match self.verdict {
            Verdict::Edit => match &self.edited_text {
                Some(t) if !t.trim().is_empty() && !t.contains('\n') => {}
                Some(_) => return Err(bad("edited_text must be a non-empty single line")),
                None => return Err(bad("an edit verdict requires edited_text")),
            },
            Verdict::Flag if self.issues.is_empty() => {
                return Err(bad("a flag verdict requires at least one issue tag"))
            }
            _ => {}
        }
        Ok(())
    }
}
