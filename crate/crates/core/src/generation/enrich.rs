use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{InstructionRecord, SubTask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnrichError {
    #[error("enrichment transport failure: {0}")]
    Transport(String),
    #[error("enrichment response rejected: {0}")]
    BadResponse(String),
}

/// Rewrites a draft assistant answer into richer text.
///
/// Implementations must be callable from several worker threads at once,
/// each call carrying its own request state.
pub trait EnrichmentClient: Send + Sync {
    fn rewrite(&self, instruction: &str, payload: &InstructionRecord) -> Result<String, EnrichError>;

    fn name(&self) -> &str;
}

/// Deterministic sentence templates keyed by (sub-task, answer).
#[derive(Debug, Clone, Copy, Default)]
pub struct StubEnricher;

impl StubEnricher {
    pub fn sentence(subtask: SubTask, answer: &str) -> String {
        let a = answer.trim().trim_end_matches(['.', '!', '?']);
        match subtask {
            SubTask::InstrumentNumber => {
                if matches!(a.to_lowercase().as_str(), "one" | "1") {
                    format!("There is {a} instrument visible in the image.")
                } else {
                    format!("There are {a} instruments visible in the image.")
                }
            }
            SubTask::InstrumentCategory => format!("The instrument shown is the {a}."),
            SubTask::ObjectPosition => format!("The object is located at the {a} of the image."),
            SubTask::InstrumentMotion => format!("The instrument is currently {a}."),
            SubTask::TargetTissue => {
                let bare = a.strip_prefix("the ").unwrap_or(a);
                format!("The target tissue is the {bare}.")
            }
            SubTask::MotionDirection => format!("The instrument is moving {a}."),
            SubTask::Description => answer.to_string(),
        }
    }
}

impl EnrichmentClient for StubEnricher {
    fn rewrite(&self, _instruction: &str, payload: &InstructionRecord) -> Result<String, EnrichError> {
        let answer = payload
            .answer()
            .ok_or_else(|| EnrichError::BadResponse("payload has no assistant turn".into()))?;
        Ok(Self::sentence(payload.subtask, answer))
    }

    fn name(&self) -> &str {
        "stub"
    }
}

#[derive(Serialize)]
struct RewriteRequest<'a> {
    instruction: &'a str,
    record: &'a InstructionRecord,
}

#[derive(Deserialize)]
struct RewriteResponse {
    text: String,
}

/// JSON-over-HTTP client for an external multimodal rewriting service.
///
/// Sends `{"instruction", "record"}` and expects `{"text"}` back.
#[derive(Debug, Clone)]
pub struct HttpEnricher {
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEnricher {
    pub fn new(url: impl Into<String>, token: Option<String>) -> Result<Self, EnrichError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| EnrichError::Transport(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            token,
            client,
        })
    }
}

impl EnrichmentClient for HttpEnricher {
    fn rewrite(&self, instruction: &str, payload: &InstructionRecord) -> Result<String, EnrichError> {
        let mut req = self.client.post(&self.url).json(&RewriteRequest {
            instruction,
            record: payload,
        });
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| EnrichError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EnrichError::Transport(format!("status {}", resp.status())));
        }
        let body: RewriteResponse = resp
            .json()
            .map_err(|e| EnrichError::BadResponse(e.to_string()))?;
        let text = body.text.trim().to_string();
        if text.is_empty() || text.contains('\n') {
            return Err(EnrichError::BadResponse("empty or multi-line text".into()));
        }
        Ok(text)
    }

    fn name(&self) -> &str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::{ConversationParadigm, Provenance, Turn};

    fn record(subtask: SubTask, answer: &str) -> InstructionRecord {
        InstructionRecord {
            record_id: "r".into(),
            frame_id: "f".into(),
            source: String::new(),
            paradigm: ConversationParadigm::SinglePhrase,
            subtask,
            template_id: None,
            turns: vec![Turn::human("q"), Turn::assistant(answer)],
            provenance: Provenance::Template,
        }
    }

    #[test]
    fn stub_sentences() {
        let s = StubEnricher;
        assert_eq!(
            s.rewrite("", &record(SubTask::InstrumentMotion, "idle")).unwrap(),
            "The instrument is currently idle."
        );
        assert_eq!(
            s.rewrite("", &record(SubTask::InstrumentNumber, "three")).unwrap(),
            "There are three instruments visible in the image."
        );
        assert_eq!(
            s.rewrite("", &record(SubTask::TargetTissue, "the mucosal flap")).unwrap(),
            "The target tissue is the mucosal flap."
        );
    }

    #[test]
    fn stub_is_pure() {
        let r = record(SubTask::MotionDirection, "upward");
        assert_eq!(
            StubEnricher.rewrite("a", &r).unwrap(),
            StubEnricher.rewrite("b", &r).unwrap()
        );
    }

    #[test]
    fn http_transport_failure_is_reported() {
        // nothing listens on port 9 of the loopback interface
        let c = HttpEnricher::new("http://127.0.0.1:9/rewrite", None).unwrap();
        let err = c.rewrite("x", &record(SubTask::InstrumentMotion, "idle")).unwrap_err();
        assert!(matches!(err, EnrichError::Transport(_)));
    }
}
