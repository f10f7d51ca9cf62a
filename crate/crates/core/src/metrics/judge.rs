use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::text::{rouge_pair, RougeVariant};
use super::{EvalPair, MetricError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JudgeError {
    #[error("judge transport failure: {0}")]
    Transport(String),
    #[error("judge response rejected: {0}")]
    BadResponse(String),
}

/// Rates a prediction against its reference on a 0–100 scale.
pub trait JudgeClient: Send + Sync {
    fn rate(&self, reference: &str, prediction: &str) -> Result<f64, JudgeError>;

    fn name(&self) -> &str;
}

/// Deterministic stand-in: ROUGE-L F1 scaled to 0–100.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubJudge;

impl JudgeClient for StubJudge {
    fn rate(&self, reference: &str, prediction: &str) -> Result<f64, JudgeError> {
        Ok(100.0 * rouge_pair(reference, prediction, RougeVariant::L))
    }

    fn name(&self) -> &str {
        "stub"
    }
}

#[derive(Serialize)]
struct RateRequest<'a> {
    reference: &'a str,
    prediction: &'a str,
}

#[derive(Deserialize)]
struct RateResponse {
    score: f64,
}

/// JSON-over-HTTP judge: posts `{"reference", "prediction"}`, expects `{"score"}`.
#[derive(Debug, Clone)]
pub struct HttpJudge {
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpJudge {
    pub fn new(url: impl Into<String>, token: Option<String>) -> Result<Self, JudgeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| JudgeError::Transport(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            token,
            client,
        })
    }
}

impl JudgeClient for HttpJudge {
    fn rate(&self, reference: &str, prediction: &str) -> Result<f64, JudgeError> {
        let mut req = self.client.post(&self.url).json(&RateRequest { reference, prediction });
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| JudgeError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(JudgeError::Transport(format!("status {}", resp.status())));
        }
        let body: RateResponse = resp.json().map_err(|e| JudgeError::BadResponse(e.to_string()))?;
        if !(0.0..=100.0).contains(&body.score) {
            return Err(JudgeError::BadResponse(format!("score {} outside [0, 100]", body.score)));
        }
        Ok(body.score)
    }

    fn name(&self) -> &str {
        "http"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    /// Mean over scored pairs; `None` when every call failed.
    pub score: Option<f64>,
    /// Fraction of pairs that received a rating.
    pub coverage: f64,
    pub unscored: Vec<String>,
}

pub fn judge_score(pairs: &[EvalPair], judge: &dyn JudgeClient) -> Result<JudgeOutcome, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("judge score"));
    }
    let mut scores = Vec::new();
    let mut unscored = Vec::new();
    for p in pairs {
        match judge.rate(&p.reference, &p.prediction) {
            Ok(s) => scores.push(s),
            Err(e) => {
                log::warn!("{}: {e}", p.record_id);
                unscored.push(p.record_id.clone());
            }
        }
    }
    let score = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    Ok(JudgeOutcome {
        score,
        coverage: scores.len() as f64 / pairs.len() as f64,
        unscored,
    })
}
