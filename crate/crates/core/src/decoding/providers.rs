use std::io::BufRead;

use ndarray::{Array2, Axis};
use serde::Deserialize;

use super::DecodeError;

/// Next-token logits given the decoded prefix and a conditioning tensor.
/// Implementations must tolerate concurrent calls with independent contexts.
pub trait LogitProvider: Send + Sync {
    fn vocab(&self) -> usize;

    fn logits(&self, context: &[usize], conditioning: &Array2<f64>) -> Result<Vec<f64>, DecodeError>;
}

/// Replays fixed per-step logits. Each step stores an original and a
/// distorted branch; the original branch answers for the registered clean
/// conditioning, the distorted branch for anything else.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedProvider {
    vocab: usize,
    steps: Vec<(Vec<f64>, Vec<f64>)>,
    clean: Array2<f64>,
}

impl ScriptedProvider {
    pub fn new(steps: Vec<(Vec<f64>, Vec<f64>)>, clean: Array2<f64>) -> Result<Self, DecodeError> {
        let vocab = steps.first().map_or(0, |s| s.0.len());
        if vocab == 0 {
            return Err(DecodeError::Shape("script has no steps".into()));
        }
        for (o, d) in &steps {
            if o.len() != vocab || d.len() != vocab {
                return Err(DecodeError::Length {
                    expected: vocab,
                    got: o.len().min(d.len()),
                });
            }
        }
        Ok(Self { vocab, steps, clean })
    }

    /// One step per line: whitespace-separated logits, the original branch
    /// followed by the distorted branch. `#` starts a comment.
    pub fn parse<R: BufRead>(reader: R, clean: Array2<f64>) -> Result<Self, DecodeError> {
        let mut steps = Vec::new();
        let mut vocab = None;
        for (i, line) in reader.lines().enumerate() {
            let bad = |message: String| DecodeError::Format {
                file: "script".into(),
                line: i + 1,
                message,
            };
            let line = line.map_err(|e| bad(e.to_string()))?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let values = body
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| bad(format!("`{t}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() % 2 != 0 || values.is_empty() {
                return Err(bad(format!("expected an even number of logits, got {}", values.len())));
            }
            let v = values.len() / 2;
            if *vocab.get_or_insert(v) != v {
                return Err(bad(format!("vocabulary size changed to {v}")));
            }
            if values.iter().any(|x| !x.is_finite()) {
                return Err(bad("non-finite logit".into()));
            }
            steps.push((values[..v].to_vec(), values[v..].to_vec()));
        }
        Self::new(steps, clean)
    }

    pub fn steps(&self) -> usize {
        self.steps.len()
    }
}

impl LogitProvider for ScriptedProvider {
    fn vocab(&self) -> usize {
        self.vocab
    }

    fn logits(&self, context: &[usize], conditioning: &Array2<f64>) -> Result<Vec<f64>, DecodeError> {
        let step = context.len();
        let (o, d) = self.steps.get(step).ok_or_else(|| DecodeError::Provider {
            step,
            message: format!("script has only {} steps", self.steps.len()),
        })?;
        Ok(if *conditioning == self.clean { o.clone() } else { d.clone() })
    }
}

#[derive(Deserialize)]
struct BigramFile {
    /// `vocab + 1` rows: the first for an empty prefix, then one per previous token.
    logits: Vec<Vec<f64>>,
    /// Optional `vocab` rows of per-channel weights on the mean conditioning token.
    #[serde(default)]
    visual: Option<Vec<Vec<f64>>>,
}

/// Logits from a transition table plus a linear read-out of the mean
/// conditioning token, so noise in the conditioning moves the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramProvider {
    table: Array2<f64>,
    visual: Option<Array2<f64>>,
}

fn rows_to_array(rows: Vec<Vec<f64>>, what: &str) -> Result<Array2<f64>, DecodeError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) || cols == 0 {
        return Err(DecodeError::Shape(format!("{what} rows must be non-empty and equally long")));
    }
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(DecodeError::NonFinite("bigram table"));
    }
    Array2::from_shape_vec((n, cols), flat).map_err(|e| DecodeError::Shape(e.to_string()))
}

impl BigramProvider {
    pub fn new(table: Array2<f64>, visual: Option<Array2<f64>>) -> Result<Self, DecodeError> {
        let v = table.ncols();
        if table.nrows() != v + 1 {
            return Err(DecodeError::Shape(format!(
                "transition table needs {} rows for a {v}-token vocabulary, has {}",
                v + 1,
                table.nrows()
            )));
        }
        if let Some(w) = &visual {
            if w.nrows() != v {
                return Err(DecodeError::Shape(format!("visual weights need {v} rows, have {}", w.nrows())));
            }
        }
        Ok(Self { table, visual })
    }

    /// JSON `{"logits": [[..]; V+1], "visual": [[..; D]; V]?}`.
    pub fn from_json(text: &str) -> Result<Self, DecodeError> {
        let f: BigramFile = serde_json::from_str(text).map_err(|e| DecodeError::Format {
            file: "bigram".into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let table = rows_to_array(f.logits, "logits")?;
        let visual = f.visual.map(|v| rows_to_array(v, "visual")).transpose()?;
        Self::new(table, visual)
    }

    pub fn visual_dim(&self) -> Option<usize> {
        self.visual.as_ref().map(|w| w.ncols())
    }
}

impl LogitProvider for BigramProvider {
    fn vocab(&self) -> usize {
        self.table.ncols()
    }

    fn logits(&self, context: &[usize], conditioning: &Array2<f64>) -> Result<Vec<f64>, DecodeError> {
        let row = match context.last() {
            None => 0,
            Some(&t) if t < self.vocab() => t + 1,
            Some(&t) => {
                return Err(DecodeError::Provider {
                    step: context.len(),
                    message: format!("token {t} outside vocabulary"),
                })
            }
        };
        let mut l = self.table.row(row).to_owned();
        if let Some(w) = &self.visual {
            if conditioning.ncols() != w.ncols() {
                return Err(DecodeError::Shape(format!(
                    "conditioning has {} channels, visual weights expect {}",
                    conditioning.ncols(),
                    w.ncols()
                )));
            }
            let mean = conditioning
                .mean_axis(Axis(0))
                .ok_or_else(|| DecodeError::Shape("empty conditioning".into()))?;
            l += &w.dot(&mean);
        }
        Ok(l.to_vec())
    }
}
