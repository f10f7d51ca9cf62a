//! Mixed visual token generation over synthetic token tensors and
//! visual-contrast decoding with an adaptive plausibility constraint.

mod mvte;
mod providers;
mod vcd;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mvte::{mvte_attention, mvte_fuse, mvte_generate, synthetic_pathways, Affine, Mlp, MvteParams};
pub use providers::{BigramProvider, LogitProvider, ScriptedProvider};
pub use vcd::{
    contrastive_distribution, distort, greedy_decode, plain_greedy, plausible_set, softmax, vcd_step,
    DecodeRun, ProbVector, StepTrace,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("expected {expected} logits, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid decoding config: {0}")]
    Config(String),
    #[error("logit provider failed at step {step}: {message}")]
    Provider { step: usize, message: String },
    #[error("{file} line {line}: {message}")]
    Format {
        file: String,
        line: usize,
        message: String,
    },
}

/// Which encoder pathway a tensor came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathway {
    Original,
    Distorted,
    Fused,
}

/// Tokens × channels.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTensor {
    pub data: Array2<f64>,
    pub pathway: Pathway,
}

impl TokenTensor {
    pub fn new(data: Array2<f64>, pathway: Pathway) -> Result<Self, DecodeError> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(DecodeError::Shape(format!("empty tensor {:?}", data.dim())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DecodeError::NonFinite("token tensor"));
        }
        Ok(Self { data, pathway })
    }

    pub fn tokens(&self) -> usize {
        self.data.nrows()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VcdConfig {
    /// Contrast weight.
    pub alpha: f64,
    /// Plausibility truncation, as a fraction of the top probability.
    pub beta: f64,
    /// Standard deviation of the conditioning noise.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for VcdConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            sigma: 0.3,
            seed: 0,
        }
    }
}

impl VcdConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(DecodeError::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(DecodeError::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(DecodeError::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}
