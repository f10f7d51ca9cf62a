//! Building blocks for a surgical visual-instruction corpus: annotation
//! normalization, conversation generation, human-in-the-loop cleaning,
//! the evaluation metric battery and contrastive decoding kernels.

pub mod annotations;
pub mod cleaning;
pub mod decoding;
pub mod generation;
pub mod metrics;
mod util;
