//! Scoring of model transcripts: exact-match classification scores, box
//! overlap, n-gram captioning metrics and an external judge.

mod boxes;
mod cider;
mod classify;
mod evaluate;
mod judge;
mod meteor;
mod text;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::BoundingBox;
use crate::generation::{ConversationParadigm, SubTask};

pub use boxes::{ap_at_50, iou, mean_iou, BoxScore, AP_THRESHOLD_SLACK};
pub use cider::{cider, CIDER_SIGMA};
pub use classify::{accuracy, macro_f1, normalize_answer};
pub use evaluate::{
    evaluate, read_references, read_transcript, EvalConfig, MetricReport, Reference, ReportGroup,
    TranscriptLine,
};
pub use judge::{judge_score, HttpJudge, JudgeClient, JudgeError, JudgeOutcome, StubJudge};
pub use meteor::{meteor, meteor_pair};
pub use text::{bleu, rouge, rouge_pair, tokenize, RougeVariant, BLEU_EPSILON};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{0}: no pairs to score")]
    Empty(&'static str),
    #[error("{unmatched} of {total} record ids have no counterpart (more than 10%): {ids:?}")]
    Unmatched {
        unmatched: usize,
        total: usize,
        ids: Vec<String>,
    },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("{file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("BLEU order must be between 1 and 4, got {0}")]
    BleuOrder(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One prediction scored against one reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub record_id: String,
    pub paradigm: ConversationParadigm,
    pub subtask: SubTask,
    pub reference: String,
    #[serde(default, rename = "reference_box", skip_serializing_if = "Option::is_none")]
    pub reference_box: Option<BoundingBox>,
    pub prediction: String,
}

impl EvalPair {
    /// Bare text pair; paradigm and sub-task only matter for routing.
    pub fn text(reference: impl Into<String>, prediction: impl Into<String>) -> Self {
        Self {
            record_id: String::new(),
            paradigm: ConversationParadigm::VisualQA,
            subtask: SubTask::Description,
            reference: reference.into(),
            reference_box: None,
            prediction: prediction.into(),
        }
    }

    pub fn boxed(reference: BoundingBox, prediction: impl Into<String>) -> Self {
        Self {
            paradigm: ConversationParadigm::GroundingQA,
            reference_box: Some(reference),
            ..Self::text(crate::generation::render_grounding("", &reference), prediction)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "Acc")]
    Accuracy,
    #[serde(rename = "F-score")]
    FScore,
    #[serde(rename = "AP@50")]
    Ap50,
    #[serde(rename = "mIoU")]
    MeanIou,
    #[serde(rename = "BLEU-3")]
    Bleu3,
    #[serde(rename = "BLEU-4")]
    Bleu4,
    #[serde(rename = "CIDEr")]
    Cider,
    #[serde(rename = "METEOR")]
    Meteor,
    #[serde(rename = "ROUGE-1")]
    Rouge1,
    #[serde(rename = "ROUGE-L")]
    RougeL,
    #[serde(rename = "GPT-4 Score")]
    Judge,
}

impl Metric {
    pub const ALL: [Metric; 11] = [
        Metric::Accuracy,
        Metric::FScore,
        Metric::Ap50,
        Metric::MeanIou,
        Metric::Bleu3,
        Metric::Bleu4,
        Metric::Cider,
        Metric::Meteor,
        Metric::Rouge1,
        Metric::RougeL,
        Metric::Judge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "Acc",
            Metric::FScore => "F-score",
            Metric::Ap50 => "AP@50",
            Metric::MeanIou => "mIoU",
            Metric::Bleu3 => "BLEU-3",
            Metric::Bleu4 => "BLEU-4",
            Metric::Cider => "CIDEr",
            Metric::Meteor => "METEOR",
            Metric::Rouge1 => "ROUGE-1",
            Metric::RougeL => "ROUGE-L",
            Metric::Judge => "GPT-4 Score",
        }
    }

    /// The metrics reported for a conversation paradigm.
    pub fn for_paradigm(p: ConversationParadigm) -> &'static [Metric] {
        match p {
            ConversationParadigm::SinglePhrase => &[Metric::Accuracy, Metric::FScore],
            ConversationParadigm::GroundingQA => &[Metric::Ap50, Metric::MeanIou],
            ConversationParadigm::VisualQA | ConversationParadigm::RegionBasedQA => &[
                Metric::Bleu3,
                Metric::Bleu4,
                Metric::Cider,
                Metric::Meteor,
                Metric::Rouge1,
                Metric::RougeL,
            ],
            ConversationParadigm::DetailedDescription => &[Metric::Judge],
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric() || *c == '@')
            .collect::<String>()
            .to_ascii_lowercase();
        let m = match key.as_str() {
            "acc" | "accuracy" => Metric::Accuracy,
            "f" | "fscore" | "f1" | "macrof1" => Metric::FScore,
            "ap@50" | "ap50" | "acc@05" => Metric::Ap50,
            "miou" => Metric::MeanIou,
            "bleu3" => Metric::Bleu3,
            "bleu4" => Metric::Bleu4,
            "cider" | "ciderd" => Metric::Cider,
            "meteor" => Metric::Meteor,
            "rouge1" => Metric::Rouge1,
            "rougel" => Metric::RougeL,
            "gpt4score" | "judge" | "judgescore" => Metric::Judge,
            _ => {
                let names: Vec<_> = Metric::ALL.iter().map(|m| m.name()).collect();
                return Err(format!("unknown metric `{s}` (expected one of {})", names.join(", ")));
            }
        };
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert_eq!("acc@0.5".parse::<Metric>().unwrap(), Metric::Ap50);
    }
}
