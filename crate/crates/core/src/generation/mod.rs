//! Instruction-record generation.
//!
//! Frames are turned into conversations in five paradigms, each tagged with
//! one of seven attribute sub-tasks. Template-driven records (Single Phrase,
//! Grounding QA, Region Based QA) come from [`instantiate`] and
//! [`derive_region_based`]; Visual QA elaborates Single Phrase answers into
//! sentences and Detailed Description assembles every attribute of a frame
//! into one grounded paragraph. Both of the latter pass through an
//! [`EnrichmentClient`].

mod conversation;
mod corpus;
mod enrich;
mod grounding;
mod instantiate;
mod templates;

pub use conversation::{
    parse_conversation, serialize_conversation, validate_record, ContractViolation,
};
pub use corpus::{
    corpus_stats, derive_subtask_splits, generate_corpus, read_corpus, write_corpus,
    GenerationConfig, Numerals, StatsReport, SubtaskSplits,
};
pub use enrich::{EnrichError, EnrichmentClient, HttpEnricher, StubEnricher};
pub use grounding::{parse_grounding, render_grounding, GroundingParse};
pub use instantiate::{
    assemble_detailed_description, assemble_multi_turn, derive_region_based,
    elaborate_visual_qa, instantiate, number_word, Generated,
};
pub use templates::{append_task_prompt, QATemplate, TemplateSet, DEFAULT_TEMPLATES};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::BoundingBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error("template {template_id}: unresolvable slot `{slot}`")]
    UnresolvableSlot { template_id: String, slot: String },
    #[error("template file line {line}: {message}")]
    TemplateSyntax { line: usize, message: String },
    #[error("frame {frame_id}: paradigm {paradigm} unavailable ({reason})")]
    ParadigmUnavailable {
        frame_id: String,
        paradigm: ConversationParadigm,
        reason: String,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("record {record_id}: {message}")]
    Validation { record_id: String, message: String },
    #[error("corpus line {line}: {message}")]
    CorpusSyntax { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversationParadigm {
    SinglePhrase,
    DetailedDescription,
    #[serde(rename = "visual_qa")]
    VisualQA,
    #[serde(rename = "region_based_qa")]
    RegionBasedQA,
    #[serde(rename = "grounding_qa")]
    GroundingQA,
}

impl ConversationParadigm {
    pub const ALL: [ConversationParadigm; 5] = [
        ConversationParadigm::SinglePhrase,
        ConversationParadigm::DetailedDescription,
        ConversationParadigm::VisualQA,
        ConversationParadigm::RegionBasedQA,
        ConversationParadigm::GroundingQA,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ConversationParadigm::SinglePhrase => "single_phrase",
            ConversationParadigm::DetailedDescription => "detailed_description",
            ConversationParadigm::VisualQA => "visual_qa",
            ConversationParadigm::RegionBasedQA => "region_based_qa",
            ConversationParadigm::GroundingQA => "grounding_qa",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ConversationParadigm::SinglePhrase => "Single Phrase",
            ConversationParadigm::DetailedDescription => "Detailed Description",
            ConversationParadigm::VisualQA => "Visual QA",
            ConversationParadigm::RegionBasedQA => "Region Based QA",
            ConversationParadigm::GroundingQA => "Grounding QA",
        }
    }
}

impl fmt::Display for ConversationParadigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ConversationParadigm {
    type Err = GenerationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        let p = match key.as_str() {
            "singlephrase" | "sp" => ConversationParadigm::SinglePhrase,
            "detaileddescription" | "detaildescription" | "dd" => {
                ConversationParadigm::DetailedDescription
            }
            "visualqa" | "vqa" => ConversationParadigm::VisualQA,
            "regionbasedqa" | "regionbased" | "rb" => ConversationParadigm::RegionBasedQA,
            "groundingqa" | "grounding" | "gqa" => ConversationParadigm::GroundingQA,
            _ => {
                return Err(GenerationError::Precondition(format!(
                    "unknown conversation paradigm `{s}`"
                )))
            }
        };
        Ok(p)
    }
}

/// Level of the attribute hierarchy a sub-task belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AttributeLevel {
    Observation,
    Operation,
    Analysis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubTask {
    #[serde(rename = "IN")]
    InstrumentNumber,
    #[serde(rename = "IC")]
    InstrumentCategory,
    #[serde(rename = "OP")]
    ObjectPosition,
    #[serde(rename = "IM")]
    InstrumentMotion,
    #[serde(rename = "TI")]
    TargetTissue,
    #[serde(rename = "MD")]
    MotionDirection,
    #[serde(rename = "Description")]
    Description,
}

impl SubTask {
    pub const ALL: [SubTask; 7] = [
        SubTask::InstrumentNumber,
        SubTask::InstrumentCategory,
        SubTask::ObjectPosition,
        SubTask::InstrumentMotion,
        SubTask::TargetTissue,
        SubTask::MotionDirection,
        SubTask::Description,
    ];

    pub fn code(self) -> &'static str {
        match self {
            SubTask::InstrumentNumber => "IN",
            SubTask::InstrumentCategory => "IC",
            SubTask::ObjectPosition => "OP",
            SubTask::InstrumentMotion => "IM",
            SubTask::TargetTissue => "TI",
            SubTask::MotionDirection => "MD",
            SubTask::Description => "Description",
        }
    }

    pub fn level(self) -> AttributeLevel {
        match self {
            SubTask::InstrumentNumber | SubTask::InstrumentCategory | SubTask::TargetTissue => {
                AttributeLevel::Observation
            }
            SubTask::ObjectPosition | SubTask::InstrumentMotion | SubTask::MotionDirection => {
                AttributeLevel::Operation
            }
            SubTask::Description => AttributeLevel::Analysis,
        }
    }
}

impl fmt::Display for SubTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for SubTask {
    type Err = GenerationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        let t = match key.as_str() {
            "in" | "instrumentnumber" => SubTask::InstrumentNumber,
            "ic" | "instrumentcategory" => SubTask::InstrumentCategory,
            "op" | "objectposition" => SubTask::ObjectPosition,
            "im" | "instrumentmotion" => SubTask::InstrumentMotion,
            "ti" | "targettissue" | "targetissue" => SubTask::TargetTissue,
            "md" | "motiondirection" => SubTask::MotionDirection,
            "description" | "desc" => SubTask::Description,
            _ => {
                return Err(GenerationError::Precondition(format!("unknown sub-task `{s}`")))
            }
        };
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    Assistant,
}

/// A labelled box that appears inline in a turn's text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedBox {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<GroundedBox>,
}

impl Turn {
    pub fn human(text: impl Into<String>) -> Self {
        Self {
            role: Role::Human,
            text: text.into(),
            boxes: vec![],
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
            boxes: vec![],
        }
    }

    pub fn with_boxes(mut self, boxes: Vec<GroundedBox>) -> Self {
        self.boxes = boxes;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Template,
    Enriched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub record_id: String,
    pub frame_id: String,
    /// Dataset the frame came from (`endovis`, `copesd`, ...).
    #[serde(default)]
    pub source: String,
    pub paradigm: ConversationParadigm,
    pub subtask: SubTask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    pub turns: Vec<Turn>,
    pub provenance: Provenance,
}

impl InstructionRecord {
    /// (question, answer) pairs in order. Trailing unpaired turns are ignored.
    pub fn pairs(&self) -> impl Iterator<Item = (&Turn, &Turn)> {
        self.turns.chunks_exact(2).map(|c| (&c[0], &c[1]))
    }

    /// Text of the final assistant turn.
    pub fn answer(&self) -> Option<&str> {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::Assistant)
            .map(|t| t.text.as_str())
    }

    pub fn question(&self) -> Option<&str> {
        self.turns
            .iter()
            .find(|t| t.role == Role::Human)
            .map(|t| t.text.as_str())
    }

    pub fn has_boxes(&self) -> bool {
        self.turns.iter().any(|t| !t.boxes.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enum_cardinalities() {
        assert_eq!(ConversationParadigm::ALL.len(), 5);
        assert_eq!(SubTask::ALL.len(), 7);
    }

    #[test]
    fn parse_names() {
        for p in ConversationParadigm::ALL {
            assert_eq!(p.code().parse::<ConversationParadigm>().unwrap(), p);
            assert_eq!(p.display_name().parse::<ConversationParadigm>().unwrap(), p);
        }
        for t in SubTask::ALL {
            assert_eq!(t.code().parse::<SubTask>().unwrap(), t);
        }
        assert_eq!("GroundingQA".parse::<ConversationParadigm>().unwrap(), ConversationParadigm::GroundingQA);
        assert!("chit-chat".parse::<ConversationParadigm>().is_err());
    }

    #[test]
    fn serde_codes() {
        assert_eq!(serde_json::to_string(&SubTask::TargetTissue).unwrap(), "\"TI\"");
        assert_eq!(
            serde_json::to_string(&ConversationParadigm::VisualQA).unwrap(),
            "\"visual_qa\""
        );
    }
}
