//! Wire form of a conversation and the per-paradigm structural contracts.

use super::grounding::parse_grounding;
use super::instantiate::SINGLE_PHRASE_MAX_WORDS;
use super::{ConversationParadigm, GenerationError, InstructionRecord, Role};

const HUMAN: &str = "Human: ";
const ASSISTANT: &str = "EndoChat: ";

/// `Human: <question>\nEndoChat: <answer>\n` for every pair, in order.
pub fn serialize_conversation(record: &InstructionRecord) -> Result<String, GenerationError> {
    let fail = |message: &str| GenerationError::Validation {
        record_id: record.record_id.clone(),
        message: message.to_string(),
    };
    if record.turns.is_empty() {
        return Err(GenerationError::Precondition(format!(
            "record {} has no turns",
            record.record_id
        )));
    }
    if !record.turns.len().is_multiple_of(2) {
        return Err(fail("odd number of turns"));
    }
    let mut out = String::new();
    for (q, a) in record.pairs() {
        if q.role != Role::Human || a.role != Role::Assistant {
            return Err(fail("turns must alternate human, assistant"));
        }
        if q.text.contains('\n') || a.text.contains('\n') {
            return Err(fail("turn text contains a newline"));
        }
        out.push_str(HUMAN);
        out.push_str(&q.text);
        out.push('\n');
        out.push_str(ASSISTANT);
        out.push_str(&a.text);
        out.push('\n');
    }
    Ok(out)
}

/// Inverse of [`serialize_conversation`].
pub fn parse_conversation(text: &str) -> Result<Vec<(String, String)>, GenerationError> {
    let bad = |line: usize, message: &str| GenerationError::CorpusSyntax {
        line,
        message: message.to_string(),
    };
    let Some(body) = text.strip_suffix('\n') else {
        return Err(bad(0, "conversation must end with a newline"));
    };
    let lines: Vec<&str> = body.split('\n').collect();
    if !lines.len().is_multiple_of(2) {
        return Err(bad(lines.len(), "unpaired line"));
    }
    lines
        .chunks_exact(2)
        .enumerate()
        .map(|(i, pair)| {
            let q = pair[0]
                .strip_prefix(HUMAN)
                .ok_or_else(|| bad(2 * i + 1, "expected `Human: `"))?;
            let a = pair[1]
                .strip_prefix(ASSISTANT)
                .ok_or_else(|| bad(2 * i + 2, "expected `EndoChat: `"))?;
            Ok((q.to_string(), a.to_string()))
        })
        .collect()
}

/// One broken structural rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractViolation {
    pub record_id: String,
    pub rule: String,
}

fn is_sentence(s: &str) -> bool {
    let s = s.trim();
    s.chars().next().is_some_and(|c| c.is_uppercase() || c.is_ascii_digit())
        && s.ends_with(['.', '!', '?'])
}

fn bracket_count(s: &str) -> usize {
    s.matches('[').count()
}

/// Check a record against its paradigm's structural contract.
pub fn validate_record(record: &InstructionRecord) -> Vec<ContractViolation> {
    let mut v = Vec::new();
    let mut fail = |rule: String| {
        v.push(ContractViolation {
            record_id: record.record_id.clone(),
            rule,
        })
    };
    if record.turns.len() < 2 || !record.turns.len().is_multiple_of(2) {
        fail(format!("expected an even number (>= 2) of turns, got {}", record.turns.len()));
        return v;
    }
    for (i, t) in record.turns.iter().enumerate() {
        let want = if i % 2 == 0 { Role::Human } else { Role::Assistant };
        if t.role != want {
            fail(format!("turn {i} should be {want:?}"));
        }
        if t.text.trim().is_empty() || t.text.contains('\n') {
            fail(format!("turn {i} is empty or multi-line"));
        }
        // inline groups must match the declared boxes
        let parsed = parse_grounding(&t.text);
        if !parsed.warnings.is_empty() {
            fail(format!("turn {i} has malformed grounding"));
        }
        if parsed.boxes.len() != t.boxes.len() {
            fail(format!(
                "turn {i} declares {} boxes but its text has {}",
                t.boxes.len(),
                parsed.boxes.len()
            ));
        } else {
            for (p, d) in parsed.boxes.iter().zip(&t.boxes) {
                let close = p
                    .bbox
                    .to_array()
                    .iter()
                    .zip(d.bbox.to_array())
                    .all(|(a, b)| (a - b).abs() <= 0.005 + 1e-9);
                if !close || !p.label.ends_with(d.label.as_str()) {
                    fail(format!("turn {i} box `{}` does not match its text", d.label));
                }
            }
        }
    }
    for (q, a) in record.pairs() {
        let answer_boxes = parse_grounding(&a.text).boxes;
        match record.paradigm {
            ConversationParadigm::SinglePhrase => {
                let words = a.text.split_whitespace().count();
                if words > SINGLE_PHRASE_MAX_WORDS {
                    fail(format!("single phrase answer has {words} words"));
                }
                if bracket_count(&a.text) > 0 {
                    fail("single phrase answer contains a box".into());
                }
            }
            ConversationParadigm::GroundingQA => {
                let trimmed = a.text.trim();
                if answer_boxes.len() != 1 || bracket_count(trimmed) != 1 || !trimmed.ends_with(']') {
                    fail("grounding answer must be exactly one `label [x1, y1, x2, y2]`".into());
                }
            }
            ConversationParadigm::RegionBasedQA => {
                if parse_grounding(&q.text).boxes.is_empty() {
                    fail("region-based question has no box".into());
                }
                if bracket_count(&a.text) > 0 {
                    fail("region-based answer contains a box".into());
                }
            }
            ConversationParadigm::VisualQA => {
                if !is_sentence(&a.text) {
                    fail("visual QA answer is not a sentence".into());
                }
                if bracket_count(&a.text) > 0 {
                    fail("visual QA answer contains a box".into());
                }
            }
            ConversationParadigm::DetailedDescription => {
                if !is_sentence(&a.text) {
                    fail("description is not a sentence".into());
                }
            }
        }
    }
    v
}
