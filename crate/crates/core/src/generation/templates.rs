use std::collections::BTreeSet;
use std::io::BufRead;

use super::{ConversationParadigm, GenerationError, SubTask};

/// Template pool shipped with the crate.
pub const DEFAULT_TEMPLATES: &str = include_str!("../../templates/default.tsv");

const SINGLE_PHRASE_PROMPT: &str = "Answer the question with a single phrase.";
const GROUNDING_PROMPT: &str = "Answer the question with just a bounding box.";

/// Append the paradigm's task-specific prompt to a question.
pub fn append_task_prompt(question: &str, paradigm: ConversationParadigm) -> String {
    let q = question.trim_end();
    match paradigm {
        ConversationParadigm::SinglePhrase => format!("{q} {SINGLE_PHRASE_PROMPT}"),
        ConversationParadigm::GroundingQA => format!("{q} {GROUNDING_PROMPT}"),
        _ => question.to_string(),
    }
}

/// Inverse of [`append_task_prompt`]; returns the question unchanged when no
/// prompt is present.
pub(crate) fn strip_task_prompt(question: &str) -> &str {
    for prompt in [SINGLE_PHRASE_PROMPT, GROUNDING_PROMPT] {
        if let Some(q) = question.strip_suffix(prompt) {
            return q.trim_end();
        }
    }
    question
}

/// Slots a sub-task's bindings can fill.
pub(crate) fn slot_vocabulary(subtask: SubTask) -> &'static [&'static str] {
    match subtask {
        SubTask::InstrumentNumber => &["count"],
        SubTask::InstrumentCategory => &[
            "instrument",
            "instrument_box",
            "instrument_region",
            "position",
            "motion",
        ],
        SubTask::ObjectPosition => &["object", "object_box", "object_region", "position"],
        SubTask::InstrumentMotion => &[
            "instrument",
            "instrument_box",
            "instrument_region",
            "motion",
            "position",
        ],
        SubTask::TargetTissue => &["tissue", "tissue_box", "tissue_region", "position"],
        SubTask::MotionDirection => &[
            "instrument",
            "instrument_box",
            "instrument_region",
            "direction",
            "motion",
            "position",
        ],
        SubTask::Description => &["description"],
    }
}

pub(crate) fn is_box_slot(slot: &str) -> bool {
    slot.ends_with("_box") || slot.ends_with("_region")
}

/// A question pool plus one answer pattern for a (paradigm, sub-task) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QATemplate {
    pub template_id: String,
    pub paradigm: ConversationParadigm,
    pub subtask: SubTask,
    pub questions: Vec<String>,
    pub answer: String,
}

impl QATemplate {
    pub fn question_slots(&self) -> BTreeSet<String> {
        self.questions.iter().flat_map(|q| slots_of(q)).collect()
    }

    pub fn answer_slots(&self) -> BTreeSet<String> {
        slots_of(&self.answer).into_iter().collect()
    }

    /// Every slot used anywhere in the template.
    pub fn slots(&self) -> BTreeSet<String> {
        let mut s = self.question_slots();
        s.extend(self.answer_slots());
        s
    }

    /// Fails with the first slot the sub-task cannot bind.
    pub fn check_slots(&self) -> Result<(), GenerationError> {
        let vocab = slot_vocabulary(self.subtask);
        match self.slots().into_iter().find(|s| !vocab.contains(&s.as_str())) {
            Some(slot) => Err(GenerationError::UnresolvableSlot {
                template_id: self.template_id.clone(),
                slot,
            }),
            None => Ok(()),
        }
    }
}

pub(crate) fn slots_of(pattern: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else { break };
        out.push(rest[start + 1..start + len].to_string());
        rest = &rest[start + len + 1..];
    }
    out
}

/// Fill `{slot}` placeholders; `None` when a slot has no value.
pub(crate) fn fill<'a>(pattern: &str, lookup: impl Fn(&str) -> Option<&'a str>) -> Option<String> {
    let mut out = String::with_capacity(pattern.len() + 16);
    let mut rest = pattern;
    while let Some(start) = rest.find('{') {
        let len = rest[start..].find('}')?;
        out.push_str(&rest[..start]);
        out.push_str(lookup(&rest[start + 1..start + len])?);
        rest = &rest[start + len + 1..];
    }
    out.push_str(rest);
    Some(out)
}

fn check_braces(pattern: &str) -> Result<(), String> {
    let mut open = false;
    for c in pattern.chars() {
        match (c, open) {
            ('{', false) => open = true,
            ('}', true) => open = false,
            ('{', true) => return Err("nested `{`".into()),
            ('}', false) => return Err("unmatched `}`".into()),
            _ => {}
        }
    }
    if open {
        return Err("unterminated `{`".into());
    }
    if slots_of(pattern).iter().any(|s| s.is_empty() || s.contains(char::is_whitespace)) {
        return Err("empty or malformed slot name".into());
    }
    Ok(())
}

fn check_shape(
    paradigm: ConversationParadigm,
    questions: &[String],
    answer: &str,
) -> Result<(), String> {
    let answer_slots = slots_of(answer);
    let answer_has_box = answer_slots.iter().any(|s| is_box_slot(s));
    match paradigm {
        ConversationParadigm::SinglePhrase | ConversationParadigm::VisualQA if answer_has_box => {
            Err("answer must not contain a box slot".into())
        }
        ConversationParadigm::GroundingQA => {
            let only_box = answer_slots.len() == 1
                && answer_slots[0].ends_with("_box")
                && answer.trim() == format!("{{{}}}", answer_slots[0]);
            if only_box {
                Ok(())
            } else {
                Err("grounding answers must be exactly one `{*_box}` slot".into())
            }
        }
        ConversationParadigm::RegionBasedQA => {
            if answer_has_box {
                return Err("region-based answers must not contain a box slot".into());
            }
            if questions
                .iter()
                .any(|q| !slots_of(q).iter().any(|s| is_box_slot(s)))
            {
                return Err("region-based questions must contain a box slot".into());
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Ordered collection of templates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemplateSet {
    pub templates: Vec<QATemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("built-in templates parse")
    }

    /// Parse the tab-separated template format
    /// `paradigm TAB subtask TAB question_pattern TAB answer_pattern`.
    ///
    /// Lines starting with `#` and blank lines are skipped. Lines sharing
    /// paradigm, sub-task and answer pattern merge into one template whose
    /// question pool keeps file order.
    pub fn parse(text: &str) -> Result<Self, GenerationError> {
        Self::read(text.as_bytes())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, GenerationError> {
        let mut templates: Vec<QATemplate> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let syntax = |message: String| GenerationError::TemplateSyntax {
                line: lineno,
                message,
            };
            let line = line.map_err(|e| syntax(e.to_string()))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(syntax(format!("expected 4 tab-separated columns, got {}", cols.len())));
            }
            let paradigm: ConversationParadigm =
                cols[0].parse().map_err(|e: GenerationError| syntax(e.to_string()))?;
            let subtask: SubTask = cols[1].parse().map_err(|e: GenerationError| syntax(e.to_string()))?;
            let (question, answer) = (cols[2].trim(), cols[3].trim());
            if question.is_empty() || answer.is_empty() {
                return Err(syntax("empty question or answer pattern".into()));
            }
            check_braces(question).map_err(&syntax)?;
            check_braces(answer).map_err(&syntax)?;
            check_shape(paradigm, &[question.to_string()], answer).map_err(&syntax)?;

            if let Some(t) = templates
                .iter_mut()
                .find(|t| t.paradigm == paradigm && t.subtask == subtask && t.answer == answer)
            {
                t.questions.push(question.to_string());
                continue;
            }
            let n = templates
                .iter()
                .filter(|t| t.paradigm == paradigm && t.subtask == subtask)
                .count();
            templates.push(QATemplate {
                template_id: format!("{}.{}.{}", paradigm.code(), subtask.code(), n),
                paradigm,
                subtask,
                questions: vec![question.to_string()],
                answer: answer.to_string(),
            });
        }
        Ok(Self { templates })
    }

    pub fn for_paradigm(&self, paradigm: ConversationParadigm) -> impl Iterator<Item = &QATemplate> {
        self.templates.iter().filter(move |t| t.paradigm == paradigm)
    }

    pub fn get(&self, template_id: &str) -> Option<&QATemplate> {
        self.templates.iter().find(|t| t.template_id == template_id)
    }
}
