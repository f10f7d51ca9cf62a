use std::collections::BTreeMap;

use rand::Rng;

use super::corpus::Numerals;
use super::enrich::{EnrichmentClient, StubEnricher};
use super::grounding::{parse_grounding, render_grounding};
use super::templates::{append_task_prompt, fill, is_box_slot, slots_of, strip_task_prompt};
use super::{
    ConversationParadigm, GenerationError, GroundedBox, InstructionRecord, Provenance, QATemplate,
    SubTask, TemplateSet, Turn,
};
use crate::annotations::{position_of, BoundingBox, FrameAnnotation, SourceQaKind};
use crate::util::{keyed_rng, loose_text};

/// A generated value plus non-fatal findings.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Generated<T> {
    fn new(value: T) -> Self {
        Self {
            value,
            warnings: Vec::new(),
        }
    }
}

const NUMBER_WORDS: [&str; 11] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// Counts 0 to 10 as English words, larger ones as digits.
pub fn number_word(n: usize) -> String {
    NUMBER_WORDS
        .get(n)
        .map(|w| w.to_string())
        .unwrap_or_else(|| n.to_string())
}

fn render_count(n: usize, numerals: Numerals) -> String {
    match numerals {
        Numerals::Words => number_word(n),
        Numerals::Digits => n.to_string(),
    }
}

pub(crate) const SINGLE_PHRASE_MAX_WORDS: usize = 4;

/// True when the two-decimal text form of `b` still parses as a valid box.
fn renderable(b: &BoundingBox) -> bool {
    parse_grounding(&render_grounding("", b)).boxes.len() == 1
}

fn bare_tissue(name: &str) -> &str {
    let t = name.trim();
    t.strip_prefix("the ")
        .or_else(|| t.strip_prefix("The "))
        .unwrap_or(t)
}

/// Slot values for one object (or for the whole frame, for counts).
#[derive(Debug, Default, Clone)]
struct Binding {
    values: BTreeMap<&'static str, String>,
    boxes: BTreeMap<&'static str, GroundedBox>,
}

impl Binding {
    fn set(&mut self, slot: &'static str, value: impl Into<String>) {
        self.values.insert(slot, value.into());
    }

    /// Adds `<prefix>_box` (labelled) and `<prefix>_region` (bare) slots.
    fn set_box(&mut self, prefix: &'static str, label: &str, b: &BoundingBox) {
        let (box_slot, region_slot) = match prefix {
            "instrument" => ("instrument_box", "instrument_region"),
            "object" => ("object_box", "object_region"),
            _ => ("tissue_box", "tissue_region"),
        };
        self.values.insert(box_slot, render_grounding(label, b));
        self.values.insert(region_slot, render_grounding("", b));
        self.boxes.insert(
            box_slot,
            GroundedBox {
                label: label.to_string(),
                bbox: *b,
            },
        );
        self.boxes.insert(
            region_slot,
            GroundedBox {
                label: String::new(),
                bbox: *b,
            },
        );
    }

    fn get(&self, slot: &str) -> Option<&str> {
        self.values.get(slot).map(String::as_str)
    }

    fn boxes_in(&self, pattern: &str) -> Vec<GroundedBox> {
        slots_of(pattern)
            .iter()
            .filter(|s| is_box_slot(s))
            .filter_map(|s| self.boxes.get(s.as_str()).cloned())
            .collect()
    }
}

fn bindings(frame: &FrameAnnotation, subtask: SubTask, numerals: Numerals) -> Vec<Binding> {
    let boxed = |b: &Option<BoundingBox>| b.filter(renderable);
    match subtask {
        SubTask::InstrumentNumber => {
            if !frame.is_grounded() {
                return vec![];
            }
            let mut b = Binding::default();
            b.set("count", render_count(frame.instrument_count(), numerals));
            vec![b]
        }
        SubTask::InstrumentCategory | SubTask::InstrumentMotion | SubTask::MotionDirection => frame
            .instruments
            .iter()
            .filter_map(|inst| {
                let mut b = Binding::default();
                b.set("instrument", inst.category.trim());
                if let Some(m) = &inst.motion {
                    b.set("motion", m.trim());
                }
                if let Some(d) = inst.direction {
                    b.set("direction", d.as_str());
                }
                if let Some(bx) = boxed(&inst.bbox) {
                    b.set("position", position_of(&bx).as_str());
                    b.set_box("instrument", inst.category.trim(), &bx);
                }
                let keep = match subtask {
                    SubTask::InstrumentCategory => inst.bbox.is_some(),
                    SubTask::InstrumentMotion => inst.motion.is_some(),
                    _ => inst.direction.is_some(),
                };
                keep.then_some(b)
            })
            .collect(),
        SubTask::ObjectPosition => {
            let instruments = frame
                .instruments
                .iter()
                .map(|i| (i.category.trim(), boxed(&i.bbox)));
            let tissues = frame.tissues.iter().map(|t| (bare_tissue(&t.name), boxed(&t.bbox)));
            instruments
                .chain(tissues)
                .filter_map(|(label, bx)| {
                    let bx = bx?;
                    let mut b = Binding::default();
                    b.set("object", label);
                    b.set("position", position_of(&bx).as_str());
                    b.set_box("object", label, &bx);
                    Some(b)
                })
                .collect()
        }
        SubTask::TargetTissue => frame
            .tissues
            .iter()
            .map(|t| {
                let mut b = Binding::default();
                let name = bare_tissue(&t.name);
                b.set("tissue", name);
                if let Some(bx) = boxed(&t.bbox) {
                    b.set("position", position_of(&bx).as_str());
                    b.set_box("tissue", name, &bx);
                }
                b
            })
            .collect(),
        SubTask::Description => vec![],
    }
}

struct Candidate {
    key: Vec<String>,
    answer: String,
    binding: Binding,
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Render every applicable binding of every template in `templates`.
fn instantiate_templates<'t>(
    frame: &FrameAnnotation,
    templates: impl Iterator<Item = &'t QATemplate>,
    seed: u64,
    numerals: Numerals,
) -> Result<Generated<Vec<InstructionRecord>>, GenerationError> {
    let mut out = Generated::new(Vec::new());
    for t in templates {
        t.check_slots()?;
        let question_slots: Vec<String> = t.question_slots().into_iter().collect();
        let all_slots = t.slots();

        let mut candidates: Vec<Candidate> = Vec::new();
        for binding in bindings(frame, t.subtask, numerals) {
            if !all_slots.iter().all(|s| binding.values.contains_key(s.as_str())) {
                continue;
            }
            let answer = fill(&t.answer, |s| binding.get(s)).expect("slots checked");
            let key = question_slots
                .iter()
                .map(|s| binding.get(s).unwrap_or_default().to_string())
                .collect();
            candidates.push(Candidate {
                key,
                answer,
                binding,
            });
        }

        // a question that two objects would answer differently is dropped
        let mut by_key: BTreeMap<&[String], Vec<&Candidate>> = BTreeMap::new();
        for c in &candidates {
            by_key.entry(&c.key).or_default().push(c);
        }
        let mut k = 0;
        for c in &candidates {
            let group = &by_key[c.key.as_slice()];
            if group.iter().any(|o| o.answer != c.answer) {
                continue;
            }
            if !std::ptr::eq(group[0], c) {
                continue;
            }
            if t.paradigm == ConversationParadigm::SinglePhrase
                && word_count(&c.answer) > SINGLE_PHRASE_MAX_WORDS
            {
                out.warnings.push(format!(
                    "frame {}: template {} answer `{}` exceeds {SINGLE_PHRASE_MAX_WORDS} words; skipped",
                    frame.frame_id, t.template_id, c.answer
                ));
                continue;
            }
            let mut rng = keyed_rng(seed, &[&frame.frame_id, &t.template_id, &c.key.join("\u{1f}")]);
            let pattern = &t.questions[rng.random_range(0..t.questions.len())];
            let question = fill(pattern, |s| c.binding.get(s)).expect("slots checked");
            let question = append_task_prompt(&question, t.paradigm);
            out.value.push(InstructionRecord {
                record_id: format!("{}/{}/{}", frame.frame_id, t.template_id, k),
                frame_id: frame.frame_id.clone(),
                source: frame.source.clone(),
                paradigm: t.paradigm,
                subtask: t.subtask,
                template_id: Some(t.template_id.clone()),
                turns: vec![
                    Turn::human(question).with_boxes(c.binding.boxes_in(pattern)),
                    Turn::assistant(c.answer.clone()).with_boxes(c.binding.boxes_in(&t.answer)),
                ],
                provenance: Provenance::Template,
            });
            k += 1;
        }
    }
    Ok(out)
}

fn source_qa_records(frame: &FrameAnnotation) -> Generated<Vec<InstructionRecord>> {
    let mut out = Generated::new(Vec::new());
    let source = if frame.source.is_empty() { "source" } else { frame.source.as_str() };
    for (i, qa) in frame.source_qa.iter().enumerate() {
        let (paradigm, kind) = match qa.kind {
            SourceQaKind::Classification => (ConversationParadigm::SinglePhrase, "classification"),
            SourceQaKind::Sentence => (ConversationParadigm::VisualQA, "sentence"),
        };
        if paradigm == ConversationParadigm::SinglePhrase
            && word_count(&qa.answer) > SINGLE_PHRASE_MAX_WORDS
        {
            out.warnings.push(format!(
                "frame {}: source answer `{}` exceeds {SINGLE_PHRASE_MAX_WORDS} words; skipped",
                frame.frame_id, qa.answer
            ));
            continue;
        }
        let template_id = format!("{source}.{kind}.{}", qa.subtask.code());
        out.value.push(InstructionRecord {
            record_id: format!("{}/{template_id}/{i}", frame.frame_id),
            frame_id: frame.frame_id.clone(),
            source: frame.source.clone(),
            paradigm,
            subtask: qa.subtask,
            template_id: Some(template_id),
            turns: vec![
                Turn::human(append_task_prompt(&qa.question, paradigm)),
                Turn::assistant(qa.answer.clone()),
            ],
            provenance: Provenance::Template,
        });
    }
    out
}

/// Single Phrase and Grounding QA records for one frame.
///
/// Frames without any box only yield their source QA pairs (Single Phrase
/// for classification answers, Visual QA for sentence answers).
pub fn instantiate(
    frame: &FrameAnnotation,
    templates: &TemplateSet,
    seed: u64,
) -> Result<Vec<InstructionRecord>, GenerationError> {
    instantiate_with(frame, templates, seed, Numerals::Words).map(|g| g.value)
}

pub(crate) fn instantiate_with(
    frame: &FrameAnnotation,
    templates: &TemplateSet,
    seed: u64,
    numerals: Numerals,
) -> Result<Generated<Vec<InstructionRecord>>, GenerationError> {
    let mut out = source_qa_records(frame);
    if frame.is_grounded() {
        let generated = instantiate_templates(
            frame,
            templates.templates.iter().filter(|t| {
                matches!(
                    t.paradigm,
                    ConversationParadigm::SinglePhrase | ConversationParadigm::GroundingQA
                )
            }),
            seed,
            numerals,
        )?;
        out.value.extend(generated.value);
        out.warnings.extend(generated.warnings);
    }
    Ok(out)
}

/// Region Based QA records: the question embeds the queried object's box,
/// the answer carries none.
pub fn derive_region_based(
    frame: &FrameAnnotation,
    templates: &TemplateSet,
    seed: u64,
) -> Result<Vec<InstructionRecord>, GenerationError> {
    if !frame.is_grounded() {
        return Ok(vec![]);
    }
    instantiate_templates(
        frame,
        templates.for_paradigm(ConversationParadigm::RegionBasedQA),
        seed,
        Numerals::Words,
    )
    .map(|g| g.value)
}

const ELABORATE_INSTRUCTION: &str = "Rewrite the short answer as one complete sentence about the \
surgical image. Keep the answer phrase verbatim and do not add bounding boxes.";

const DESCRIBE_INSTRUCTION: &str = "Rewrite the draft into a fluent description of the surgical \
image. Keep every bracketed bounding box and mention every instrument, motion, direction and tissue.";

fn is_sentence(s: &str) -> bool {
    let s = s.trim();
    let starts = s.chars().next().is_some_and(|c| c.is_uppercase() || c.is_ascii_digit());
    starts && s.ends_with(['.', '!', '?']) && !s.contains('\n')
}

/// Turn a Single Phrase record into a Visual QA record whose answer is a
/// full sentence containing the original phrase.
pub fn elaborate_visual_qa(
    record: &InstructionRecord,
    frame: &FrameAnnotation,
    enricher: &dyn EnrichmentClient,
) -> Result<Generated<InstructionRecord>, GenerationError> {
    if record.paradigm != ConversationParadigm::SinglePhrase {
        return Err(GenerationError::Precondition(format!(
            "record {} is {}, expected single_phrase",
            record.record_id, record.paradigm
        )));
    }
    if record.frame_id != frame.frame_id {
        return Err(GenerationError::Precondition(format!(
            "record {} belongs to frame {}, not {}",
            record.record_id, record.frame_id, frame.frame_id
        )));
    }
    let (question, answer) = match (record.question(), record.answer()) {
        (Some(q), Some(a)) => (strip_task_prompt(q).to_string(), a.to_string()),
        _ => {
            return Err(GenerationError::Precondition(format!(
                "record {} has no question/answer pair",
                record.record_id
            )))
        }
    };

    let mut out_warnings = Vec::new();
    let needle = loose_text(&answer);
    let accept = |text: &str| {
        is_sentence(text)
            && loose_text(text).contains(&needle)
            && parse_grounding(text).boxes.is_empty()
            && !text.contains('[')
    };
    let (text, provenance) = match enricher.rewrite(ELABORATE_INSTRUCTION, record) {
        Ok(text) if accept(&text) => (text, Provenance::Enriched),
        Ok(text) => {
            out_warnings.push(format!(
                "record {}: enriched answer `{text}` rejected; using template sentence",
                record.record_id
            ));
            (StubEnricher::sentence(record.subtask, &answer), Provenance::Template)
        }
        Err(e) => {
            out_warnings.push(format!("record {}: {e}; using template sentence", record.record_id));
            (StubEnricher::sentence(record.subtask, &answer), Provenance::Template)
        }
    };
    Ok(Generated {
        value: InstructionRecord {
            record_id: format!("{}+vqa", record.record_id),
            frame_id: record.frame_id.clone(),
            source: record.source.clone(),
            paradigm: ConversationParadigm::VisualQA,
            subtask: record.subtask,
            template_id: record.template_id.as_ref().map(|t| format!("{t}+vqa")),
            turns: vec![Turn::human(question), Turn::assistant(text)],
            provenance,
        },
        warnings: out_warnings,
    })
}

struct DescribedObject {
    label: String,
    bbox: Option<BoundingBox>,
}

fn description_draft(frame: &FrameAnnotation) -> (String, Vec<DescribedObject>) {
    let n = frame.instrument_count();
    let mut sentences = vec![match n {
        1 => "There is one instrument in the image.".to_string(),
        n => format!("There are {} instruments in the image.", number_word(n)),
    }];
    let mut objects = Vec::new();
    for inst in &frame.instruments {
        let label = inst.category.trim();
        let bbox = inst.bbox.filter(renderable);
        let mut s = match &bbox {
            Some(b) => format!(
                "The {} is located at the {} of the image",
                render_grounding(label, b),
                position_of(b)
            ),
            None => format!("The {label} is visible"),
        };
        if let Some(m) = &inst.motion {
            s.push_str(&format!(", performing {}", m.trim()));
        }
        if let Some(d) = inst.direction {
            s.push_str(&format!(" while moving {d}"));
        }
        s.push('.');
        sentences.push(s);
        objects.push(DescribedObject {
            label: label.to_string(),
            bbox,
        });
    }
    for t in &frame.tissues {
        let name = bare_tissue(&t.name);
        let bbox = t.bbox.filter(renderable);
        sentences.push(match &bbox {
            Some(b) => format!("The {} is the target tissue.", render_grounding(name, b)),
            None => format!("The target tissue is the {name}."),
        });
        objects.push(DescribedObject {
            label: name.to_string(),
            bbox,
        });
    }
    if let Some(phase) = &frame.phase {
        sentences.push(format!("The current surgical phase is {}.", phase.trim()));
    }
    if let Some(seed) = &frame.description_seed {
        let seed = seed.trim();
        if !seed.is_empty() {
            let mut seed = seed.replace('\n', " ");
            if !seed.ends_with(['.', '!', '?']) {
                seed.push('.');
            }
            sentences.push(seed);
        }
    }
    (sentences.join(" "), objects)
}

/// Attributes of `frame` that `text` fails to mention.
pub(crate) fn missing_attributes(frame: &FrameAnnotation, text: &str) -> Vec<String> {
    let hay = loose_text(text);
    let mut missing = Vec::new();
    let n = frame.instrument_count();
    if !hay.contains(&number_word(n)) && !hay.contains(&n.to_string()) {
        missing.push(format!("instrument count {n}"));
    }
    let mut need = |what: &str, value: &str| {
        let v = loose_text(value);
        if !v.is_empty() && !hay.contains(&v) {
            missing.push(format!("{what} `{value}`"));
        }
    };
    for inst in &frame.instruments {
        need("instrument", &inst.category);
        if let Some(m) = &inst.motion {
            need("motion", m);
        }
        if let Some(d) = inst.direction {
            need("direction", d.as_str());
        }
    }
    for t in &frame.tissues {
        need("tissue", bare_tissue(&t.name));
    }
    let parsed = parse_grounding(text).boxes;
    let boxes = frame
        .instruments
        .iter()
        .map(|i| (&i.category, i.bbox))
        .chain(frame.tissues.iter().map(|t| (&t.name, t.bbox)));
    for (label, b) in boxes {
        let Some(b) = b.filter(renderable) else { continue };
        let found = parsed.iter().any(|p| {
            p.bbox
                .to_array()
                .iter()
                .zip(b.to_array())
                .all(|(x, y)| (x - y).abs() <= 0.005 + 1e-9)
        });
        if !found {
            missing.push(format!("grounding for `{label}`"));
        }
    }
    missing
}

/// One grounded paragraph covering every attribute of the frame.
pub fn assemble_detailed_description(
    frame: &FrameAnnotation,
    templates: &TemplateSet,
    seed: u64,
    enricher: &dyn EnrichmentClient,
) -> Result<Generated<InstructionRecord>, GenerationError> {
    if !frame.is_grounded() {
        return Err(GenerationError::ParadigmUnavailable {
            frame_id: frame.frame_id.clone(),
            paradigm: ConversationParadigm::DetailedDescription,
            reason: "frame has no bounding boxes".into(),
        });
    }
    let template = templates.for_paradigm(ConversationParadigm::DetailedDescription).next();
    let (template_id, question) = match template {
        Some(t) => {
            t.check_slots()?;
            let mut rng = keyed_rng(seed, &[&frame.frame_id, &t.template_id]);
            let q = t.questions[rng.random_range(0..t.questions.len())].clone();
            (t.template_id.clone(), q)
        }
        None => (
            "detailed_description.builtin".to_string(),
            "Describe the image in detail.".to_string(),
        ),
    };
    let (draft, objects) = description_draft(frame);
    let boxes: Vec<GroundedBox> = objects
        .iter()
        .filter_map(|o| {
            o.bbox.map(|bbox| GroundedBox {
                label: o.label.clone(),
                bbox,
            })
        })
        .collect();
    let mut record = InstructionRecord {
        record_id: format!("{}/{}/0", frame.frame_id, template_id),
        frame_id: frame.frame_id.clone(),
        source: frame.source.clone(),
        paradigm: ConversationParadigm::DetailedDescription,
        subtask: SubTask::Description,
        template_id: Some(template_id),
        turns: vec![
            Turn::human(question),
            Turn::assistant(draft.clone()).with_boxes(boxes),
        ],
        provenance: Provenance::Template,
    };
    let mut warnings = Vec::new();
    match enricher.rewrite(DESCRIBE_INSTRUCTION, &record) {
        Ok(text) => {
            let missing = missing_attributes(frame, &text);
            if missing.is_empty() && is_sentence(&text) {
                if text != draft {
                    record.turns[1].boxes = parse_grounding(&text).boxes;
                }
                record.turns[1].text = text;
                record.provenance = Provenance::Enriched;
            } else {
                warnings.push(format!(
                    "record {}: enriched description dropped ({}); keeping template draft",
                    record.record_id,
                    if missing.is_empty() { "not a sentence".to_string() } else { missing.join(", ") }
                ));
            }
        }
        Err(e) => warnings.push(format!(
            "record {}: {e}; keeping template draft",
            record.record_id
        )),
    }
    Ok(Generated {
        value: record,
        warnings,
    })
}

/// Group a frame's Visual QA records into conversations of up to
/// `max_pairs` turns, ordered observation, then operation, then analysis.
pub fn assemble_multi_turn(records: &[InstructionRecord], max_pairs: usize) -> Vec<InstructionRecord> {
    let max_pairs = max_pairs.clamp(1, 5);
    let mut by_frame: BTreeMap<&str, Vec<&InstructionRecord>> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.paradigm == ConversationParadigm::VisualQA && r.turns.len() == 2)
    {
        by_frame.entry(&r.frame_id).or_default().push(r);
    }
    let mut out = Vec::new();
    for (frame_id, mut group) in by_frame {
        group.sort_by(|a, b| {
            (a.subtask.level(), a.subtask, &a.record_id).cmp(&(b.subtask.level(), b.subtask, &b.record_id))
        });
        for (k, chunk) in group.chunks(max_pairs).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let turns = chunk.iter().flat_map(|r| r.turns.iter().cloned()).collect();
            let provenance = if chunk.iter().all(|r| r.provenance == Provenance::Enriched) {
                Provenance::Enriched
            } else {
                Provenance::Template
            };
            out.push(InstructionRecord {
                record_id: format!("{frame_id}/multi_turn/{k}"),
                frame_id: frame_id.to_string(),
                source: chunk[0].source.clone(),
                paradigm: ConversationParadigm::VisualQA,
                subtask: chunk[0].subtask,
                template_id: None,
                turns,
                provenance,
            });
        }
    }
    out
}
