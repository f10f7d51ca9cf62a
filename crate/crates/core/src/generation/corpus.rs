use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::enrich::EnrichmentClient;
use super::instantiate::{
    assemble_detailed_description, assemble_multi_turn, derive_region_based, elaborate_visual_qa,
    instantiate_with, Generated,
};
use super::{ConversationParadigm, GenerationError, InstructionRecord, SubTask, TemplateSet};
use crate::annotations::FrameAnnotation;
use crate::util::keyed_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Numerals {
    #[default]
    Words,
    Digits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub seed: u64,
    pub numerals: Numerals,
    /// Maximum records per frame for a paradigm; absent means unlimited.
    pub caps: BTreeMap<ConversationParadigm, usize>,
    pub paradigms: BTreeSet<ConversationParadigm>,
    /// Group Visual QA pairs of a frame into conversations of this many turns.
    pub multi_turn: Option<usize>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            numerals: Numerals::Words,
            caps: BTreeMap::new(),
            paradigms: ConversationParadigm::ALL.into_iter().collect(),
            multi_turn: None,
        }
    }
}

fn generate_frame(
    frame: &FrameAnnotation,
    templates: &TemplateSet,
    config: &GenerationConfig,
    enricher: &dyn EnrichmentClient,
) -> Result<Generated<Vec<InstructionRecord>>, GenerationError> {
    let seed = config.seed;
    let base = instantiate_with(frame, templates, seed, config.numerals)?;
    let mut warnings = base.warnings;
    let mut records = base.value;

    if frame.is_grounded() {
        if config.paradigms.contains(&ConversationParadigm::VisualQA) {
            let mut elaborated = Vec::new();
            for r in records
                .iter()
                .filter(|r| r.paradigm == ConversationParadigm::SinglePhrase)
            {
                let g = elaborate_visual_qa(r, frame, enricher)?;
                warnings.extend(g.warnings);
                elaborated.push(g.value);
            }
            records.extend(elaborated);
        }
        records.extend(derive_region_based(frame, templates, seed)?);
        if config.paradigms.contains(&ConversationParadigm::DetailedDescription) {
            let g = assemble_detailed_description(frame, templates, seed, enricher)?;
            warnings.extend(g.warnings);
            records.push(g.value);
        }
    }
    if let Some(max_pairs) = config.multi_turn {
        let multi = assemble_multi_turn(&records, max_pairs);
        records.extend(multi);
    }

    records.retain(|r| config.paradigms.contains(&r.paradigm));
    for (&paradigm, &cap) in &config.caps {
        let idx: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.paradigm == paradigm)
            .map(|(i, _)| i)
            .collect();
        if idx.len() <= cap {
            continue;
        }
        let mut chosen = idx.clone();
        chosen.shuffle(&mut keyed_rng(seed, &[&frame.frame_id, paradigm.code(), "cap"]));
        let keep: BTreeSet<usize> = chosen.into_iter().take(cap).collect();
        let drop: BTreeSet<usize> = idx.into_iter().filter(|i| !keep.contains(i)).collect();
        let mut i = 0;
        records.retain(|_| {
            let kept = !drop.contains(&i);
            i += 1;
            kept
        });
    }
    Ok(Generated {
        value: records,
        warnings,
    })
}

/// Generate the full corpus. Frames are processed in parallel on the
/// current rayon pool; output order follows input order.
pub fn generate_corpus(
    frames: &[FrameAnnotation],
    templates: &TemplateSet,
    config: &GenerationConfig,
    enricher: &dyn EnrichmentClient,
) -> Result<Generated<Vec<InstructionRecord>>, GenerationError> {
    let mut seen = BTreeSet::new();
    for f in frames {
        if !seen.insert(f.frame_id.as_str()) {
            return Err(GenerationError::Precondition(format!(
                "duplicate frame_id `{}`",
                f.frame_id
            )));
        }
    }
    let per_frame: Vec<_> = frames
        .par_iter()
        .map(|f| generate_frame(f, templates, config, enricher))
        .collect();
    let mut out = Generated {
        value: Vec::new(),
        warnings: Vec::new(),
    };
    for g in per_frame {
        let g = g?;
        out.value.extend(g.value);
        out.warnings.extend(g.warnings);
    }
    Ok(out)
}

/// Records grouped into the seven sub-task evaluation sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubtaskSplits {
    pub buckets: BTreeMap<SubTask, Vec<InstructionRecord>>,
    /// Visual QA and Region Based QA records, which no sub-task set draws from.
    pub remainder: Vec<InstructionRecord>,
}

impl SubtaskSplits {
    pub fn total(&self) -> usize {
        self.buckets.values().map(Vec::len).sum::<usize>() + self.remainder.len()
    }
}

/// Attribute sub-tasks come from Single Phrase and Grounding QA records;
/// the Description set is exactly the Detailed Description records.
pub fn derive_subtask_splits(corpus: &[InstructionRecord]) -> Result<SubtaskSplits, GenerationError> {
    let mut splits = SubtaskSplits::default();
    for r in corpus {
        let bad_tag = |msg: &str| GenerationError::Validation {
            record_id: r.record_id.clone(),
            message: msg.to_string(),
        };
        match r.paradigm {
            ConversationParadigm::SinglePhrase | ConversationParadigm::GroundingQA => {
                if r.subtask == SubTask::Description {
                    return Err(bad_tag("attribute record tagged with the Description sub-task"));
                }
                splits.buckets.entry(r.subtask).or_default().push(r.clone());
            }
            ConversationParadigm::DetailedDescription => {
                if r.subtask != SubTask::Description {
                    return Err(bad_tag("detailed description not tagged Description"));
                }
                splits.buckets.entry(SubTask::Description).or_default().push(r.clone());
            }
            ConversationParadigm::VisualQA | ConversationParadigm::RegionBasedQA => {
                splits.remainder.push(r.clone())
            }
        }
    }
    Ok(splits)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub frames: usize,
    pub records: usize,
    pub qa_pairs: usize,
    pub box_records: usize,
    pub per_paradigm: BTreeMap<ConversationParadigm, usize>,
    pub per_subtask: BTreeMap<SubTask, usize>,
    pub per_source: BTreeMap<String, usize>,
}

pub fn corpus_stats(corpus: &[InstructionRecord]) -> StatsReport {
    let mut s = StatsReport {
        per_paradigm: ConversationParadigm::ALL.iter().map(|&p| (p, 0)).collect(),
        per_subtask: SubTask::ALL.iter().map(|&t| (t, 0)).collect(),
        ..Default::default()
    };
    let mut frames = BTreeSet::new();
    for r in corpus {
        frames.insert(r.frame_id.as_str());
        s.records += 1;
        s.qa_pairs += r.turns.len() / 2;
        if r.has_boxes() {
            s.box_records += 1;
        }
        *s.per_paradigm.entry(r.paradigm).or_default() += 1;
        *s.per_subtask.entry(r.subtask).or_default() += 1;
        let source = if r.source.is_empty() { "unknown" } else { r.source.as_str() };
        *s.per_source.entry(source.to_string()).or_default() += 1;
    }
    s.frames = frames.len();
    s
}

pub fn write_corpus<W: Write>(mut w: W, records: &[InstructionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<InstructionRecord>, GenerationError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let bad = |message: String| GenerationError::CorpusSyntax {
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}
