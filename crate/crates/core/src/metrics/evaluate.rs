use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{
    ap_at_50, accuracy, bleu, cider, judge_score, macro_f1, mean_iou, meteor, rouge, EvalPair,
    JudgeClient, Metric, MetricError, RougeVariant,
};
use crate::annotations::BoundingBox;
use crate::generation::{parse_grounding, ConversationParadigm, InstructionRecord, Role, SubTask};

/// One model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub record_id: String,
    pub text: String,
}

/// Ground truth for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub record_id: String,
    pub paradigm: ConversationParadigm,
    pub subtask: SubTask,
    pub text: String,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
}

impl From<&InstructionRecord> for Reference {
    fn from(r: &InstructionRecord) -> Self {
        let last = r.turns.iter().rev().find(|t| t.role == Role::Assistant);
        let text = last.map(|t| t.text.clone()).unwrap_or_default();
        // the box as written in the reference text, which is what a model sees
        let bbox = parse_grounding(&text)
            .boxes
            .first()
            .map(|b| b.bbox)
            .or_else(|| last.and_then(|t| t.boxes.first().map(|b| b.bbox)));
        Self {
            record_id: r.record_id.clone(),
            paradigm: r.paradigm,
            subtask: r.subtask,
            text,
            bbox,
        }
    }
}

fn parse_err(file: &str, line: usize, message: impl ToString) -> MetricError {
    MetricError::Parse {
        file: file.to_string(),
        line,
        message: message.to_string(),
    }
}

/// Transcript lines `{"record_id", "text"}`.
pub fn read_transcript<R: BufRead>(reader: R) -> Result<Vec<TranscriptLine>, MetricError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err("transcript", i + 1, e))?);
    }
    Ok(out)
}

/// Reference lines: either full corpus records or flat
/// `{"record_id", "paradigm", "subtask", "text", "box"?}` objects.
pub fn read_references<R: BufRead>(reader: R) -> Result<Vec<Reference>, MetricError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err("references", i + 1, e))?;
        let r = if value.get("turns").is_some() {
            let rec: InstructionRecord =
                serde_json::from_value(value).map_err(|e| parse_err("references", i + 1, e))?;
            Reference::from(&rec)
        } else {
            serde_json::from_value(value).map_err(|e| parse_err("references", i + 1, e))?
        };
        if r.text.trim().is_empty() {
            return Err(parse_err("references", i + 1, "empty reference text"));
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Restrict the battery; `None` reports every applicable metric.
    pub metrics: Option<BTreeSet<Metric>>,
    /// Largest tolerated fraction of unmatched record ids.
    pub max_unmatched: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metrics: None,
            max_unmatched: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportGroup {
    pub paradigm: ConversationParadigm,
    /// `None` aggregates every sub-task of the paradigm.
    pub subtask: Option<SubTask>,
    pub pairs: usize,
    /// `None` marks a requested metric that does not apply to this paradigm
    /// or could not be computed.
    pub scores: BTreeMap<Metric, Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_coverage: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub groups: Vec<ReportGroup>,
    pub pairs: usize,
    pub unmatched: Vec<String>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn group(&self, paradigm: ConversationParadigm, subtask: Option<SubTask>) -> Option<&ReportGroup> {
        self.groups
            .iter()
            .find(|g| g.paradigm == paradigm && g.subtask == subtask)
    }

    /// Plain-text rendering, one block per paradigm.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut current = None;
        for g in &self.groups {
            let metrics: Vec<Metric> = g.scores.keys().copied().collect();
            if current != Some(g.paradigm) {
                current = Some(g.paradigm);
                if !out.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "{}", g.paradigm.display_name());
                let _ = write!(out, "  {:<12} {:>6}", "sub-task", "n");
                for m in &metrics {
                    let _ = write!(out, " {:>11}", m.name());
                }
                out.push('\n');
            }
            let label = g.subtask.map_or("all", |s| s.code());
            let _ = write!(out, "  {label:<12} {:>6}", g.pairs);
            for m in &metrics {
                let cell = match g.scores[m] {
                    Some(v) if *m == Metric::Cider => format!("{v:.4}"),
                    Some(v) => format!("{v:.2}"),
                    None => "n/a".to_string(),
                };
                let _ = write!(out, " {cell:>11}");
            }
            if let Some(c) = g.judge_coverage.filter(|c| *c < 1.0) {
                let _ = write!(out, "  (judge coverage {c:.2})");
            }
            out.push('\n');
        }
        if !self.unmatched.is_empty() {
            let _ = writeln!(out, "\nunmatched record ids: {}", self.unmatched.len());
        }
        out
    }
}

/// Scores per metric plus the judge's coverage, when it ran.
type GroupScores = (BTreeMap<Metric, Option<f64>>, Option<f64>);

fn score_group(
    pairs: &[EvalPair],
    paradigm: ConversationParadigm,
    wanted: &[Metric],
    judge: &dyn JudgeClient,
    warnings: &mut Vec<String>,
) -> Result<GroupScores, MetricError> {
    let applicable = Metric::for_paradigm(paradigm);
    let mut scores = BTreeMap::new();
    let mut coverage = None;
    for &m in wanted {
        if !applicable.contains(&m) {
            scores.insert(m, None);
            continue;
        }
        let value = match m {
            Metric::Accuracy => Some(accuracy(pairs)?),
            Metric::FScore => Some(macro_f1(pairs)?),
            Metric::Ap50 | Metric::MeanIou => {
                let s = if m == Metric::Ap50 { ap_at_50(pairs) } else { mean_iou(pairs) };
                match s {
                    Ok(s) => {
                        warnings.extend(s.warnings);
                        Some(s.value)
                    }
                    Err(MetricError::Empty(_)) => {
                        warnings.push(format!("{}: no reference boxes", m.name()));
                        None
                    }
                    Err(e) => return Err(e),
                }
            }
            Metric::Bleu3 => Some(bleu(pairs, 3)?),
            Metric::Bleu4 => Some(bleu(pairs, 4)?),
            Metric::Cider => Some(cider(pairs)?),
            Metric::Meteor => Some(meteor(pairs)?),
            Metric::Rouge1 => Some(rouge(pairs, RougeVariant::One)?),
            Metric::RougeL => Some(rouge(pairs, RougeVariant::L)?),
            Metric::Judge => {
                let out = judge_score(pairs, judge)?;
                coverage = Some(out.coverage);
                out.score
            }
        };
        scores.insert(m, value);
    }
    Ok((scores, coverage))
}

/// Join transcript and references on record id and score each
/// (paradigm, sub-task) bucket with the metrics that apply to it. Input
/// order does not affect the result.
pub fn evaluate(
    transcript: &[TranscriptLine],
    references: &[Reference],
    config: &EvalConfig,
    judge: &dyn JudgeClient,
) -> Result<MetricReport, MetricError> {
    let mut predictions: BTreeMap<&str, &str> = BTreeMap::new();
    for t in transcript {
        if predictions.insert(&t.record_id, &t.text).is_some() {
            return Err(MetricError::DuplicateId(t.record_id.clone()));
        }
    }
    let mut refs: BTreeMap<&str, &Reference> = BTreeMap::new();
    for r in references {
        if refs.insert(&r.record_id, r).is_some() {
            return Err(MetricError::DuplicateId(r.record_id.clone()));
        }
    }
    let mut unmatched: Vec<String> = refs
        .keys()
        .filter(|id| !predictions.contains_key(*id))
        .chain(predictions.keys().filter(|id| !refs.contains_key(*id)))
        .map(|s| s.to_string())
        .collect();
    unmatched.sort();
    let total = refs.len().max(predictions.len()).max(1);
    if unmatched.len() as f64 > config.max_unmatched * total as f64 {
        return Err(MetricError::Unmatched {
            unmatched: unmatched.len(),
            total,
            ids: unmatched,
        });
    }

    let mut buckets: BTreeMap<(ConversationParadigm, SubTask), Vec<EvalPair>> = BTreeMap::new();
    for (id, r) in &refs {
        let Some(pred) = predictions.get(id) else { continue };
        let reference_box = r.bbox.or_else(|| parse_grounding(&r.text).boxes.first().map(|b| b.bbox));
        buckets.entry((r.paradigm, r.subtask)).or_default().push(EvalPair {
            record_id: id.to_string(),
            paradigm: r.paradigm,
            subtask: r.subtask,
            reference: r.text.clone(),
            reference_box,
            prediction: pred.to_string(),
        });
    }

    let mut report = MetricReport {
        unmatched,
        ..Default::default()
    };
    let mut by_paradigm: BTreeMap<ConversationParadigm, Vec<EvalPair>> = BTreeMap::new();
    for ((paradigm, subtask), pairs) in &buckets {
        let wanted = wanted_metrics(config, *paradigm);
        let (scores, judge_coverage) = score_group(pairs, *paradigm, &wanted, judge, &mut report.warnings)?;
        report.pairs += pairs.len();
        report.groups.push(ReportGroup {
            paradigm: *paradigm,
            subtask: Some(*subtask),
            pairs: pairs.len(),
            scores,
            judge_coverage,
        });
        by_paradigm.entry(*paradigm).or_default().extend(pairs.iter().cloned());
    }
    for (paradigm, mut pairs) in by_paradigm {
        pairs.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        let wanted = wanted_metrics(config, paradigm);
        let mut scratch = Vec::new();
        let (scores, judge_coverage) = score_group(&pairs, paradigm, &wanted, judge, &mut scratch)?;
        let at = report
            .groups
            .iter()
            .rposition(|g| g.paradigm == paradigm)
            .map_or(report.groups.len(), |i| i + 1);
        report.groups.insert(
            at,
            ReportGroup {
                paradigm,
                subtask: None,
                pairs: pairs.len(),
                scores,
                judge_coverage,
            },
        );
    }
    Ok(report)
}

fn wanted_metrics(config: &EvalConfig, paradigm: ConversationParadigm) -> Vec<Metric> {
    match &config.metrics {
        Some(set) => set.iter().copied().collect(),
        None => Metric::for_paradigm(paradigm).to_vec(),
    }
}
