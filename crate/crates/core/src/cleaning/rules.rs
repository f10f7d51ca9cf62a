use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{IssueTag, ReviewSession, Verdict};
use crate::generation::{parse_grounding, InstructionRecord, Role};
use crate::util::loose_text;

/// Minimum number of distinct reviewed records that must share an edit
/// before it is propagated.
pub const DEFAULT_RULE_THRESHOLD: usize = 2;

/// Longest phrase, in tokens, a replace rule may rewrite.
const MAX_PHRASE_TOKENS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RuleMatch {
    /// Word-bounded literal over assistant text.
    Phrase { text: String },
    /// Records produced by `template_id` whose final answer normalizes to `answer`.
    Record { template_id: String, answer: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RuleAction {
    Replace { with: String },
    DropRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningRule {
    pub rule_id: String,
    #[serde(rename = "match")]
    pub matcher: RuleMatch,
    pub action: RuleAction,
    pub origin: Vec<String>,
}

/// What happens to sampled records flagged by the reviewer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagPolicy {
    /// Remove the record.
    #[default]
    Drop,
    /// Keep the record, applying `edited_text` when the reviewer supplied one.
    Repair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Edited,
    Dropped,
    Replaced,
    DroppedByRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEntry {
    pub record_id: String,
    pub kind: ChangeKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rule_ids: Vec<String>,
    pub before: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub record_id: String,
    pub rule_ids: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangeLog {
    pub entries: Vec<ChangeEntry>,
    pub conflicts: Vec<Conflict>,
}

impl ChangeLog {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, kind: ChangeKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }
}

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\w[\w'-]*|[^\s\w]").unwrap());

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// The single contiguous token span in which `edited` differs from
/// `original`, as (original phrase, replacement phrase). `None` for
/// identical texts, pure insertions or deletions, and spans longer than
/// five tokens.
pub fn phrase_diff(original: &str, edited: &str) -> Option<(String, String)> {
    let a: Vec<_> = TOKEN.find_iter(original).collect();
    let b: Vec<_> = TOKEN.find_iter(edited).collect();
    let prefix = a
        .iter()
        .zip(&b)
        .take_while(|(x, y)| x.as_str() == y.as_str())
        .count();
    let max_suffix = a.len().min(b.len()) - prefix;
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take(max_suffix)
        .take_while(|(x, y)| x.as_str() == y.as_str())
        .count();
    let (a_span, b_span) = (&a[prefix..a.len() - suffix], &b[prefix..b.len() - suffix]);
    if a_span.is_empty() || b_span.is_empty() {
        return None;
    }
    if a_span.len() > MAX_PHRASE_TOKENS || b_span.len() > MAX_PHRASE_TOKENS {
        return None;
    }
    let from = &original[a_span[0].start()..a_span[a_span.len() - 1].end()];
    let to = &edited[b_span[0].start()..b_span[b_span.len() - 1].end()];
    if !from.chars().any(is_word) {
        return None;
    }
    Some((from.to_string(), to.to_string()))
}

/// Byte ranges of word-bounded, non-overlapping occurrences of `needle`.
fn find_bounded(hay: &str, needle: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if needle.is_empty() {
        return out;
    }
    let starts_word = needle.chars().next().is_some_and(is_word);
    let ends_word = needle.chars().last().is_some_and(is_word);
    let mut pos = 0;
    while let Some(off) = hay[pos..].find(needle) {
        let start = pos + off;
        let end = start + needle.len();
        let left_ok = !starts_word || !hay[..start].chars().last().is_some_and(is_word);
        let right_ok = !ends_word || !hay[end..].chars().next().is_some_and(is_word);
        if left_ok && right_ok {
            out.push((start, end));
            pos = end;
        } else {
            pos = start + hay[start..].chars().next().map_or(1, char::len_utf8);
        }
    }
    out
}

fn replace_bounded(hay: &str, from: &str, to: &str) -> String {
    let mut out = String::with_capacity(hay.len());
    let mut last = 0;
    for (s, e) in find_bounded(hay, from) {
        out.push_str(&hay[last..s]);
        out.push_str(to);
        last = e;
    }
    out.push_str(&hay[last..]);
    out
}

/// Turn recurring reviewer edits into replace rules and relevance flags
/// into drop rules.
pub fn compile_rules(
    session: &ReviewSession,
    corpus: &[InstructionRecord],
    threshold: usize,
) -> Vec<CleaningRule> {
    let by_id: BTreeMap<&str, &InstructionRecord> =
        corpus.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let mut edits: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    let mut drops: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();

    for d in session.decisions.values() {
        let Some(record) = by_id.get(d.record_id.as_str()) else { continue };
        let Some(answer) = record.answer() else { continue };
        match d.verdict {
            Verdict::Edit => {
                let Some(edited) = &d.edited_text else { continue };
                if let Some(key) = phrase_diff(answer, edited) {
                    edits.entry(key).or_default().insert(d.record_id.clone());
                }
            }
            Verdict::Flag if d.issues.contains(&IssueTag::Relevance) => {
                if let Some(t) = &record.template_id {
                    drops
                        .entry((t.clone(), loose_text(answer)))
                        .or_default()
                        .insert(d.record_id.clone());
                }
            }
            _ => {}
        }
    }

    let mut rules = Vec::new();
    for ((from, to), ids) in edits {
        if ids.len() < threshold.max(1) {
            continue;
        }
        // a replacement that re-matches its own pattern would not be idempotent
        if !find_bounded(&to, &from).is_empty() {
            log::warn!("skipping non-idempotent edit `{from}` -> `{to}`");
            continue;
        }
        rules.push((RuleMatch::Phrase { text: from }, RuleAction::Replace { with: to }, ids));
    }
    for ((template_id, answer), ids) in drops {
        rules.push((RuleMatch::Record { template_id, answer }, RuleAction::DropRecord, ids));
    }
    rules
        .into_iter()
        .enumerate()
        .map(|(i, (matcher, action, ids))| CleaningRule {
            rule_id: format!("rule-{:03}", i + 1),
            matcher,
            action,
            origin: ids.into_iter().collect(),
        })
        .collect()
}

fn set_answer(record: &mut InstructionRecord, text: &str) {
    if let Some(t) = record.turns.iter_mut().rev().find(|t| t.role == Role::Assistant) {
        t.text = text.to_string();
        t.boxes = parse_grounding(text).boxes;
    }
}

enum Outcome {
    Keep,
    Replace(InstructionRecord, Vec<String>),
    Drop(String),
    Conflict(Vec<String>, &'static str),
}

fn replace_all(record: &InstructionRecord, replaces: &[(&CleaningRule, &str, &str)]) -> (InstructionRecord, Vec<String>) {
    let mut out = record.clone();
    let mut fired = BTreeSet::new();
    for turn in out.turns.iter_mut().filter(|t| t.role == Role::Assistant) {
        let mut text = turn.text.clone();
        for (rule, from, to) in replaces {
            let next = replace_bounded(&text, from, to);
            if next != text {
                fired.insert(rule.rule_id.clone());
                text = next;
            }
        }
        if text != turn.text {
            turn.boxes = parse_grounding(&text).boxes;
            turn.text = text;
        }
    }
    (out, fired.into_iter().collect())
}

fn evaluate(record: &InstructionRecord, rules: &[CleaningRule]) -> Outcome {
    let replaces: Vec<(&CleaningRule, &str, &str)> = rules
        .iter()
        .filter_map(|r| match (&r.matcher, &r.action) {
            (RuleMatch::Phrase { text }, RuleAction::Replace { with }) => Some((r, text.as_str(), with.as_str())),
            _ => None,
        })
        .collect();
    let drop_hit = |rec: &InstructionRecord| -> Option<String> {
        rules.iter().find_map(|r| match (&r.matcher, &r.action) {
            (RuleMatch::Record { template_id, answer }, RuleAction::DropRecord)
                if rec.template_id.as_deref() == Some(template_id.as_str())
                    && rec.answer().map(loose_text).as_deref() == Some(answer.as_str()) =>
            {
                Some(r.rule_id.clone())
            }
            _ => None,
        })
    };

    // overlapping matches from different rules cannot both be honored
    for turn in record.turns.iter().filter(|t| t.role == Role::Assistant) {
        let spans: Vec<(usize, usize, &str)> = replaces
            .iter()
            .flat_map(|(r, from, _)| {
                find_bounded(&turn.text, from)
                    .into_iter()
                    .map(move |(s, e)| (s, e, r.rule_id.as_str()))
            })
            .collect();
        for (i, a) in spans.iter().enumerate() {
            for b in &spans[i + 1..] {
                if a.2 != b.2 && a.0 < b.1 && b.0 < a.1 {
                    return Outcome::Conflict(vec![a.2.to_string(), b.2.to_string()], "overlapping replacements");
                }
            }
        }
    }

    let (replaced, fired) = replace_all(record, &replaces);
    let drop_before = drop_hit(record);
    let drop_after = drop_hit(&replaced);
    if !fired.is_empty() {
        if let Some(d) = drop_before.or(drop_after) {
            let mut ids = fired;
            ids.push(d);
            return Outcome::Conflict(ids, "record matches both a drop and a replace rule");
        }
        let (again, _) = replace_all(&replaced, &replaces);
        if again != replaced {
            return Outcome::Conflict(fired, "replacements are not idempotent on this record");
        }
        return Outcome::Replace(replaced, fired);
    }
    match drop_before {
        Some(d) => Outcome::Drop(d),
        None => Outcome::Keep,
    }
}

/// Apply reviewer decisions to sampled records and `rules` to every other
/// record. Only records whose content changes or which are removed appear
/// in the log.
pub fn apply_rules(
    corpus: &[InstructionRecord],
    rules: &[CleaningRule],
    session: &ReviewSession,
    flags: FlagPolicy,
) -> (Vec<InstructionRecord>, ChangeLog) {
    let mut out = Vec::with_capacity(corpus.len());
    let mut log = ChangeLog::default();
    for record in corpus {
        let before = record.answer().unwrap_or_default().to_string();
        if session.contains(&record.record_id) {
            let Some(d) = session.decisions.get(&record.record_id) else {
                out.push(record.clone());
                continue;
            };
            let edit = match (d.verdict, flags) {
                (Verdict::Flag, FlagPolicy::Drop) => {
                    log.entries.push(ChangeEntry {
                        record_id: record.record_id.clone(),
                        kind: ChangeKind::Dropped,
                        rule_ids: vec![],
                        before,
                        after: None,
                    });
                    continue;
                }
                (Verdict::Accept, _) => None,
                _ => d.edited_text.as_deref(),
            };
            let mut rec = record.clone();
            if let Some(text) = edit.filter(|t| *t != before) {
                set_answer(&mut rec, text);
                log.entries.push(ChangeEntry {
                    record_id: record.record_id.clone(),
                    kind: ChangeKind::Edited,
                    rule_ids: vec![],
                    before,
                    after: Some(text.to_string()),
                });
            }
            out.push(rec);
            continue;
        }
        match evaluate(record, rules) {
            Outcome::Keep => out.push(record.clone()),
            Outcome::Replace(rec, rule_ids) => {
                log.entries.push(ChangeEntry {
                    record_id: record.record_id.clone(),
                    kind: ChangeKind::Replaced,
                    rule_ids,
                    before,
                    after: rec.answer().map(str::to_string),
                });
                out.push(rec);
            }
            Outcome::Drop(rule_id) => log.entries.push(ChangeEntry {
                record_id: record.record_id.clone(),
                kind: ChangeKind::DroppedByRule,
                rule_ids: vec![rule_id],
                before,
                after: None,
            }),
            Outcome::Conflict(rule_ids, reason) => {
                log.conflicts.push(Conflict {
                    record_id: record.record_id.clone(),
                    rule_ids,
                    reason: reason.to_string(),
                });
                out.push(record.clone());
            }
        }
    }
    (out, log)
}
