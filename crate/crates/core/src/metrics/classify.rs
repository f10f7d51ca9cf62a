use std::collections::BTreeMap;

use super::{EvalPair, MetricError};

const NUMBER_WORDS: [&str; 11] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// Canonical form for exact-match scoring: lowercase, single spaces, no
/// terminal punctuation, small numbers as digits.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let trimmed = lower.trim().trim_end_matches(['.', '!', '?', ',', ';', ':']).trim_end();
    trimmed
        .split_whitespace()
        .map(|w| match NUMBER_WORDS.iter().position(|n| *n == w) {
            Some(i) => i.to_string(),
            None => w.to_string(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Percentage of predictions equal to their reference after normalization.
pub fn accuracy(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("accuracy"));
    }
    let hits = pairs
        .iter()
        .filter(|p| normalize_answer(&p.reference) == normalize_answer(&p.prediction))
        .count();
    Ok(100.0 * hits as f64 / pairs.len() as f64)
}

/// Macro-averaged F1 over every label seen in references or predictions.
/// A predicted label that never occurs as a reference is a class of its own
/// with F1 zero.
pub fn macro_f1(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("macro F1"));
    }
    #[derive(Default)]
    struct Counts {
        tp: usize,
        fp: usize,
        fn_: usize,
    }
    let mut classes: BTreeMap<String, Counts> = BTreeMap::new();
    for p in pairs {
        let (r, q) = (normalize_answer(&p.reference), normalize_answer(&p.prediction));
        if r == q {
            classes.entry(r).or_default().tp += 1;
        } else {
            classes.entry(r).or_default().fn_ += 1;
            classes.entry(q).or_default().fp += 1;
        }
    }
    let total: f64 = classes
        .values()
        .map(|c| {
            let denom = 2 * c.tp + c.fp + c.fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * c.tp as f64 / denom as f64
            }
        })
        .sum();
    Ok(100.0 * total / classes.len() as f64)
}
