use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

use super::{EvalPair, MetricError};

/// Added to an empty n-gram match count (and its denominator).
pub const BLEU_EPSILON: f64 = 1e-9;

static WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[\p{L}\p{N}]+(?:['-][\p{L}\p{N}]+)*").unwrap());

/// Lowercased word tokens; punctuation is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    WORD.find_iter(&lower).map(|m| m.as_str().to_string()).collect()
}

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Corpus-level BLEU-`n` with a single reference per pair.
pub fn bleu(pairs: &[EvalPair], n: usize) -> Result<f64, MetricError> {
    if !(1..=4).contains(&n) {
        return Err(MetricError::BleuOrder(n));
    }
    if pairs.is_empty() {
        return Err(MetricError::Empty("BLEU"));
    }
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut c, mut r) = (0usize, 0usize);
    for p in pairs {
        let cand = tokenize(&p.prediction);
        let refs = tokenize(&p.reference);
        c += cand.len();
        r += refs.len();
        for k in 1..=n {
            let rc = ngram_counts(&refs, k);
            for (g, cnt) in ngram_counts(&cand, k) {
                matched[k - 1] += cnt.min(rc.get(g).copied().unwrap_or(0));
                total[k - 1] += cnt;
            }
        }
    }
    if c == 0 {
        return Ok(0.0);
    }
    let log_mean = (0..n)
        .map(|k| {
            let p = if matched[k] == 0 {
                BLEU_EPSILON / (total[k] as f64 + BLEU_EPSILON)
            } else {
                matched[k] as f64 / total[k] as f64
            };
            p.ln()
        })
        .sum::<f64>()
        / n as f64;
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(100.0 * bp * log_mean.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    One,
    L,
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn f1(overlap: usize, cand: usize, refs: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand as f64;
    let r = overlap as f64 / refs as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE F1 of one pair, in [0, 1].
pub fn rouge_pair(reference: &str, prediction: &str, variant: RougeVariant) -> f64 {
    let (refs, cand) = (tokenize(reference), tokenize(prediction));
    if refs.is_empty() || cand.is_empty() {
        return 0.0;
    }
    let overlap = match variant {
        RougeVariant::One => {
            let rc = ngram_counts(&refs, 1);
            ngram_counts(&cand, 1)
                .into_iter()
                .map(|(g, n)| n.min(rc.get(g).copied().unwrap_or(0)))
                .sum()
        }
        RougeVariant::L => lcs(&cand, &refs),
    };
    f1(overlap, cand.len(), refs.len())
}

/// Mean per-pair ROUGE F1, scaled to [0, 100].
pub fn rouge(pairs: &[EvalPair], variant: RougeVariant) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("ROUGE"));
    }
    let sum: f64 = pairs
        .iter()
        .map(|p| rouge_pair(&p.reference, &p.prediction, variant))
        .sum();
    Ok(100.0 * sum / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens() {
        assert_eq!(tokenize("The Right-bottom corner, isn't it?"), ["the", "right-bottom", "corner", "isn't", "it"]);
    }

    #[test]
    fn rouge_hand_values() {
        assert!((rouge_pair("a b c", "a c b", RougeVariant::One) - 1.0).abs() < 1e-12);
        assert!((rouge_pair("a b c", "a c b", RougeVariant::L) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_pair("a b", "c d", RougeVariant::L), 0.0);
        assert_eq!(rouge_pair("a b", "", RougeVariant::One), 0.0);
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let same = [EvalPair::text("the grasper is idle now", "the grasper is idle now")];
        assert!((bleu(&same, 4).unwrap() - 100.0).abs() < 1e-9);
        let disjoint = [EvalPair::text("a b c d", "w x y z")];
        assert!(bleu(&disjoint, 4).unwrap() <= 1e-3);
        assert!(bleu(&same, 5).is_err());
    }
}
