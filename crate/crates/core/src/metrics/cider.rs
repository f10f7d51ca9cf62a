use std::collections::{BTreeMap, BTreeSet};

use super::text::{ngram_counts, tokenize};
use super::{EvalPair, MetricError};

/// Gaussian length-penalty width.
pub const CIDER_SIGMA: f64 = 6.0;
const MAX_N: usize = 4;

type Vector<'a> = [BTreeMap<&'a [String], f64>; MAX_N];

struct Weighted<'a> {
    vec: Vector<'a>,
    norm: [f64; MAX_N],
    len: usize,
}

fn weigh<'a>(tokens: &'a [String], df: &BTreeMap<&[String], usize>, log_docs: f64) -> Weighted<'a> {
    let mut vec: Vector<'a> = Default::default();
    let mut norm = [0.0; MAX_N];
    for n in 1..=MAX_N {
        for (g, tf) in ngram_counts(tokens, n) {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            let w = tf as f64 * (log_docs - d.ln());
            norm[n - 1] += w * w;
            vec[n - 1].insert(g, w);
        }
    }
    Weighted {
        vec,
        norm: norm.map(f64::sqrt),
        len: tokens.len(),
    }
}

fn similarity(hyp: &Weighted, reference: &Weighted) -> f64 {
    let delta = hyp.len as f64 - reference.len as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..MAX_N {
        let mut val: f64 = hyp.vec[n]
            .iter()
            .filter_map(|(g, &h)| reference.vec[n].get(g).map(|&r| h.min(r) * r))
            .sum();
        if hyp.norm[n] != 0.0 && reference.norm[n] != 0.0 {
            val /= hyp.norm[n] * reference.norm[n];
        }
        total += val * penalty;
    }
    total / MAX_N as f64
}

/// CIDEr-D with one reference per pair; document frequencies come from the
/// references of `pairs` themselves. Scaled to [0, 10].
pub fn cider(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("CIDEr"));
    }
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| tokenize(&p.reference)).collect();
    let hyps: Vec<Vec<String>> = pairs.iter().map(|p| tokenize(&p.prediction)).collect();

    let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
    for r in &refs {
        let mut seen = BTreeSet::new();
        for n in 1..=MAX_N {
            seen.extend(ngram_counts(r, n).into_keys());
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_docs = (refs.len() as f64).max(1.0).ln();

    let total: f64 = refs
        .iter()
        .zip(&hyps)
        .map(|(r, h)| similarity(&weigh(h, &df, log_docs), &weigh(r, &df, log_docs)))
        .sum();
    Ok(10.0 * total / pairs.len() as f64)
}
