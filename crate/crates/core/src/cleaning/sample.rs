use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{CleaningError, ReviewSession};
use crate::generation::{ConversationParadigm, InstructionRecord, SubTask};
use crate::util::{keyed_rng, sha256_hex};

pub const DEFAULT_RATIO: f64 = 0.2;

/// Content digest of a corpus in its current order.
pub fn corpus_digest(corpus: &[InstructionRecord]) -> String {
    sha256_hex(
        corpus
            .iter()
            .map(|r| serde_json::to_vec(r).expect("records always serialize")),
    )
}

type Stratum = (ConversationParadigm, SubTask);

pub fn stratum_counts<'a>(
    records: impl IntoIterator<Item = &'a InstructionRecord>,
) -> BTreeMap<Stratum, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry((r.paradigm, r.subtask)).or_insert(0) += 1;
    }
    counts
}

fn sample_size(ratio: f64, n: usize) -> usize {
    // guard against 0.2 * 100 landing a hair above 20
    ((ratio * n as f64 - 1e-9).ceil().max(1.0) as usize).min(n)
}

/// Split `total` across strata proportionally (largest remainder), so each
/// stratum receives floor or ceil of its quota.
fn allocate(sizes: &BTreeMap<Stratum, usize>, ratio: f64, total: usize) -> BTreeMap<Stratum, usize> {
    let mut alloc: BTreeMap<Stratum, usize> = BTreeMap::new();
    let mut fractions = Vec::new();
    for (&key, &size) in sizes {
        let quota = ratio * size as f64;
        let base = (quota.floor() as usize).min(size);
        alloc.insert(key, base);
        fractions.push((quota - quota.floor(), key));
    }
    fractions.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut remaining = total.saturating_sub(alloc.values().sum());
    for (_, key) in fractions.iter().cycle().take(fractions.len() * 2) {
        if remaining == 0 {
            break;
        }
        let slot = alloc.get_mut(key).expect("allocated above");
        if *slot < sizes[key] {
            *slot += 1;
            remaining -= 1;
        }
    }
    alloc
}

/// Draw `ceil(ratio * N)` records for review, stratified by
/// (paradigm, sub-task). The result depends only on the corpus content and
/// order, the ratio and the seed.
pub fn sample_for_review(
    corpus: &[InstructionRecord],
    ratio: f64,
    seed: u64,
) -> Result<ReviewSession, CleaningError> {
    if corpus.is_empty() {
        return Err(CleaningError::EmptyCorpus);
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(CleaningError::InvalidRatio(ratio));
    }
    let mut strata: BTreeMap<Stratum, Vec<usize>> = BTreeMap::new();
    for (i, r) in corpus.iter().enumerate() {
        strata.entry((r.paradigm, r.subtask)).or_default().push(i);
    }
    let sizes = strata.iter().map(|(k, v)| (*k, v.len())).collect();
    let total = sample_size(ratio, corpus.len());
    let alloc = allocate(&sizes, ratio, total);

    let mut picked = Vec::with_capacity(total);
    for (key, mut members) in strata {
        let mut rng = keyed_rng(seed, &["sample", key.0.code(), key.1.code()]);
        members.shuffle(&mut rng);
        picked.extend(members.into_iter().take(alloc[&key]));
    }
    picked.sort_unstable();
    picked.shuffle(&mut keyed_rng(seed, &["sample-order"]));

    Ok(ReviewSession::new(
        corpus_digest(corpus),
        picked.into_iter().map(|i| corpus[i].record_id.clone()).collect(),
        seed,
        ratio,
    ))
}
