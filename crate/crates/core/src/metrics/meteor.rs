use porter_stemmer::stem;
use rayon::prelude::*;

use super::text::tokenize;
use super::{EvalPair, MetricError};

/// Search nodes visited per matching stage. Small inputs are solved
/// exactly well within it; beyond it the best alignment found so far is kept.
const SEARCH_BUDGET: usize = 50_000;

type Alignment = Vec<(usize, usize)>;

fn chunks(align: &[(usize, usize)]) -> usize {
    let mut sorted = align.to_vec();
    sorted.sort_unstable();
    let mut count = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(h, r) in &sorted {
        match prev {
            Some((ph, pr)) if h == ph + 1 && r == pr + 1 => {}
            _ => count += 1,
        }
        prev = Some((h, r));
    }
    count
}

struct Search<'a> {
    hyp: &'a [String],
    refs: &'a [String],
    fixed: &'a [(usize, usize)],
    /// Unaligned hypothesis positions, in order.
    open_h: Vec<usize>,
    used_r: Vec<bool>,
    current: Alignment,
    /// Chunks among `current` alone; with nothing fixed this only grows as
    /// positions are assigned left to right, so it bounds the search.
    partial_chunks: usize,
    best: Option<(usize, usize, Alignment)>,
    nodes: usize,
}

impl Search<'_> {
    fn remaining_ref(&self, key: &str) -> usize {
        self.refs
            .iter()
            .enumerate()
            .filter(|(j, t)| !self.used_r[*j] && t.as_str() == key)
            .count()
    }

    fn pruned(&self) -> bool {
        self.fixed.is_empty()
            && self
                .best
                .as_ref()
                .is_some_and(|(_, bc, _)| self.partial_chunks >= *bc)
    }

    fn run(&mut self, k: usize) {
        self.nodes += 1;
        if self.nodes > SEARCH_BUDGET || self.pruned() {
            return;
        }
        if k == self.open_h.len() {
            let m = self.current.len();
            let ch = if self.fixed.is_empty() {
                self.partial_chunks
            } else {
                let mut all = self.fixed.to_vec();
                all.extend_from_slice(&self.current);
                chunks(&all)
            };
            let better = match &self.best {
                None => true,
                Some((bm, bc, _)) => m > *bm || (m == *bm && ch < *bc),
            };
            if better {
                self.best = Some((m, ch, self.current.clone()));
            }
            return;
        }
        let i = self.open_h[k];
        let key = self.hyp[i].as_str();
        let later_same = self.open_h[k + 1..]
            .iter()
            .filter(|&&h| self.hyp[h] == key)
            .count();
        let available = self.remaining_ref(key);
        for j in 0..self.refs.len() {
            if self.used_r[j] || self.refs[j] != key {
                continue;
            }
            let extends = self
                .current
                .last()
                .is_some_and(|&(ph, pr)| i == ph + 1 && j == pr + 1);
            let added = usize::from(!extends);
            self.used_r[j] = true;
            self.current.push((i, j));
            self.partial_chunks += added;
            self.run(k + 1);
            self.partial_chunks -= added;
            self.current.pop();
            self.used_r[j] = false;
        }
        // skipping keeps the matching maximal only if later tokens can absorb the supply
        if available <= later_same {
            self.run(k + 1);
        }
    }
}

/// Left-to-right alignment that continues the previous chunk when it can.
/// It never skips a matchable token, so it is a maximum matching.
fn greedy(hyp: &[String], refs: &[String], fixed: &[(usize, usize)]) -> Alignment {
    let mut used_h = vec![false; hyp.len()];
    let mut used_r = vec![false; refs.len()];
    for &(h, r) in fixed {
        used_h[h] = true;
        used_r[r] = true;
    }
    let mut out: Alignment = Vec::new();
    for (i, t) in hyp.iter().enumerate() {
        if used_h[i] {
            continue;
        }
        let next = out
            .last()
            .filter(|&&(ph, _)| ph + 1 == i)
            .map(|&(_, pr)| pr + 1)
            .filter(|&j| j < refs.len() && !used_r[j] && refs[j] == *t);
        if let Some(j) = next.or_else(|| (0..refs.len()).find(|&j| !used_r[j] && refs[j] == *t)) {
            used_r[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// One matching stage over keyed tokens: a maximum matching between
/// still-unaligned positions that, among all maximum matchings, yields the
/// fewest chunks together with `fixed`.
fn stage(hyp: &[String], refs: &[String], fixed: &[(usize, usize)]) -> Alignment {
    let mut used_r = vec![false; refs.len()];
    let mut used_h = vec![false; hyp.len()];
    for &(h, r) in fixed {
        used_h[h] = true;
        used_r[r] = true;
    }
    let open_h: Vec<usize> = (0..hyp.len())
        .filter(|&i| !used_h[i] && refs.iter().enumerate().any(|(j, t)| !used_r[j] && *t == hyp[i]))
        .collect();
    let seed = greedy(hyp, refs, fixed);
    let mut all = fixed.to_vec();
    all.extend_from_slice(&seed);
    let mut s = Search {
        hyp,
        refs,
        fixed,
        open_h,
        used_r,
        current: Vec::new(),
        partial_chunks: 0,
        best: Some((seed.len(), chunks(&all), seed)),
        nodes: 0,
    };
    s.run(0);
    if s.nodes > SEARCH_BUDGET {
        log::debug!("alignment search budget exhausted; keeping the best alignment found");
    }
    s.best.map(|b| b.2).unwrap_or_default()
}

/// METEOR of one pair in [0, 1]: exact then stem matching, no synonyms.
pub fn meteor_pair(reference: &str, prediction: &str) -> f64 {
    let hyp = tokenize(prediction);
    let refs = tokenize(reference);
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut align = stage(&hyp, &refs, &[]);
    let hyp_stem: Vec<String> = hyp.iter().map(|t| stem(t)).collect();
    let ref_stem: Vec<String> = refs.iter().map(|t| stem(t)).collect();
    let stemmed = stage(&hyp_stem, &ref_stem, &align);
    align.extend(stemmed);

    let m = align.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / refs.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let ch = chunks(&align);
    // a complete single-chunk alignment carries no fragmentation penalty
    if ch == 1 && m == hyp.len() && m == refs.len() {
        return fmean;
    }
    let frag = ch as f64 / m as f64;
    fmean * (1.0 - 0.5 * frag.powi(3))
}

/// Mean per-pair METEOR, scaled to [0, 100].
pub fn meteor(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("METEOR"));
    }
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|p| meteor_pair(&p.reference, &p.prediction))
        .collect();
    Ok(100.0 * scores.iter().sum::<f64>() / pairs.len() as f64)
}
