//! Brute-force reference implementations, fixture builders and the
//! independent record checker shared by the integration tests and the
//! acceptance runner. Nothing here calls into the library's metric,
//! decoding or validation code.
#![allow(dead_code, clippy::needless_range_loop)]

use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use surgkit_core::generation::{ConversationParadigm, InstructionRecord, Role};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- text fixtures ----------------------------------------------------------

pub const WORDS: [&str; 12] = [
    "the", "grasper", "is", "idle", "cutting", "cut", "kidney", "left", "forceps", "tissue", "moves", "moving",
];

/// A short sentence over a small vocabulary, sometimes capitalised or
/// ending in a period.
pub fn sentence(rng: &mut impl Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    let mut words: Vec<String> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect();
    if rng.random_bool(0.3) {
        let first = &mut words[0];
        *first = first[..1].to_uppercase() + &first[1..];
    }
    let mut s = words.join(" ");
    if rng.random_bool(0.3) {
        s.push('.');
    }
    s
}

/// Lowercase, drop periods, split on whitespace.
pub fn toks(s: &str) -> Vec<String> {
    s.to_lowercase()
        .replace('.', " ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// One to five sentence pairs; a third are exact echoes.
pub fn text_fixture(seed: u64) -> Vec<(String, String)> {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=5);
    (0..n)
        .map(|_| {
            let r = sentence(&mut rng, 1, 6);
            let p = match rng.random_range(0..3) {
                0 => r.clone(),
                _ => sentence(&mut rng, 1, 6),
            };
            (r, p)
        })
        .collect()
}

/// One to five short-label pairs drawn from [`LABELS`].
pub fn label_fixture(seed: u64) -> Vec<(String, String)> {
    let mut rng = rng(seed ^ 0x5eed);
    let n = rng.random_range(1..=5);
    (0..n)
        .map(|_| {
            (
                LABELS[rng.random_range(0..LABELS.len())].to_string(),
                LABELS[rng.random_range(0..LABELS.len())].to_string(),
            )
        })
        .collect()
}

pub const LABELS: [&str; 8] = ["three", "3", "Three.", "idle", "Idle", "left", "kidney", "two"];

// ---- classification ---------------------------------------------------------

pub fn norm_label(s: &str) -> String {
    let mut t = s.to_lowercase().trim().to_string();
    while t.ends_with(|c: char| ".!?,;:".contains(c)) {
        t.pop();
    }
    let digits = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];
    t.split_whitespace()
        .map(|w| {
            for (i, d) in digits.iter().enumerate() {
                if w == *d {
                    return i.to_string();
                }
            }
            w.to_string()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn oracle_accuracy(pairs: &[(String, String)]) -> f64 {
    let mut hits = 0;
    for (r, p) in pairs {
        if norm_label(r) == norm_label(p) {
            hits += 1;
        }
    }
    100.0 * hits as f64 / pairs.len() as f64
}

pub fn oracle_macro_f1(pairs: &[(String, String)]) -> f64 {
    let mut classes: Vec<String> = Vec::new();
    for (r, p) in pairs {
        for c in [norm_label(r), norm_label(p)] {
            if !classes.contains(&c) {
                classes.push(c);
            }
        }
    }
    let mut sum = 0.0;
    for c in &classes {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (r, p) in pairs {
            let (r, p) = (norm_label(r), norm_label(p));
            if &r == c && &p == c {
                tp += 1.0;
            } else if &r == c {
                fneg += 1.0;
            } else if &p == c {
                fp += 1.0;
            }
        }
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        sum += if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
    }
    100.0 * sum / classes.len() as f64
}

// ---- n-gram text metrics ----------------------------------------------------

fn grams(t: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    if t.len() >= n {
        for i in 0..=t.len() - n {
            out.push(t[i..i + n].to_vec());
        }
    }
    out
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

pub fn oracle_bleu(pairs: &[(String, String)], n: usize) -> f64 {
    let eps = 1e-9;
    let mut log_sum = 0.0;
    let (mut c, mut r) = (0usize, 0usize);
    for (reference, pred) in pairs {
        c += toks(pred).len();
        r += toks(reference).len();
    }
    if c == 0 {
        return 0.0;
    }
    for k in 1..=n {
        let (mut m, mut tot) = (0usize, 0usize);
        for (reference, pred) in pairs {
            let hg = grams(&toks(pred), k);
            let rg = grams(&toks(reference), k);
            tot += hg.len();
            for g in distinct(&hg) {
                m += occurrences(&hg, &g).min(occurrences(&rg, &g));
            }
        }
        let p = if m == 0 { eps / (tot as f64 + eps) } else { m as f64 / tot as f64 };
        log_sum += p.ln();
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    100.0 * bp * (log_sum / n as f64).exp()
}

pub fn oracle_rouge1(reference: &str, pred: &str) -> f64 {
    let (r, h) = (toks(reference), toks(pred));
    if r.is_empty() || h.is_empty() {
        return 0.0;
    }
    let rg = grams(&r, 1);
    let hg = grams(&h, 1);
    let mut overlap = 0;
    for g in distinct(&hg) {
        overlap += occurrences(&hg, &g).min(occurrences(&rg, &g));
    }
    f1(overlap, h.len(), r.len())
}

fn f1(overlap: usize, h: usize, r: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / h as f64;
    let rc = overlap as f64 / r as f64;
    2.0 * p * rc / (p + rc)
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == *n))
}

/// LCS by enumerating every subsequence of the shorter sequence.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let pick: Vec<&String> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| &short[i]).collect();
        if pick.len() > best && is_subsequence(&pick, long) {
            best = pick.len();
        }
    }
    best
}

pub fn oracle_rouge_l(reference: &str, pred: &str) -> f64 {
    let (r, h) = (toks(reference), toks(pred));
    if r.is_empty() || h.is_empty() {
        return 0.0;
    }
    f1(brute_lcs(&h, &r), h.len(), r.len())
}

pub fn oracle_cider(pairs: &[(String, String)]) -> f64 {
    let sigma = 6.0;
    let refs: Vec<Vec<String>> = pairs.iter().map(|(r, _)| toks(r)).collect();
    let hyps: Vec<Vec<String>> = pairs.iter().map(|(_, p)| toks(p)).collect();
    let docs = refs.len() as f64;
    let ref_grams: Vec<Vec<Vec<Vec<String>>>> = (0..=4).map(|n| refs.iter().map(|r| grams(r, n)).collect()).collect();
    let df = |g: &[String]| -> f64 {
        ref_grams[g.len()].iter().filter(|doc| doc.iter().any(|x| x.as_slice() == g)).count() as f64
    };
    let vector = |t: &[String], n: usize| -> Vec<(Vec<String>, f64)> {
        let all = grams(t, n);
        distinct(&all)
            .into_iter()
            .map(|g| {
                let tf = occurrences(&all, &g) as f64;
                let w = tf * (docs.max(1.0).ln() - df(&g).max(1.0).ln());
                (g, w)
            })
            .collect()
    };
    let mut total = 0.0;
    for (r, h) in refs.iter().zip(&hyps) {
        let delta = h.len() as f64 - r.len() as f64;
        let pen = (-(delta * delta) / (2.0 * sigma * sigma)).exp();
        let mut s = 0.0;
        for n in 1..=4 {
            let vh = vector(h, n);
            let vr = vector(r, n);
            let mut dot = 0.0;
            for (g, wh) in &vh {
                for (g2, wr) in &vr {
                    if g == g2 {
                        dot += wh.min(*wr) * wr;
                    }
                }
            }
            let nh = vh.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            let nr = vr.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            if nh != 0.0 && nr != 0.0 {
                dot /= nh * nr;
            }
            s += dot * pen;
        }
        total += s / 4.0;
    }
    10.0 * total / pairs.len() as f64
}

// ---- METEOR -----------------------------------------------------------------

fn chunk_count(align: &[(usize, usize)]) -> usize {
    let mut a = align.to_vec();
    a.sort();
    let mut c = 0;
    for i in 0..a.len() {
        if i == 0 || a[i].0 != a[i - 1].0 + 1 || a[i].1 != a[i - 1].1 + 1 {
            c += 1;
        }
    }
    c
}

/// Every partial injective matching of equal keys among free positions.
fn all_matchings(
    h: &[String],
    r: &[String],
    free_h: &[bool],
    free_r: &mut Vec<bool>,
    i: usize,
    cur: &mut Vec<(usize, usize)>,
    out: &mut Vec<Vec<(usize, usize)>>,
) {
    if i == h.len() {
        out.push(cur.clone());
        return;
    }
    all_matchings(h, r, free_h, free_r, i + 1, cur, out);
    if !free_h[i] {
        return;
    }
    for j in 0..r.len() {
        if free_r[j] && r[j] == h[i] {
            free_r[j] = false;
            cur.push((i, j));
            all_matchings(h, r, free_h, free_r, i + 1, cur, out);
            cur.pop();
            free_r[j] = true;
        }
    }
}

fn best_stage(h: &[String], r: &[String], fixed: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut free_h = vec![true; h.len()];
    let mut free_r = vec![true; r.len()];
    for &(a, b) in fixed {
        free_h[a] = false;
        free_r[b] = false;
    }
    let mut all = Vec::new();
    all_matchings(h, r, &free_h, &mut free_r, 0, &mut Vec::new(), &mut all);
    let max = all.iter().map(Vec::len).max().unwrap_or(0);
    all.into_iter()
        .filter(|m| m.len() == max)
        .min_by_key(|m| {
            let mut u = fixed.to_vec();
            u.extend_from_slice(m);
            chunk_count(&u)
        })
        .unwrap_or_default()
}

pub fn oracle_meteor_pair(reference: &str, pred: &str) -> f64 {
    let (r, h) = (toks(reference), toks(pred));
    if r.is_empty() || h.is_empty() {
        return 0.0;
    }
    let mut align = best_stage(&h, &r, &[]);
    let hs: Vec<String> = h.iter().map(|t| porter_stemmer::stem(t)).collect();
    let rs: Vec<String> = r.iter().map(|t| porter_stemmer::stem(t)).collect();
    let more = best_stage(&hs, &rs, &align);
    align.extend(more);
    let m = align.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / h.len() as f64;
    let rc = m / r.len() as f64;
    let fmean = p * rc / (0.9 * p + 0.1 * rc);
    let ch = chunk_count(&align);
    if ch == 1 && align.len() == h.len() && align.len() == r.len() {
        return fmean;
    }
    fmean * (1.0 - 0.5 * (ch as f64 / m).powi(3))
}

// ---- boxes ------------------------------------------------------------------

/// Grid resolution for exact box fixtures: coordinates are multiples of 1/GRID.
pub const GRID: i64 = 20;

pub fn grid_box(rng: &mut impl Rng) -> [i64; 4] {
    let x1 = rng.random_range(0..GRID);
    let y1 = rng.random_range(0..GRID);
    let x2 = rng.random_range(x1 + 1..=GRID);
    let y2 = rng.random_range(y1 + 1..=GRID);
    [x1, y1, x2, y2]
}

pub fn grid_to_unit(b: [i64; 4]) -> [f64; 4] {
    b.map(|v| v as f64 / GRID as f64)
}

/// IoU by counting unit cells of the grid.
pub fn raster_iou(a: [i64; 4], b: [i64; 4]) -> f64 {
    let (mut inter, mut union) = (0, 0);
    for x in 0..GRID {
        for y in 0..GRID {
            let ina = x >= a[0] && x < a[2] && y >= a[1] && y < a[3];
            let inb = x >= b[0] && x < b[2] && y >= b[1] && y < b[3];
            inter += (ina && inb) as i64;
            union += (ina || inb) as i64;
        }
    }
    inter as f64 / union as f64
}

// ---- MVTE -------------------------------------------------------------------

pub fn randn(rng: &mut impl Rng) -> f64 {
    // Box–Muller, independent of the library's sampler
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| randn(rng)).collect()).collect()
}

/// Nested-loop affine map: x (L×in) · w (in×out) + b.
pub fn loop_affine(x: &[Vec<f64>], w: &[Vec<f64>], b: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; b.len()]; x.len()];
    for i in 0..x.len() {
        for o in 0..b.len() {
            let mut s = b[o];
            for k in 0..w.len() {
                s += x[i][k] * w[k][o];
            }
            out[i][o] = s;
        }
    }
    out
}

/// Global tokens: for each slot j, softmax over tokens of the MLP scores,
/// then the weighted sum of token rows.
pub fn loop_mvte(
    x: &[Vec<f64>],
    w1: &[Vec<f64>],
    b1: &[f64],
    w2: &[Vec<f64>],
    b2: &[f64],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut h = loop_affine(x, w1, b1);
    for row in &mut h {
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    let s = loop_affine(&h, w2, b2);
    let (l, m, d) = (x.len(), b2.len(), x[0].len());
    let mut attn = vec![vec![0.0; m]; l];
    for j in 0..m {
        let mut mx = f64::NEG_INFINITY;
        for i in 0..l {
            mx = mx.max(s[i][j]);
        }
        let mut z = 0.0;
        for i in 0..l {
            z += (s[i][j] - mx).exp();
        }
        for i in 0..l {
            attn[i][j] = (s[i][j] - mx).exp() / z;
        }
    }
    let mut out = x.to_vec();
    for j in 0..m {
        let mut g = vec![0.0; d];
        for i in 0..l {
            for c in 0..d {
                g[c] += attn[i][j] * x[i][c];
            }
        }
        out.push(g);
    }
    (attn, out)
}

// ---- record contracts -------------------------------------------------------

pub static GROUP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[\s*(\d(?:\.\d+)?),\s*(\d(?:\.\d+)?),\s*(\d(?:\.\d+)?),\s*(\d(?:\.\d+)?)\s*\]").unwrap());
pub static WIRE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(Human: [^\n]*\nEndoChat: [^\n]*\n)+$").unwrap());
pub static GROUNDING_ONLY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z][A-Za-z' -]*\s\[[^\]]*\]\.?$").unwrap());

fn words(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Paradigm contracts checked without the library's own validator.
pub fn contract_errors(r: &InstructionRecord) -> Vec<String> {
    let mut errs = Vec::new();
    if r.turns.len() < 2 {
        errs.push("fewer than two turns".to_string());
        return errs;
    }
    for (i, t) in r.turns.iter().enumerate() {
        let want = if i % 2 == 0 { Role::Human } else { Role::Assistant };
        if t.role != want {
            errs.push(format!("turn {i} has the wrong role"));
        }
    }
    let q = &r.turns[r.turns.len() - 2].text;
    let a = &r.turns[r.turns.len() - 1].text;
    let sentence = |s: &str| {
        let s = s.trim();
        s.chars().next().is_some_and(|c| c.is_uppercase() || c.is_ascii_digit()) && s.ends_with(['.', '!', '?'])
    };
    match r.paradigm {
        ConversationParadigm::SinglePhrase => {
            if words(a) > 4 || a.contains('[') {
                errs.push(format!("single phrase answer `{a}`"));
            }
            if !q.ends_with("Answer the question with a single phrase.") {
                errs.push("missing single phrase prompt".into());
            }
        }
        ConversationParadigm::GroundingQA => {
            if GROUP.find_iter(a).count() != 1 || !GROUNDING_ONLY.is_match(a) {
                errs.push(format!("grounding answer `{a}`"));
            }
            if !q.ends_with("Answer the question with just a bounding box.") {
                errs.push("missing grounding prompt".into());
            }
        }
        ConversationParadigm::RegionBasedQA => {
            if GROUP.find_iter(q).count() < 1 || GROUP.is_match(a) {
                errs.push(format!("region QA `{q}` -> `{a}`"));
            }
        }
        ConversationParadigm::VisualQA | ConversationParadigm::DetailedDescription => {
            if !sentence(a) {
                errs.push(format!("not a sentence: `{a}`"));
            }
        }
    }
    errs
}

