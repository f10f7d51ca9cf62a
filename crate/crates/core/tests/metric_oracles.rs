mod common;

use common::*;
use rand::Rng;
use surgkit_core::annotations::BoundingBox;
use surgkit_core::metrics::{
    accuracy, ap_at_50, bleu, cider, iou, macro_f1, mean_iou, meteor, meteor_pair, rouge, rouge_pair, EvalPair,
    RougeVariant,
};

const FIXTURES: u64 = 25;
const TOL: f64 = 1e-6;

fn close(what: &str, seed: u64, got: f64, want: f64) {
    assert!((got - want).abs() <= TOL, "{what} fixture {seed}: library {got} vs oracle {want}");
}

fn eval_pairs(v: &[(String, String)]) -> Vec<EvalPair> {
    v.iter().map(|(r, p)| EvalPair::text(r.clone(), p.clone())).collect()
}

#[test]
fn classification_matches_oracle() {
    for seed in 0..FIXTURES {
        let f = label_fixture(seed);
        let p = eval_pairs(&f);
        close("Acc", seed, accuracy(&p).unwrap(), oracle_accuracy(&f));
        close("F-score", seed, macro_f1(&p).unwrap(), oracle_macro_f1(&f));
    }
}

#[test]
fn ngram_metrics_match_oracle() {
    for seed in 0..FIXTURES {
        let f = text_fixture(seed);
        let p = eval_pairs(&f);
        close("BLEU-3", seed, bleu(&p, 3).unwrap(), oracle_bleu(&f, 3));
        close("BLEU-4", seed, bleu(&p, 4).unwrap(), oracle_bleu(&f, 4));
        close("CIDEr", seed, cider(&p).unwrap(), oracle_cider(&f));
        let mean = |g: &dyn Fn(&str, &str) -> f64| 100.0 * f.iter().map(|(r, q)| g(r, q)).sum::<f64>() / f.len() as f64;
        close("ROUGE-1", seed, rouge(&p, RougeVariant::One).unwrap(), mean(&oracle_rouge1));
        close("ROUGE-L", seed, rouge(&p, RougeVariant::L).unwrap(), mean(&oracle_rouge_l));
        close("METEOR", seed, meteor(&p).unwrap(), mean(&oracle_meteor_pair));
        for (r, q) in &f {
            close("ROUGE-L pair", seed, rouge_pair(r, q, RougeVariant::L), oracle_rouge_l(r, q));
            close("METEOR pair", seed, meteor_pair(r, q), oracle_meteor_pair(r, q));
        }
    }
}

#[test]
fn box_metrics_match_raster_oracle() {
    for seed in 0..FIXTURES {
        let mut rng = rng(seed ^ 0xb0c5);
        let n = rng.random_range(1..=5);
        let mut pairs = Vec::new();
        let mut ious = Vec::new();
        for _ in 0..n {
            let r = grid_box(&mut rng);
            let q = grid_box(&mut rng);
            let [a, b, c, d] = grid_to_unit(r);
            let rb = BoundingBox::new(a, b, c, d).unwrap();
            let [e, f, g, h] = grid_to_unit(q);
            let qb = BoundingBox::new(e, f, g, h).unwrap();
            close("IoU", seed, iou(&rb, &qb), raster_iou(r, q));
            if rng.random_bool(0.2) {
                pairs.push(EvalPair::boxed(rb, "I cannot tell"));
                ious.push(0.0);
            } else {
                pairs.push(EvalPair::boxed(rb, format!("forceps [{e:.2}, {f:.2}, {g:.2}, {h:.2}]")));
                ious.push(raster_iou(r, q));
            }
        }
        let miou = 100.0 * ious.iter().sum::<f64>() / n as f64;
        let ap = 100.0 * ious.iter().filter(|&&v| v >= 0.5).count() as f64 / n as f64;
        close("mIoU", seed, mean_iou(&pairs).unwrap().value, miou);
        close("AP@50", seed, ap_at_50(&pairs).unwrap().value, ap);
    }
}

#[test]
fn iou_spot_value() {
    let a = BoundingBox::new(0.0, 0.0, 0.5, 0.5).unwrap();
    let b = BoundingBox::new(0.25, 0.25, 0.75, 0.75).unwrap();
    assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-9);
}

#[test]
fn oracles_agree_on_hand_cases() {
    // keeps the oracles honest against values worked out by hand
    assert_eq!(brute_lcs(&toks("a b c d"), &toks("a c d b")), 3);
    let f = vec![("a b c".to_string(), "a b c".to_string())];
    assert!((oracle_bleu(&f, 3) - 100.0).abs() < 1e-9);
    assert!((oracle_rouge1("a b c", "a c b") - 1.0).abs() < 1e-12);
    assert!((raster_iou([0, 0, 10, 10], [5, 5, 15, 15]) - 1.0 / 7.0).abs() < 1e-12);
    let f = vec![
        ("three".to_string(), "3".to_string()),
        ("idle".to_string(), "left".to_string()),
    ];
    assert_eq!(oracle_accuracy(&f), 50.0);
    // classes 3 (F1 1), idle (0), left (0)
    assert!((oracle_macro_f1(&f) - 100.0 / 3.0).abs() < 1e-9);
}
