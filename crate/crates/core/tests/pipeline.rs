mod common;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surgkit_core::annotations::{synthetic_frames, BoundingBox};
use surgkit_core::generation::*;

use common::{contract_errors, WIRE};

fn generate(frames: usize, seed: u64) -> Vec<InstructionRecord> {
    let config = GenerationConfig {
        seed,
        ..Default::default()
    };
    generate_corpus(&synthetic_frames(frames, seed), &TemplateSet::builtin(), &config, &StubEnricher)
        .unwrap()
        .value
}

fn bytes(records: &[InstructionRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    write_corpus(&mut out, records).unwrap();
    out
}

#[test]
fn generation_is_byte_identical_across_runs_and_pool_sizes() {
    let start = std::time::Instant::now();
    let a = generate(50, 7);
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| generate(50, 7));
    assert!(!a.is_empty());
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&generate(50, 8)));
    assert!(start.elapsed().as_secs() < 30);
}

#[test]
fn every_record_meets_its_paradigm_contract() {
    let corpus = generate(50, 3);
    let mut seen = BTreeMap::new();
    for r in &corpus {
        let errs = contract_errors(r);
        assert!(errs.is_empty(), "{}: {errs:?}", r.record_id);
        assert!(validate_record(r).is_empty(), "{}: {:?}", r.record_id, validate_record(r));
        *seen.entry(r.paradigm).or_insert(0) += 1;
    }
    assert_eq!(seen.len(), 5, "all paradigms present: {seen:?}");
}

#[test]
fn wire_format_matches_line_grammar_and_round_trips() {
    for r in generate(20, 5) {
        let wire = serialize_conversation(&r).unwrap();
        assert!(WIRE.is_match(&wire), "{wire:?}");
        let pairs = parse_conversation(&wire).unwrap();
        let texts: Vec<&str> = pairs.iter().flat_map(|(q, a)| [q.as_str(), a.as_str()]).collect();
        let want: Vec<&str> = r.turns.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, want);
    }
}

#[test]
fn grounding_round_trip_within_half_a_hundredth() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..2000 {
        let mut c: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..=1.0)).collect();
        if c[0] > c[2] {
            c.swap(0, 2);
        }
        if c[1] > c[3] {
            c.swap(1, 3);
        }
        if c[2] - c[0] < 0.02 || c[3] - c[1] < 0.02 {
            continue;
        }
        let b = BoundingBox::new(c[0], c[1], c[2], c[3]).unwrap();
        let text = render_grounding("left kidney", &b);
        let parsed = parse_grounding(&text);
        assert_eq!(parsed.boxes.len(), 1, "{text}");
        assert_eq!(parsed.boxes[0].label, "left kidney");
        for (x, y) in parsed.boxes[0].bbox.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() <= 0.005 + 1e-12, "{text}");
        }
    }
    // generated records: every declared box is recoverable from its text
    for r in generate(10, 1) {
        for t in &r.turns {
            let parsed = parse_grounding(&t.text).boxes;
            assert_eq!(parsed.len(), t.boxes.len());
            for (p, d) in parsed.iter().zip(&t.boxes) {
                for (x, y) in p.bbox.to_array().iter().zip(d.bbox.to_array()) {
                    assert!((x - y).abs() <= 0.005 + 1e-12);
                }
            }
        }
    }
}

#[test]
fn render_grounding_examples() {
    let b = |a, b_, c, d| BoundingBox::new(a, b_, c, d).unwrap();
    assert_eq!(render_grounding("kidney", &b(0.10, 0.20, 0.30, 0.40)), "kidney [0.10, 0.20, 0.30, 0.40]");
    assert_eq!(render_grounding("tissue", &b(0.0, 0.0, 1.0, 1.0)), "tissue [0.00, 0.00, 1.00, 1.00]");
    assert_eq!(render_grounding("f", &b(0.125, 0.125, 0.875, 0.875)), "f [0.12, 0.12, 0.88, 0.88]");
    let parsed = parse_grounding("a [0.5,0.5,0.2,0.2] b [0,0,0.5,0.5]");
    assert_eq!(parsed.boxes.len(), 1);
    assert_eq!(parsed.boxes[0].label, "b");
    assert_eq!(parsed.warnings.len(), 1);
}

#[test]
fn stats_agree_with_a_recount() {
    let corpus = generate(30, 2);
    let s = corpus_stats(&corpus);
    let mut frames: Vec<&str> = corpus.iter().map(|r| r.frame_id.as_str()).collect();
    frames.sort();
    frames.dedup();
    assert_eq!(s.frames, frames.len());
    assert_eq!(s.records, corpus.len());
    for p in ConversationParadigm::ALL {
        assert_eq!(s.per_paradigm[&p], corpus.iter().filter(|r| r.paradigm == p).count());
    }
    for t in SubTask::ALL {
        assert_eq!(s.per_subtask[&t], corpus.iter().filter(|r| r.subtask == t).count());
    }
    let boxed = corpus.iter().filter(|r| r.turns.iter().any(|t| t.text.contains('['))).count();
    assert_eq!(s.box_records, boxed);
    assert_eq!(corpus_stats(&[]).records, 0);
}

#[test]
fn subtask_splits_partition_the_corpus() {
    let corpus = generate(30, 4);
    let splits = derive_subtask_splits(&corpus).unwrap();
    assert_eq!(splits.total(), corpus.len());
    let dd = corpus.iter().filter(|r| r.paradigm == ConversationParadigm::DetailedDescription).count();
    assert_eq!(splits.buckets[&SubTask::Description].len(), dd);
    for (t, recs) in &splits.buckets {
        for r in recs {
            if *t == SubTask::Description {
                assert_eq!(r.paradigm, ConversationParadigm::DetailedDescription);
            } else {
                assert!(matches!(
                    r.paradigm,
                    ConversationParadigm::SinglePhrase | ConversationParadigm::GroundingQA
                ));
            }
        }
    }
}

#[test]
fn corpus_file_round_trips() {
    let corpus = generate(5, 6);
    let text = bytes(&corpus);
    assert_eq!(read_corpus(text.as_slice()).unwrap(), corpus);
}
