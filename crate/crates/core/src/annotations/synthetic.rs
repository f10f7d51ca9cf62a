use rand::seq::IndexedRandom;
use rand::Rng;

use super::{normalize_box, DirectionLabel, FrameAnnotation, InstrumentObservation, PixelBox, TissueObservation};
use crate::util::keyed_rng;

const INSTRUMENTS: [&str; 7] = [
    "bipolar forceps",
    "prograsp forceps",
    "large needle driver",
    "monopolar curved scissors",
    "ultrasound probe",
    "suction instrument",
    "clip applier",
];
const MOTIONS: [&str; 6] = ["idle", "cutting", "grasping", "retraction", "suturing", "cauterization"];
const TISSUES: [&str; 4] = ["kidney", "liver", "fascia", "mucosa"];
const SIZE: (u32, u32) = (1280, 1024);

fn random_box(rng: &mut impl Rng) -> PixelBox {
    let (w, h) = (SIZE.0 as i64, SIZE.1 as i64);
    let bw = rng.random_range(w / 10..w / 2);
    let bh = rng.random_range(h / 10..h / 2);
    let x1 = rng.random_range(0..w - bw);
    let y1 = rng.random_range(0..h - bh);
    PixelBox::new(x1, y1, x1 + bw, y1 + bh)
}

/// `n` plausible, fully annotated frames for demos and tests. Frame `i`
/// depends only on `seed` and `i`.
pub fn synthetic_frames(n: usize, seed: u64) -> Vec<FrameAnnotation> {
    (0..n)
        .map(|i| {
            let frame_id = format!("synth-{i:04}");
            let mut rng = keyed_rng(seed, &["synthetic-frame", &frame_id]);
            let count = rng.random_range(1..=3);
            let instruments = (0..count)
                .map(|_| {
                    let motion = *MOTIONS.choose(&mut rng).unwrap();
                    InstrumentObservation {
                        category: INSTRUMENTS.choose(&mut rng).unwrap().to_string(),
                        bbox: Some(normalize_box(random_box(&mut rng), SIZE.0, SIZE.1).unwrap()),
                        motion: Some(motion.to_string()),
                        direction: (motion != "idle").then(|| *DirectionLabel::ALL.choose(&mut rng).unwrap()),
                    }
                })
                .collect();
            let tissues = vec![TissueObservation {
                name: TISSUES.choose(&mut rng).unwrap().to_string(),
                bbox: Some(normalize_box(random_box(&mut rng), SIZE.0, SIZE.1).unwrap()),
            }];
            FrameAnnotation {
                image_path: format!("{frame_id}.png"),
                frame_id,
                image_size: SIZE,
                source: "synthetic".into(),
                instruments,
                tissues,
                phase: None,
                description_seed: None,
                source_qa: vec![],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::MotionPolicy;

    #[test]
    fn frames_validate_and_repeat() {
        let a = synthetic_frames(20, 4);
        assert_eq!(a, synthetic_frames(20, 4));
        assert_ne!(a, synthetic_frames(20, 5));
        for f in &a {
            f.validate(&MotionPolicy::default()).unwrap();
            assert!(f.is_grounded());
        }
    }
}
