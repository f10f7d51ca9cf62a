use std::sync::LazyLock;

use regex::Regex;

use super::GroundedBox;
use crate::annotations::BoundingBox;

static BOX_GROUP: LazyLock<Regex> = LazyLock::new(|| {
    let num = r"\s*([+-]?(?:\d+(?:\.\d*)?|\.\d+))\s*";
    Regex::new(&format!(r"\[{num},{num},{num},{num}\]")).unwrap()
});

/// Characters that end a label when scanning backwards from a bracket.
const LABEL_STOPS: &[char] = &['.', ',', ';', ':', '!', '?', '(', ')', '[', ']', '\n', '"'];

/// `<label> [x1, y1, x2, y2]` with two decimals per coordinate.
///
/// Ties round half to even (`0.125` prints as `0.12`).
pub fn render_grounding(label: &str, b: &BoundingBox) -> String {
    let coords = format!("[{:.2}, {:.2}, {:.2}, {:.2}]", b.x1, b.y1, b.x2, b.y2);
    let label = label.trim();
    if label.is_empty() {
        coords
    } else {
        format!("{label} {coords}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundingParse {
    pub boxes: Vec<GroundedBox>,
    /// One entry per bracketed numeric group that was not a valid box.
    pub warnings: Vec<String>,
}

/// Extract every `label [f, f, f, f]` group from free text.
///
/// The label is the run of words directly before the bracket, stopping at
/// punctuation or the previous group; it may be empty.
pub fn parse_grounding(text: &str) -> GroundingParse {
    let mut out = GroundingParse::default();
    let mut prev_end = 0;
    for caps in BOX_GROUP.captures_iter(text) {
        let m = caps.get(0).unwrap();
        let head = &text[prev_end..m.start()];
        prev_end = m.end();
        let label_start = head.rfind(LABEL_STOPS).map(|i| i + 1).unwrap_or(0);
        let label = head[label_start..]
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let nums: Vec<f64> = (1..=4)
            .map(|i| caps[i].parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        match BoundingBox::new(nums[0], nums[1], nums[2], nums[3]) {
            Ok(bbox) => out.boxes.push(GroundedBox { label, bbox }),
            Err(e) => out
                .warnings
                .push(format!("skipped `{}` at byte {}: {e}", m.as_str(), m.start())),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn render_examples() {
        assert_eq!(
            render_grounding("kidney", &bx(0.10, 0.20, 0.30, 0.40)),
            "kidney [0.10, 0.20, 0.30, 0.40]"
        );
        assert_eq!(
            render_grounding("tissue", &bx(0.0, 0.0, 1.0, 1.0)),
            "tissue [0.00, 0.00, 1.00, 1.00]"
        );
        assert_eq!(
            render_grounding("f", &bx(0.125, 0.125, 0.875, 0.875)),
            "f [0.12, 0.12, 0.88, 0.88]"
        );
    }

    #[test]
    fn parse_examples() {
        let p = parse_grounding("kidney [0.10, 0.20, 0.30, 0.40]");
        assert_eq!(p.boxes.len(), 1);
        assert_eq!(p.boxes[0].label, "kidney");
        assert_eq!(p.boxes[0].bbox.to_array(), [0.10, 0.20, 0.30, 0.40]);
        assert!(p.warnings.is_empty());

        assert_eq!(parse_grounding("no boxes here"), GroundingParse::default());

        let p = parse_grounding("a [0.5,0.5,0.2,0.2] b [0,0,0.5,0.5]");
        assert_eq!(p.boxes.len(), 1);
        assert_eq!(p.boxes[0].label, "b");
        assert_eq!(p.boxes[0].bbox.to_array(), [0.0, 0.0, 0.5, 0.5]);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn parse_tolerates_spacing_and_precision() {
        let p = parse_grounding("The grasper[ 0.1 ,0.2500,  0.3,0.4 ] is idle.");
        assert_eq!(p.boxes.len(), 1);
        assert_eq!(p.boxes[0].label, "The grasper");
        assert_eq!(p.boxes[0].bbox.to_array(), [0.1, 0.25, 0.3, 0.4]);
    }

    #[test]
    fn label_stops_at_punctuation() {
        let p = parse_grounding("In this frame, bipolar forceps [0.10, 0.20, 0.30, 0.40] and kidney [0.5, 0.5, 0.6, 0.6].");
        let labels: Vec<_> = p.boxes.iter().map(|b| b.label.as_str()).collect();
        assert_eq!(labels, ["bipolar forceps", "and kidney"]);
    }

    #[test]
    fn out_of_range_is_warning() {
        let p = parse_grounding("x [0.1, 0.2, 1.3, 0.4]");
        assert!(p.boxes.is_empty());
        assert_eq!(p.warnings.len(), 1);
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(
            label in "[a-z]{1,8}( [a-z]{1,8}){0,2}",
            x1 in 0.0f64..0.98, y1 in 0.0f64..0.98,
            dx in 0.011f64..1.0, dy in 0.011f64..1.0,
        ) {
            let b = bx(x1, y1, (x1 + dx).min(1.0), (y1 + dy).min(1.0));
            let text = render_grounding(&label, &b);
            let p = parse_grounding(&text);
            prop_assert_eq!(p.boxes.len(), 1);
            prop_assert_eq!(&p.boxes[0].label, &label);
            let got = p.boxes[0].bbox.to_array();
            for (g, w) in got.iter().zip(b.to_array()) {
                prop_assert!((g - w).abs() <= 0.005 + 1e-12);
            }
        }
    }
}
