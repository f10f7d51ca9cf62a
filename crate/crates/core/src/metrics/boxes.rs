use serde::{Deserialize, Serialize};

use super::{EvalPair, MetricError};
use crate::annotations::BoundingBox;
use crate::generation::parse_grounding;

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxScore {
    pub value: f64,
    /// Pairs scored (those with a reference box).
    pub scored: usize,
    pub warnings: Vec<String>,
}

fn reference_box(p: &EvalPair) -> Option<BoundingBox> {
    p.reference_box
        .or_else(|| parse_grounding(&p.reference).boxes.first().map(|g| g.bbox))
}

/// Per-pair IoU of the first predicted box; an unparseable prediction
/// scores zero. Pairs without a reference box are skipped.
fn pair_ious(pairs: &[EvalPair]) -> (Vec<f64>, Vec<String>) {
    let mut ious = Vec::with_capacity(pairs.len());
    let mut warnings = Vec::new();
    for p in pairs {
        let Some(r) = reference_box(p) else {
            warnings.push(format!("{}: reference has no box, skipped", p.record_id));
            continue;
        };
        let v = parse_grounding(&p.prediction)
            .boxes
            .first()
            .map_or(0.0, |g| iou(&r, &g.bbox));
        ious.push(v);
    }
    (ious, warnings)
}

fn reduce(pairs: &[EvalPair], what: &'static str, f: impl Fn(f64) -> f64) -> Result<BoxScore, MetricError> {
    let (ious, warnings) = pair_ious(pairs);
    if ious.is_empty() {
        return Err(MetricError::Empty(what));
    }
    let value = 100.0 * ious.iter().map(|&v| f(v)).sum::<f64>() / ious.len() as f64;
    Ok(BoxScore {
        value,
        scored: ious.len(),
        warnings,
    })
}

pub fn mean_iou(pairs: &[EvalPair]) -> Result<BoxScore, MetricError> {
    reduce(pairs, "mIoU", |v| v)
}

/// Slack at the 0.5 threshold, so an overlap of exactly one half computed
/// from decimal coordinates is not lost to rounding.
pub const AP_THRESHOLD_SLACK: f64 = 1e-9;

/// Hit rate at IoU >= 0.5, one box per answer.
pub fn ap_at_50(pairs: &[EvalPair]) -> Result<BoxScore, MetricError> {
    reduce(pairs, "AP@50", |v| if v >= 0.5 - AP_THRESHOLD_SLACK { 1.0 } else { 0.0 })
}
