//! Canonical frame model for surgical scene annotations.
//!
//! Source datasets describe a frame with very different record layouts. All
//! of them are lowered into [`FrameAnnotation`], which carries the attribute
//! hierarchy used downstream: instrument count and categories, target
//! tissues, positions on a 3x3 grid, motions and motion directions.

mod adapters;
mod geometry;
mod synthetic;

pub use adapters::{
    adapt_canonical, adapt_cholec80, adapt_copesd, adapt_endovis, adapt_line, read_frames,
    to_canonical_line, Adapted, Schema, COPESD_DEFAULT_SIZE, ENDOVIS_DEFAULT_SIZE,
};
pub use geometry::{normalize_box, position_of, BoundingBox, PixelBox};
pub use synthetic::synthetic_frames;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::SubTask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("frame {frame_id}: {message}")]
    Validation { frame_id: String, message: String },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unknown direction `{0}`, expected one of: upward, downward, left, right, upper-left, upper-right, lower-left, lower-right")]
    UnknownDirection(String),
    #[error("unknown schema `{0}`, expected one of: endovis, copesd, cholec80, canonical")]
    UnknownSchema(String),
}

/// Cell of the 3x3 grid that contains a box center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionLabel {
    LeftTop,
    Top,
    RightTop,
    Left,
    Center,
    Right,
    LeftBottom,
    Bottom,
    RightBottom,
}

impl PositionLabel {
    pub const ALL: [PositionLabel; 9] = [
        PositionLabel::LeftTop,
        PositionLabel::Top,
        PositionLabel::RightTop,
        PositionLabel::Left,
        PositionLabel::Center,
        PositionLabel::Right,
        PositionLabel::LeftBottom,
        PositionLabel::Bottom,
        PositionLabel::RightBottom,
    ];

    /// Row-major cell lookup, `col` and `row` in `0..3`.
    pub fn from_cell(col: usize, row: usize) -> Self {
        Self::ALL[row * 3 + col]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PositionLabel::LeftTop => "left-top",
            PositionLabel::Top => "top",
            PositionLabel::RightTop => "right-top",
            PositionLabel::Left => "left",
            PositionLabel::Center => "center",
            PositionLabel::Right => "right",
            PositionLabel::LeftBottom => "left-bottom",
            PositionLabel::Bottom => "bottom",
            PositionLabel::RightBottom => "right-bottom",
        }
    }
}

impl fmt::Display for PositionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PositionLabel {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = canonical_label_key(s);
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == key)
            .ok_or_else(|| AnnotationError::Validation {
                frame_id: String::new(),
                message: format!("unknown position `{s}`"),
            })
    }
}

/// One of the eight cardinal and diagonal motion directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionLabel {
    Upward,
    Downward,
    Left,
    Right,
    UpperLeft,
    UpperRight,
    LowerLeft,
    LowerRight,
}

impl DirectionLabel {
    pub const ALL: [DirectionLabel; 8] = [
        DirectionLabel::Upward,
        DirectionLabel::Downward,
        DirectionLabel::Left,
        DirectionLabel::Right,
        DirectionLabel::UpperLeft,
        DirectionLabel::UpperRight,
        DirectionLabel::LowerLeft,
        DirectionLabel::LowerRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DirectionLabel::Upward => "upward",
            DirectionLabel::Downward => "downward",
            DirectionLabel::Left => "left",
            DirectionLabel::Right => "right",
            DirectionLabel::UpperLeft => "upper-left",
            DirectionLabel::UpperRight => "upper-right",
            DirectionLabel::LowerLeft => "lower-left",
            DirectionLabel::LowerRight => "lower-right",
        }
    }
}

impl fmt::Display for DirectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DirectionLabel {
    type Err = AnnotationError;

    /// Accepts case and separator variants such as `Lower left` or `upper_right`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = canonical_label_key(s);
        let key = match key.as_str() {
            "up" => "upward",
            "down" => "downward",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == key)
            .ok_or_else(|| AnnotationError::UnknownDirection(s.to_string()))
    }
}

fn canonical_label_key(s: &str) -> String {
    s.trim()
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentObservation {
    pub category: String,
    /// Absent only for sources without localization (Cholec80-style tool lists).
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<DirectionLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueObservation {
    pub name: String,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceQaKind {
    Classification,
    Sentence,
}

/// A question/answer pair shipped with the source annotation itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceQa {
    pub kind: SourceQaKind,
    pub question: String,
    pub answer: String,
    pub subtask: SubTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_id: String,
    pub image_path: String,
    pub image_size: (u32, u32),
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub instruments: Vec<InstrumentObservation>,
    #[serde(default)]
    pub tissues: Vec<TissueObservation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description_seed: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_qa: Vec<SourceQa>,
}

impl FrameAnnotation {
    /// The IN attribute. Always derived, never stored.
    pub fn instrument_count(&self) -> usize {
        self.instruments.len()
    }

    /// True when at least one object carries a box.
    pub fn is_grounded(&self) -> bool {
        self.instruments.iter().any(|i| i.bbox.is_some())
            || self.tissues.iter().any(|t| t.bbox.is_some())
    }

    pub fn validate(&self, policy: &MotionPolicy) -> Result<(), AnnotationError> {
        let fail = |message: String| AnnotationError::Validation {
            frame_id: self.frame_id.clone(),
            message,
        };
        if self.frame_id.trim().is_empty() {
            return Err(fail("empty frame_id".into()));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(fail(format!(
                "image size must be positive, got {}x{}",
                self.image_size.0, self.image_size.1
            )));
        }
        for (i, inst) in self.instruments.iter().enumerate() {
            if inst.category.trim().is_empty() {
                return Err(fail(format!("instruments[{i}].category is empty")));
            }
            if let Some(b) = &inst.bbox {
                b.check().map_err(|e| fail(format!("instruments[{i}].box: {e}")))?;
            }
            if let Some(motion) = &inst.motion {
                if policy.requires_direction(motion) && inst.direction.is_none() {
                    return Err(fail(format!(
                        "instruments[{i}]: motion `{motion}` requires a direction"
                    )));
                }
            }
        }
        for (i, t) in self.tissues.iter().enumerate() {
            if t.name.trim().is_empty() {
                return Err(fail(format!("tissues[{i}].name is empty")));
            }
            if let Some(b) = &t.bbox {
                b.check().map_err(|e| fail(format!("tissues[{i}].box: {e}")))?;
            }
        }
        Ok(())
    }
}

/// Which motions count as movement and therefore need a [`DirectionLabel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPolicy {
    pub enforce: bool,
    pub stationary: BTreeSet<String>,
}

impl Default for MotionPolicy {
    fn default() -> Self {
        Self {
            enforce: true,
            stationary: ["idle", "hold", "stay idle"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

impl MotionPolicy {
    /// Policy for sources that never annotate directions.
    pub fn relaxed() -> Self {
        Self {
            enforce: false,
            ..Self::default()
        }
    }

    pub fn requires_direction(&self, motion: &str) -> bool {
        self.enforce && !self.stationary.contains(&motion.trim().to_lowercase())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direction_parsing_accepts_variants() {
        assert_eq!("Upward".parse::<DirectionLabel>().unwrap(), DirectionLabel::Upward);
        assert_eq!("lower left".parse::<DirectionLabel>().unwrap(), DirectionLabel::LowerLeft);
        assert_eq!("upper_right".parse::<DirectionLabel>().unwrap(), DirectionLabel::UpperRight);
        let err = "north-north-west".parse::<DirectionLabel>().unwrap_err();
        let msg = err.to_string();
        for d in DirectionLabel::ALL {
            assert!(msg.contains(d.as_str()), "{msg}");
        }
    }

    #[test]
    fn label_sets_have_expected_sizes() {
        assert_eq!(PositionLabel::ALL.len(), 9);
        assert_eq!(DirectionLabel::ALL.len(), 8);
        let names: BTreeSet<_> = PositionLabel::ALL.iter().map(|p| p.as_str()).collect();
        assert_eq!(names.len(), 9);
    }

    #[test]
    fn motion_policy_defaults() {
        let p = MotionPolicy::default();
        assert!(!p.requires_direction("idle"));
        assert!(!p.requires_direction("Stay Idle"));
        assert!(p.requires_direction("lift"));
        assert!(!MotionPolicy::relaxed().requires_direction("lift"));
    }

    #[test]
    fn instrument_count_is_derived() {
        let frame = FrameAnnotation {
            frame_id: "f".into(),
            image_path: "f.png".into(),
            image_size: (10, 10),
            source: String::new(),
            instruments: vec![
                InstrumentObservation {
                    category: "a".into(),
                    bbox: None,
                    motion: None,
                    direction: None,
                };
                3
            ],
            tissues: vec![],
            phase: None,
            description_seed: None,
            source_qa: vec![],
        };
        assert_eq!(frame.instrument_count(), 3);
        assert!(!frame.is_grounded());
    }
}
