use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AnnotationError, PositionLabel};

/// Axis-aligned rectangle in normalized image coordinates.
///
/// `(x1, y1)` is the top-left corner and `(x2, y2)` the bottom-right one,
/// each a fraction of the image width or height. Serialized as
/// `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, AnnotationError> {
        let b = Self { x1, y1, x2, y2 };
        b.check()?;
        Ok(b)
    }

    pub(crate) fn check(&self) -> Result<(), AnnotationError> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0) {
            return Err(AnnotationError::InvalidBox(format!(
                "{self} has a coordinate outside [0, 1]"
            )));
        }
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(AnnotationError::InvalidBox(format!("{self} has zero or negative extent")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = AnnotationError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Rectangle in integer pixel coordinates, as written by source annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[i64; 4]", into = "[i64; 4]")]
pub struct PixelBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl PixelBox {
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Inverse of [`normalize_box`], rounding to the nearest pixel.
    pub fn from_normalized(b: &BoundingBox, width: u32, height: u32) -> Self {
        let (w, h) = (width as f64, height as f64);
        Self {
            x1: (b.x1 * w).round() as i64,
            y1: (b.y1 * h).round() as i64,
            x2: (b.x2 * w).round() as i64,
            y2: (b.y2 * h).round() as i64,
        }
    }
}

impl From<[i64; 4]> for PixelBox {
    fn from(v: [i64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<PixelBox> for [i64; 4] {
    fn from(b: PixelBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Divide each pixel coordinate by the matching image dimension.
pub fn normalize_box(px: PixelBox, width: u32, height: u32) -> Result<BoundingBox, AnnotationError> {
    if width == 0 || height == 0 {
        return Err(AnnotationError::InvalidBox(format!(
            "image size {width}x{height} is degenerate"
        )));
    }
    let (w, h) = (width as i64, height as i64);
    let in_range = 0 <= px.x1 && px.x2 <= w && 0 <= px.y1 && px.y2 <= h;
    if !in_range {
        return Err(AnnotationError::InvalidBox(format!(
            "pixel box [{}, {}, {}, {}] exceeds image bounds {width}x{height}",
            px.x1, px.y1, px.x2, px.y2
        )));
    }
    if px.x1 >= px.x2 || px.y1 >= px.y2 {
        return Err(AnnotationError::InvalidBox(format!(
            "pixel box [{}, {}, {}, {}] has zero area",
            px.x1, px.y1, px.x2, px.y2
        )));
    }
    BoundingBox::new(
        px.x1 as f64 / width as f64,
        px.y1 as f64 / height as f64,
        px.x2 as f64 / width as f64,
        px.y2 as f64 / height as f64,
    )
}

/// Grid cell of the box center. Boundaries at 1/3 and 2/3 belong to the
/// lower-index cell, so a center at exactly 1/3 is left (or top).
pub fn position_of(b: &BoundingBox) -> PositionLabel {
    let (cx, cy) = b.center();
    PositionLabel::from_cell(grid_index(cx), grid_index(cy))
}

fn grid_index(c: f64) -> usize {
    if c <= 1.0 / 3.0 {
        0
    } else if c <= 2.0 / 3.0 {
        1
    } else {
        2
    }
}
