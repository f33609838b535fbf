//! Glyph boxes, layout sequences and the layout JSON exchange format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CANVAS_SIZE: usize = 128;
pub const GLYPH_SIZE: usize = 64;
/// Largest number of glyph units in one logo.
pub const MAX_GLYPHS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("box {index}: {field} = {value} outside the open interval (0, {limit})")]
    OutOfRange {
        index: usize,
        field: &'static str,
        value: f64,
        limit: f64,
    },
    #[error("box {index} extends beyond the {width}x{height} canvas")]
    OffCanvas {
        index: usize,
        width: usize,
        height: usize,
    },
    #[error("layout JSON: {0}")]
    Json(String),
}

/// Center/size box of one glyph in canvas pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutParams {
    pub x_c: f64,
    pub y_c: f64,
    pub w: f64,
    pub h: f64,
}

impl LayoutParams {
    pub fn new(x_c: f64, y_c: f64, w: f64, h: f64) -> Self {
        Self { x_c, y_c, w, h }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_c, self.y_c, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.x_c - self.w / 2.0,
            self.y_c - self.h / 2.0,
            self.x_c + self.w / 2.0,
            self.y_c + self.h / 2.0,
        )
    }

    /// Open-interval range check on all four parameters.
    pub fn check_range(&self, index: usize, canvas: (usize, usize)) -> Result<(), LayoutError> {
        let (cw, ch) = (canvas.0 as f64, canvas.1 as f64);
        for (field, value, limit) in [
            ("x_c", self.x_c, cw),
            ("y_c", self.y_c, ch),
            ("w", self.w, cw),
            ("h", self.h, ch),
        ] {
            if !(value > 0.0 && value < limit) {
                return Err(LayoutError::OutOfRange {
                    index,
                    field,
                    value,
                    limit,
                });
            }
        }
        Ok(())
    }

    /// Range check plus containment of the whole box in the canvas.
    pub fn check_on_canvas(&self, index: usize, canvas: (usize, usize)) -> Result<(), LayoutError> {
        self.check_range(index, canvas)?;
        let (x0, y0, x1, y1) = self.corners();
        let tol = 1e-9;
        if x0 < -tol || y0 < -tol || x1 > canvas.0 as f64 + tol || y1 > canvas.1 as f64 + tol {
            return Err(LayoutError::OffCanvas {
                index,
                width: canvas.0,
                height: canvas.1,
            });
        }
        Ok(())
    }
}

/// Ordered boxes, one per glyph, in reading order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayoutSequence {
    pub params: Vec<LayoutParams>,
}

impl LayoutSequence {
    pub fn new(params: Vec<LayoutParams>) -> Self {
        Self { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn check_range(&self, canvas: (usize, usize)) -> Result<(), LayoutError> {
        self.params
            .iter()
            .enumerate()
            .try_for_each(|(i, p)| p.check_range(i, canvas))
    }

    pub fn to_json(&self, canvas: (usize, usize)) -> String {
        LayoutFile::from_sequence(self, canvas).to_json()
    }
}

/// On-disk layout format: `{"canvas":[W,H],"boxes":[[x_c,y_c,w,h],...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutFile {
    pub canvas: [usize; 2],
    pub boxes: Vec<[f64; 4]>,
}

impl LayoutFile {
    pub fn from_sequence(seq: &LayoutSequence, canvas: (usize, usize)) -> Self {
        Self {
            canvas: [canvas.0, canvas.1],
            boxes: seq.params.iter().map(|p| p.to_array()).collect(),
        }
    }

    pub fn to_sequence(&self) -> LayoutSequence {
        LayoutSequence::new(self.boxes.iter().map(|&b| LayoutParams::from_array(b)).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("layout serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, LayoutError> {
        serde_json::from_str(s).map_err(|e| LayoutError::Json(e.to_string()))
    }
}
