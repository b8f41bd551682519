//! Axis-aligned boxes in pixel coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_tl: f64,
    pub y_tl: f64,
    pub x_br: f64,
    pub y_br: f64,
}

impl BBox {
    pub fn new(x_tl: f64, y_tl: f64, x_br: f64, y_br: f64) -> Result<Self> {
        let b = BBox { x_tl, y_tl, x_br, y_br };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x_tl, self.y_tl, self.x_br, self.y_br];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite box coordinate".into()));
        }
        if self.x_tl >= self.x_br || self.y_tl >= self.y_br {
            return Err(Error::Validation(format!(
                "degenerate box ({}, {}, {}, {})",
                self.x_tl, self.y_tl, self.x_br, self.y_br
            )));
        }
        Ok(())
    }

    /// Clamps to image bounds; the result must still be a proper box.
    pub fn clamped(&self, width: f64, height: f64) -> Result<Self> {
        BBox::new(
            self.x_tl.clamp(0.0, width),
            self.y_tl.clamp(0.0, height),
            self.x_br.clamp(0.0, width),
            self.y_br.clamp(0.0, height),
        )
    }

    pub fn width(&self) -> f64 {
        self.x_br - self.x_tl
    }

    pub fn height(&self) -> f64 {
        self.y_br - self.y_tl
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_tl + self.x_br),
            0.5 * (self.y_tl + self.y_br),
        )
    }
}
