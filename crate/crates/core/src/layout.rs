use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a flat image vector: row-major, channels interleaved, so the
/// value at (y, x, c) sits at index `(y * width + x) * channels + c`.
/// `value_range` is the nominal pixel range the data lives in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageLayout {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub value_range: (f64, f64),
}

impl ImageLayout {
    pub fn new(height: usize, width: usize, channels: usize, value_range: (f64, f64)) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter("image dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let (lo, hi) = value_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::BadClampBounds { lo, hi });
        }
        Ok(Self { height, width, channels, value_range })
    }

    /// Grayscale layout over the default [-1, 1] range.
    pub fn gray(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, 1, (-1.0, 1.0))
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    pub(crate) fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::LayoutMismatch { expected: self.len(), got: v.len() });
        }
        Ok(())
    }
}
