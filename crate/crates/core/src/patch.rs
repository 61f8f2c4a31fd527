//! Patch and image containers.

use std::ops::Deref;

use crate::error::{Error, Result};

/// A `width x height` block of pixel values stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    values: Vec<f64>,
    width: usize,
    height: usize,
}

impl Patch {
    pub fn new(values: Vec<f64>, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("patch dimensions must be positive"));
        }
        if width * height != values.len() {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: values.len(),
            });
        }
        if values.len() < 2 {
            return Err(Error::invalid("patches need at least two pixels"));
        }
        Ok(Self {
            values,
            width,
            height,
        })
    }

    /// A single-row patch, handy for vectors that have no natural 2-D shape.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, n, 1)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same shape, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.width, self.height)
    }
}

impl Deref for Patch {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl AsRef<[f64]> for Patch {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Grayscale image with real-valued pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    /// Copies the `w x h` window whose top-left corner is `(x0, y0)`.
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Patch> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(format!(
                "window {w}x{h} at ({x0},{y0}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut values = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            values.extend_from_slice(&self.pixels[row + x0..row + x0 + w]);
        }
        Patch::new(values, w, h)
    }

    /// Writes `patch` into the window at `(x0, y0)`.
    pub fn paste(&mut self, x0: usize, y0: usize, patch: &Patch) -> Result<()> {
        let (w, h) = (patch.width(), patch.height());
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid("pasted patch exceeds image bounds"));
        }
        for dy in 0..h {
            let row = (y0 + dy) * self.width + x0;
            self.pixels[row..row + w].copy_from_slice(&patch[dy * w..(dy + 1) * w]);
        }
        Ok(())
    }

    pub fn max_value(&self) -> f64 {
        self.pixels
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_rejects_shape_mismatch() {
        assert!(Patch::new(vec![1.0; 5], 2, 2).is_err());
        assert!(Patch::new(vec![1.0], 1, 1).is_err());
        assert!(Patch::new(vec![1.0; 4], 2, 2).is_ok());
    }

    #[test]
    fn window_and_paste_roundtrip() {
        let img = Image::new(4, 3, (0..12).map(f64::from).collect()).unwrap();
        let w = img.window(1, 1, 2, 2).unwrap();
        assert_eq!(w.values(), &[5.0, 6.0, 9.0, 10.0]);
        let mut other = Image::filled(4, 3, 0.0).unwrap();
        other.paste(1, 1, &w).unwrap();
        assert_eq!(other.get(2, 2), 10.0);
        assert!(img.window(3, 0, 2, 2).is_err());
    }
}
