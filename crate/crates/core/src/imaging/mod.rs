//! Image and label-map representations and the operations on them.
//!
//! Working images are `f64` RGB planes in `[0, 255]`; 8-bit quantization
//! only happens at file boundaries.

pub mod color;
pub mod io;
pub mod labels;
pub mod resize;

pub use color::{hsv_to_rgb, rgb_to_hsv, shift_hue, shift_saturation, HsvPlane, JITTER_LIMIT};
pub use io::{load_image, load_labelmap, load_palette, save_image, save_labelmap, save_palette};
pub use labels::{colorize_labels, decode_labels, FaceClass, LabelMap, Palette, NUM_CLASSES};
pub use resize::{resize, resize_labels, ResizeMode};

use crate::error::{Error, Result};

/// `height × width × 3` RGB image, row-major, values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!("image dimensions must be positive, got {height}x{width}")));
    }
    Ok(())
}

impl ImagePlane {
    /// Validating constructor: rejects values outside `[0, 255]` (including NaN).
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width * 3 {
            return Err(Error::dim("ImagePlane::new", height * width * 3, data.len()));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {bad} outside [0, 255]")));
        }
        Ok(Self { height, width, data })
    }

    /// Like [`ImagePlane::new`] but clamps into range; NaN becomes 0.
    pub fn new_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 255.0) };
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        check_dims(height, width)?;
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    /// Build from a per-pixel function `(y, x) -> [r, g, b]`; values are clamped.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        check_dims(height, width)?;
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x));
            }
        }
        Self::new_clamped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Per-pixel map; outputs are clamped to `[0, 255]`.
    pub fn map_pixels(&self, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> ImagePlane {
        let data = self
            .data
            .chunks_exact(3)
            .flat_map(|p| f([p[0], p[1], p[2]]).map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 255.0) }))
            .collect();
        ImagePlane {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_validates() {
        assert!(ImagePlane::new(1, 1, vec![0.0, 128.0, 255.0]).is_ok());
        assert!(ImagePlane::new(1, 1, vec![0.0, 128.0, 255.5]).is_err());
        assert!(ImagePlane::new(1, 1, vec![0.0, f64::NAN, 1.0]).is_err());
        assert!(ImagePlane::new(0, 1, vec![]).is_err());
        assert!(ImagePlane::new(1, 2, vec![0.0; 3]).is_err());
        let c = ImagePlane::new_clamped(1, 1, vec![-3.0, 300.0, f64::NAN]).unwrap();
        assert_eq!(c.data(), &[0.0, 255.0, 0.0]);
    }
}
