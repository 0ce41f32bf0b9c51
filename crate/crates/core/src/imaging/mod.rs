//! RGB images with values in `[0, 1]`, binary PPM I/O, geometric and
//! photometric transforms, and seeded augmentation.

mod augment;
mod ppm;
mod transforms;

use crate::error::{Error, Result};

pub use augment::{augment, AugmentationConfig, AugmentationDraw};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use transforms::{
    adjust_brightness, adjust_color, flip_y, gaussian_blur, resize_bilinear, rotate_small, MAX_ROTATION_DEGREES,
};

pub const CHANNELS: usize = 3;

/// Row-major interleaved RGB image. Every pixel value is finite and lies
/// in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    /// Values outside `[0, 1]` are clamped; non-finite values are rejected.
    pub fn new(height: usize, width: usize, mut pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Image(format!("dimensions must be positive, got {height}x{width}")));
        }
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::Image(format!(
                "{height}x{width} RGB image needs {} values, got {}",
                height * width * CHANNELS,
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Image("pixel values must be finite".into()));
        }
        pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Image { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(height, width, |_, _| rgb)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                pixels.extend(f(y, x).map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 }));
            }
        }
        Image { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        for c in 0..CHANNELS {
            self.pixels[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// Mean over all pixels and channels.
    pub fn mean(&self) -> f32 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() as f32 / self.pixels.len() as f32
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Writes the image as a planar CHW block centered on zero (`v - 0.5`).
    pub fn write_chw(&self, out: &mut [f32]) {
        let plane = self.height * self.width;
        assert_eq!(out.len(), plane * CHANNELS, "output block has the wrong size");
        for (i, px) in self.pixels.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[c * plane + i] = px[c] - 0.5;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_validates_and_clamps() {
        assert!(Image::new(0, 2, vec![]).is_err());
        assert!(Image::new(1, 1, vec![0.0; 2]).is_err());
        assert!(Image::new(1, 1, vec![f32::NAN, 0.0, 0.0]).is_err());
        let img = Image::new(1, 1, vec![-1.0, 0.5, 2.0]).unwrap();
        assert_eq!(img.get(0, 0), [0.0, 0.5, 1.0]);
    }

    #[test]
    fn rgb8_round_trip_is_exact_on_quantized_values() {
        let bytes: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 13) as u8).collect();
        let img = Image::from_rgb8(2, 3, &bytes).unwrap();
        assert_eq!(img.to_rgb8(), bytes);
    }

    #[test]
    fn chw_layout() {
        let img = Image::from_fn(1, 2, |_, x| [x as f32, 0.5, 1.0]);
        let mut out = vec![0.0; 6];
        img.write_chw(&mut out);
        assert_eq!(out, [-0.5, 0.5, 0.0, 0.0, 0.5, 0.5]);
    }
}
