use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adjust_brightness, adjust_color, flip_y, rotate_small, Image, MAX_ROTATION_DEGREES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub flip_probability: f32,
    /// Degrees.
    pub max_rotation: f32,
    pub brightness_range: (f32, f32),
    pub color_gain_range: (f32, f32),
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            flip_probability: 0.5,
            max_rotation: 10.0,
            brightness_range: (0.8, 1.2),
            color_gain_range: (0.9, 1.1),
            seed: 0,
        }
    }
}

/// Parameters drawn for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationDraw {
    pub flip: bool,
    pub angle: f32,
    pub brightness: f32,
    pub gains: [f32; 3],
}

fn check_range(name: &str, (lo, hi): (f32, f32)) -> Result<()> {
    if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be a positive range containing 1.0, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

impl AugmentationConfig {
    /// A config whose every draw is the identity.
    pub fn identity(seed: u64) -> Self {
        AugmentationConfig {
            flip_probability: 0.0,
            max_rotation: 0.0,
            brightness_range: (1.0, 1.0),
            color_gain_range: (1.0, 1.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidArgument(format!(
                "flip probability must be in [0, 1], got {}",
                self.flip_probability
            )));
        }
        if !(0.0..=MAX_ROTATION_DEGREES).contains(&self.max_rotation) {
            return Err(Error::InvalidArgument(format!(
                "max rotation must be in [0, {MAX_ROTATION_DEGREES}] degrees, got {}",
                self.max_rotation
            )));
        }
        check_range("brightness range", self.brightness_range)?;
        check_range("colour gain range", self.color_gain_range)
    }

    /// Draws the parameters for `sample_index`. The stream is keyed by
    /// `(seed, sample_index)` and always consumes the same number of values.
    pub fn draw(&self, sample_index: u64) -> AugmentationDraw {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(sample_index);
        let mut uniform = |(lo, hi): (f32, f32)| {
            let u: f32 = rng.gen();
            if lo == hi {
                lo
            } else {
                lo + (hi - lo) * u
            }
        };
        let flip = uniform((0.0, 1.0)) < self.flip_probability;
        let angle = uniform((-self.max_rotation, self.max_rotation));
        let brightness = uniform(self.brightness_range);
        let gains = [
            uniform(self.color_gain_range),
            uniform(self.color_gain_range),
            uniform(self.color_gain_range),
        ];
        AugmentationDraw { flip, angle, brightness, gains }
    }
}

/// Flip, rotate, brightness, colour, in that order.
pub fn augment(img: &Image, cfg: &AugmentationConfig, sample_index: u64) -> Result<Image> {
    cfg.validate()?;
    let d = cfg.draw(sample_index);
    let mut out = if d.flip { flip_y(img) } else { img.clone() };
    out = rotate_small(&out, d.angle)?;
    out = adjust_brightness(&out, d.brightness)?;
    adjust_color(&out, d.gains)
}
