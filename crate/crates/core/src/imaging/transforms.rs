use super::{Image, CHANNELS};
use crate::error::{Error, Result};

pub const MAX_ROTATION_DEGREES: f32 = 45.0;

/// Mirrors the image across its vertical axis.
pub fn flip_y(img: &Image) -> Image {
    let w = img.width();
    Image::from_fn(img.height(), w, |y, x| img.get(y, w - 1 - x))
}

/// Bilinear sample with coordinates clamped to the frame (edge replication).
#[inline]
fn sample(img: &Image, sy: f32, sx: f32) -> [f32; 3] {
    let (h, w) = (img.height(), img.width());
    let sy = sy.clamp(0.0, (h - 1) as f32);
    let sx = sx.clamp(0.0, (w - 1) as f32);
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (sy - y0 as f32, sx - x0 as f32);
    let (a, b, c, d) = (img.get(y0, x0), img.get(y0, x1), img.get(y1, x0), img.get(y1, x1));
    let mut out = [0.0; 3];
    for ch in 0..CHANNELS {
        let top = a[ch] + (b[ch] - a[ch]) * fx;
        let bottom = c[ch] + (d[ch] - c[ch]) * fx;
        out[ch] = top + (bottom - top) * fy;
    }
    out
}

/// Rotates counter-clockwise by `degrees` about the image centre.
pub fn rotate_small(img: &Image, degrees: f32) -> Result<Image> {
    if !degrees.is_finite() || degrees.abs() > MAX_ROTATION_DEGREES {
        return Err(Error::InvalidArgument(format!(
            "rotation angle {degrees} exceeds the ±{MAX_ROTATION_DEGREES}° limit"
        )));
    }
    if degrees == 0.0 {
        return Ok(img.clone());
    }
    let (sin, cos) = (degrees as f64).to_radians().sin_cos();
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let cx = (img.width() as f64 - 1.0) / 2.0;
    Ok(Image::from_fn(img.height(), img.width(), |y, x| {
        // inverse map; image rows grow downwards
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let sx = cx + cos * dx - sin * dy;
        let sy = cy + sin * dx + cos * dy;
        sample(img, sy as f32, sx as f32)
    }))
}

pub fn adjust_brightness(img: &Image, factor: f32) -> Result<Image> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!("brightness factor must be positive, got {factor}")));
    }
    adjust_color(img, [factor; 3])
}

pub fn adjust_color(img: &Image, gains: [f32; 3]) -> Result<Image> {
    if let Some(g) = gains.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(Error::InvalidArgument(format!("colour gains must be positive, got {g}")));
    }
    if gains == [1.0; 3] {
        return Ok(img.clone());
    }
    Ok(Image::from_fn(img.height(), img.width(), |y, x| {
        let p = img.get(y, x);
        [p[0] * gains[0], p[1] * gains[1], p[2] * gains[2]]
    }))
}

/// Bilinear resize with half-pixel-centred sampling.
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!("resize target must be positive, got {height}x{width}")));
    }
    if (height, width) == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    let ry = img.height() as f32 / height as f32;
    let rx = img.width() as f32 / width as f32;
    Ok(Image::from_fn(height, width, |y, x| {
        sample(img, (y as f32 + 0.5) * ry - 0.5, (x as f32 + 0.5) * rx - 0.5)
    }))
}

/// Separable Gaussian blur with a ±3σ kernel and clamped borders.
pub fn gaussian_blur(img: &Image, sigma: f32) -> Result<Image> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("blur sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = (img.height() as isize, img.width() as isize);
    let pass = |src: &Image, horizontal: bool| {
        Image::from_fn(src.height(), src.width(), |y, x| {
            let mut acc = [0.0f32; 3];
            for (k, i) in kernel.iter().zip(-radius..=radius) {
                let p = if horizontal {
                    src.get(y, (x as isize + i).clamp(0, w - 1) as usize)
                } else {
                    src.get((y as isize + i).clamp(0, h - 1) as usize, x)
                };
                for c in 0..CHANNELS {
                    acc[c] += k * p[c];
                }
            }
            acc
        })
    };
    Ok(pass(&pass(img, true), false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x| {
            let v = ((y * 7 + x * 13) % 17) as f32 / 16.0;
            [v, 1.0 - v, (x % 3) as f32 / 2.0]
        })
    }

    #[test]
    fn flip_examples() {
        let img = Image::new(1, 2, vec![0.1, 0.2, 0.3, 0.7, 0.8, 0.9]).unwrap();
        assert_eq!(flip_y(&img).pixels(), &[0.7, 0.8, 0.9, 0.1, 0.2, 0.3]);
        let t = textured(5, 6);
        assert_eq!(flip_y(&flip_y(&t)), t);
        let sym = Image::from_fn(3, 4, |_, x| [x.min(3 - x) as f32 / 2.0; 3]);
        assert_eq!(flip_y(&sym), sym);
    }

    #[test]
    fn rotation_identity_constant_and_limit() {
        let t = textured(9, 11);
        assert_eq!(rotate_small(&t, 0.0).unwrap(), t);
        let c = Image::filled(8, 8, [0.3, 0.6, 0.9]);
        for a in [-45.0, -7.5, 3.0, 45.0] {
            let r = rotate_small(&c, a).unwrap();
            assert!(r.pixels().iter().zip(c.pixels()).all(|(a, b)| (a - b).abs() < 1e-6));
        }
        assert!(rotate_small(&t, 45.01).is_err());
        assert!(rotate_small(&t, f32::NAN).is_err());
    }

    #[test]
    fn rotation_is_counter_clockwise() {
        let img = Image::from_fn(3, 3, |y, x| if (y, x) == (1, 2) { [1.0; 3] } else { [0.0; 3] });
        let r = rotate_small(&img, 45.0).unwrap();
        // the bright pixel right of centre moves towards the top-right corner
        let (mut best, mut at) = (0.0, (0, 0));
        for y in 0..3 {
            for x in 0..3 {
                if r.get(y, x)[0] > best {
                    best = r.get(y, x)[0];
                    at = (y, x);
                }
            }
        }
        assert_eq!(at, (0, 2));
    }

    #[test]
    fn brightness_examples() {
        let g = Image::filled(2, 2, [0.6; 3]);
        assert_eq!(adjust_brightness(&g, 1.0).unwrap(), g);
        assert!(adjust_brightness(&g, 2.0).unwrap().pixels().iter().all(|&v| v == 1.0));
        assert!(adjust_brightness(&g, 0.5).unwrap().pixels().iter().all(|&v| (v - 0.3).abs() < 1e-7));
        assert!(adjust_brightness(&g, 0.0).is_err());
        assert!(adjust_brightness(&g, -1.0).is_err());
    }

    #[test]
    fn color_examples() {
        let g = Image::filled(2, 2, [0.4; 3]);
        assert_eq!(adjust_color(&g, [1.0; 3]).unwrap(), g);
        let r = adjust_color(&g, [2.0, 1.0, 1.0]).unwrap();
        assert!(r.pixels().chunks(3).all(|p| (p[0] - 0.8).abs() < 1e-7 && p[1] == 0.4 && p[2] == 0.4));
        assert!(adjust_color(&g, [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn resize_examples() {
        let t = textured(4, 5);
        assert_eq!(resize_bilinear(&t, 4, 5).unwrap(), t);
        let c = Image::filled(3, 3, [0.25, 0.5, 0.75]);
        let r = resize_bilinear(&c, 7, 2).unwrap();
        assert_eq!((r.height(), r.width()), (7, 2));
        assert!(r.pixels().chunks(3).all(|p| p == [0.25, 0.5, 0.75]));
        let img = Image::from_fn(2, 2, |_, x| [x as f32; 3]);
        let r = resize_bilinear(&img, 2, 4).unwrap();
        for y in 0..2 {
            let row: Vec<f32> = (0..4).map(|x| r.get(y, x)[0]).collect();
            assert_eq!(row, [0.0, 0.25, 0.75, 1.0]);
        }
        assert!(resize_bilinear(&t, 0, 3).is_err());
    }

    #[test]
    fn blur_preserves_constants_and_smooths() {
        let c = Image::filled(6, 6, [0.5; 3]);
        assert!(gaussian_blur(&c, 2.0).unwrap().pixels().iter().all(|v| (v - 0.5).abs() < 1e-6));
        let t = textured(12, 12);
        let b = gaussian_blur(&t, 4.0).unwrap();
        let var = |i: &Image| {
            let m = i.mean();
            i.pixels().iter().map(|v| (v - m).powi(2)).sum::<f32>()
        };
        assert!(var(&b) < var(&t) / 4.0);
    }
}
