//! Procedural truck-rear-view scenes standing in for real cargo photos.
//!
//! Every scene is a pure function of `(seed, class, index, size)`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassCounts, ClassLabel, DatasetManifest, Origin, SampleRecord};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::imaging::{gaussian_blur, write_ppm, Image};

pub const MIN_SCENE_SIZE: usize = 64;
/// SAFE, UNSAFE, UNUSABLE counts of the reference corpus.
pub const REFERENCE_CLASS_COUNTS: [usize; 3] = [1813, 2355, 1544];

const MIN_GAP_FRACTION: f64 = 0.18;
const MAX_GAP_FRACTION: f64 = 0.28;
const TILT_DEGREES: (f64, f64) = (11.0, 22.0);
const TOPPLED_DEGREES: (f64, f64) = (62.0, 88.0);
const BLUR_SIGMA: (f64, f64) = (4.0, 6.0);
const DARK_FACTOR: (f64, f64) = (0.03, 0.14);
const CROP_SHIFT: (f64, f64) = (0.4, 0.55);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub counts: ClassCounts,
    pub seed: u64,
    /// Side length in pixels.
    pub size: usize,
}

impl SyntheticConfig {
    pub fn balanced(per_class: usize, seed: u64, size: usize) -> Self {
        SyntheticConfig { counts: ClassCounts([per_class; 3]), seed, size }
    }

    /// Class proportions of the reference corpus scaled to `total` by the
    /// largest-remainder method.
    pub fn reference_ratio(total: usize, seed: u64, size: usize) -> Self {
        let sum: usize = REFERENCE_CLASS_COUNTS.iter().sum();
        let mut counts = REFERENCE_CLASS_COUNTS.map(|c| c * total / sum);
        let mut rest: Vec<(usize, usize)> = REFERENCE_CLASS_COUNTS.iter().map(|c| c * total % sum).zip(0..).collect();
        rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let missing = total - counts.iter().sum::<usize>();
        for &(_, i) in rest.iter().take(missing) {
            counts[i] += 1;
        }
        SyntheticConfig { counts: ClassCounts(counts), seed, size }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxMeta {
    /// Centre and extents in pixels; `angle` in degrees, counter-clockwise.
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub angle: f64,
    pub toppled: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Defect {
    /// Gap between two neighbouring columns as a fraction of image width.
    Gap { fraction: f64 },
    Tilt { degrees: f64 },
    Toppled { degrees: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Degradation {
    Blur { sigma: f64 },
    Dark { factor: f64 },
    /// Scene shifted by `fraction` of the frame along (dy, dx).
    Crop { fraction: f64, dy: i8, dx: i8 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub class: ClassLabel,
    /// Class of the undegraded scene (differs from `class` for UNUSABLE).
    pub base_class: ClassLabel,
    pub size: usize,
    pub boxes: Vec<BoxMeta>,
    /// Row and thickness of each strap, in pixels.
    pub straps: Vec<(usize, usize)>,
    /// Horizontal gaps between neighbouring columns, as fractions of width.
    pub gaps: Vec<f64>,
    pub max_tilt: f64,
    pub defect: Option<Defect>,
    pub degradation: Option<Degradation>,
}

impl SceneMeta {
    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }
}

struct Canvas {
    size: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Canvas { size, px: vec![0.0; size * size * 3] }
    }

    fn put(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.size + x) * 3;
        self.px[i..i + 3].copy_from_slice(&rgb);
    }

    fn rect(&mut self, y0: usize, y1: usize, x0: usize, x1: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) {
        for y in y0..y1.min(self.size) {
            for x in x0..x1.min(self.size) {
                self.put(y, x, f(y, x));
            }
        }
    }

    /// Rotated cardboard box with a darker outline.
    fn draw_box(&mut self, b: &BoxMeta, color: [f32; 3]) {
        let (s, c) = b.angle.to_radians().sin_cos();
        let r = 0.5 * (b.width.hypot(b.height)) + 1.0;
        let lim = self.size as f64 - 1.0;
        let (y0, y1) = ((b.cy - r).max(0.0) as usize, (b.cy + r).min(lim) as usize);
        let (x0, x1) = ((b.cx - r).max(0.0) as usize, (b.cx + r).min(lim) as usize);
        let edge = color.map(|v| v * 0.55);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 + 0.5 - b.cx, y as f64 + 0.5 - b.cy);
                // into box coordinates; rows grow downwards
                let u = c * dx - s * dy;
                let v = s * dx + c * dy;
                let (hu, hv) = (b.width / 2.0, b.height / 2.0);
                if u.abs() <= hu && v.abs() <= hv {
                    let on_edge = hu - u.abs() < 1.0 || hv - v.abs() < 1.0;
                    self.put(y, x, if on_edge { edge } else { color });
                }
            }
        }
    }

    fn into_image(self) -> Image {
        Image::new(self.size, self.size, self.px).expect("canvas dimensions are consistent")
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn jitter(rng: &mut ChaCha8Rng, rgb: [f32; 3], amount: f32) -> [f32; 3] {
    rgb.map(|v| v + amount * (rng.gen::<f32>() - 0.5))
}

/// Renders SAFE or UNSAFE content and returns its image and metadata.
fn render_loaded(rng: &mut ChaCha8Rng, class: ClassLabel, size: usize) -> (Image, SceneMeta) {
    let sz = size as f64;
    let frame = ((sz * 0.08).round() as usize).max(3);
    let light = uniform(rng, (0.85, 1.1)) as f32;
    let lit = |rgb: [f32; 3]| rgb.map(|v| v * light);
    let mut cv = Canvas::new(size);

    // case structure frame
    let frame_rgb = lit([0.13, 0.13, 0.15]);
    cv.rect(0, size, 0, size, |_, _| frame_rgb);
    // back wall with corrugation
    let wall = lit(jitter(rng, [0.62, 0.64, 0.68], 0.08));
    let rib = (size / 16).max(3);
    cv.rect(frame, size - frame, frame, size - frame, |_, x| {
        if x % rib == 0 {
            wall.map(|v| v * 0.88)
        } else {
            wall
        }
    });
    // wooden floor
    let floor_y = size - frame - ((sz * 0.12).round() as usize).max(4);
    let wood = lit(jitter(rng, [0.45, 0.33, 0.2], 0.06));
    let plank = (size / 20).max(2);
    cv.rect(floor_y, size - frame, frame, size - frame, |y, _| {
        if (y - floor_y) % plank == 0 {
            wood.map(|v| v * 0.8)
        } else {
            wood
        }
    });

    let inner_w = (size - 2 * frame) as f64;
    let hold_h = (floor_y - frame) as f64;
    let n_cols = rng.gen_range(2..=4usize);
    let mut defect = None;
    let kind = if class == ClassLabel::Unsafe { rng.gen_range(0..3u8) } else { u8::MAX };
    let (gap_after, gap_px) = if kind == 0 {
        let f = uniform(rng, (MIN_GAP_FRACTION, MAX_GAP_FRACTION));
        defect = Some(Defect::Gap { fraction: f });
        (rng.gen_range(0..n_cols - 1), (f * sz).ceil())
    } else {
        (usize::MAX, 0.0)
    };
    let col_w = (inner_w - gap_px) / n_cols as f64;
    let rows = rng.gen_range(1..=3usize);
    let stack_frac = uniform(rng, (0.5, 0.8));
    let mut boxes = Vec::new();
    let mut x = frame as f64;
    let mut gaps = Vec::new();
    for col in 0..n_cols {
        // SAFE stacks are level so straps run across; UNSAFE ones vary
        let col_rows = if class == ClassLabel::Safe { rows } else { rng.gen_range(1..=3usize) };
        let box_h = hold_h * stack_frac / col_rows as f64;
        for row in 0..col_rows {
            boxes.push(BoxMeta {
                cx: x + col_w / 2.0,
                cy: floor_y as f64 - box_h * (row as f64 + 0.5),
                width: col_w,
                height: box_h,
                angle: 0.0,
                toppled: false,
            });
        }
        x += col_w;
        if col + 1 < n_cols {
            if col == gap_after {
                x += gap_px;
                gaps.push(gap_px / sz);
            } else {
                gaps.push(0.0);
            }
        }
    }
    if kind == 1 || kind == 2 {
        // pick the top box of a random column
        let col_tops: Vec<usize> =
            (0..boxes.len()).filter(|&i| i + 1 == boxes.len() || boxes[i + 1].cx != boxes[i].cx).collect();
        let i = col_tops[rng.gen_range(0..col_tops.len())];
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        if kind == 1 {
            let deg = sign * uniform(rng, TILT_DEGREES);
            boxes[i].angle = deg;
            defect = Some(Defect::Tilt { degrees: deg.abs() });
        } else {
            let deg = sign * uniform(rng, TOPPLED_DEGREES);
            let b = &mut boxes[i];
            b.angle = deg;
            b.toppled = true;
            // lies on the floor in front of the stacks
            b.cy = floor_y as f64 + (size - frame - floor_y) as f64 / 2.0;
            b.cx = uniform(rng, (frame as f64 + b.height / 2.0, (size - frame) as f64 - b.height / 2.0));
            defect = Some(Defect::Toppled { degrees: deg.abs() });
        }
    }
    // draw upright boxes first so tilted ones land on top
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by_key(|&i| boxes[i].angle != 0.0);
    for i in order {
        let color = lit(jitter(rng, [0.72, 0.55, 0.35], 0.12));
        cv.draw_box(&boxes[i], color);
    }

    let mut straps = Vec::new();
    if class == ClassLabel::Safe {
        let thick = (size / 32).max(2);
        let top = floor_y as f64 - hold_h * stack_frac;
        let strap_rgb = lit(jitter(rng, [0.95, 0.75, 0.1], 0.08));
        for k in 0..rng.gen_range(1..=2usize) {
            let t = (k as f64 + 1.0) / 3.0 + uniform(rng, (-0.08, 0.08));
            let y = (top + t * (floor_y as f64 - top)) as usize;
            cv.rect(y, y + thick, frame, size - frame, |_, _| strap_rgb);
            straps.push((y, thick));
        }
    }

    // sensor noise
    for v in cv.px.iter_mut() {
        *v += 0.03 * (rng.gen::<f32>() - 0.5);
    }
    let max_tilt = boxes.iter().map(|b| b.angle.abs()).fold(0.0, f64::max);
    let meta = SceneMeta {
        class,
        base_class: class,
        size,
        boxes,
        straps,
        gaps,
        max_tilt,
        defect,
        degradation: None,
    };
    (cv.into_image(), meta)
}

/// Outside view used to fill the part of the frame a crop shifts away:
/// sky above the horizon, asphalt below.
fn outside(rng: &mut ChaCha8Rng, size: usize) -> Image {
    let sky = jitter(rng, [0.58, 0.72, 0.88], 0.08);
    let road = jitter(rng, [0.33, 0.34, 0.36], 0.06);
    let horizon = size * 2 / 5;
    let noise: Vec<f32> = (0..size * size).map(|_| 0.08 * (rng.gen::<f32>() - 0.5)).collect();
    Image::from_fn(size, size, |y, x| {
        let n = noise[y * size + x];
        if y < horizon { sky } else { road }.map(|v| v + n)
    })
}

fn degrade(rng: &mut ChaCha8Rng, img: &Image) -> (Image, Degradation) {
    let size = img.height();
    match rng.gen_range(0..3u8) {
        0 => {
            let sigma = uniform(rng, BLUR_SIGMA);
            (gaussian_blur(img, sigma as f32).expect("sigma is positive"), Degradation::Blur { sigma })
        }
        1 => {
            let factor = uniform(rng, DARK_FACTOR);
            let f = factor as f32;
            let p = img.pixels().iter().map(|v| v * f).collect();
            (Image::new(size, size, p).expect("same shape"), Degradation::Dark { factor })
        }
        _ => {
            let fraction = uniform(rng, CROP_SHIFT);
            let (dy, dx): (i8, i8) = [(0, 1), (0, -1), (1, 0), (-1, 0)][rng.gen_range(0..4usize)];
            let shift = (fraction * size as f64).round() as isize;
            let fill = outside(rng, size);
            let out = Image::from_fn(size, size, |y, x| {
                let sy = y as isize - dy as isize * shift;
                let sx = x as isize - dx as isize * shift;
                if (0..size as isize).contains(&sy) && (0..size as isize).contains(&sx) {
                    img.get(sy as usize, sx as usize)
                } else {
                    fill.get(y, x)
                }
            });
            (out, Degradation::Crop { fraction, dy, dx })
        }
    }
}

/// Renders scene `index` of `class`.
pub fn render_scene(seed: u64, class: ClassLabel, index: usize, size: usize) -> Result<(Image, SceneMeta)> {
    if size < MIN_SCENE_SIZE {
        return Err(Error::InvalidArgument(format!(
            "scene size {size} px is too small to render the frame (minimum {MIN_SCENE_SIZE})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class.index() as u64) << 40) | index as u64);
    if class != ClassLabel::Unusable {
        return Ok(render_loaded(&mut rng, class, size));
    }
    let base = if rng.gen::<bool>() { ClassLabel::Safe } else { ClassLabel::Unsafe };
    let (img, mut meta) = render_loaded(&mut rng, base, size);
    let (img, d) = degrade(&mut rng, &img);
    meta.class = ClassLabel::Unusable;
    meta.degradation = Some(d);
    Ok((img, meta))
}

pub fn generate_synthetic(root: impl AsRef<Path>, cfg: &SyntheticConfig) -> Result<DatasetManifest> {
    generate_synthetic_with(root, cfg, Exec::default())
}

/// Writes `images/<id>.ppm`, `meta/<id>.json` and `manifest.jsonl` under
/// `root`. Records are ordered by class, then index.
pub fn generate_synthetic_with(root: impl AsRef<Path>, cfg: &SyntheticConfig, exec: Exec) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if cfg.size < MIN_SCENE_SIZE {
        return Err(Error::InvalidArgument(format!(
            "scene size {} px is too small to render the frame (minimum {MIN_SCENE_SIZE})",
            cfg.size
        )));
    }
    for dir in ["images", "meta"] {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(d, e))?;
    }
    let jobs: Vec<(ClassLabel, usize)> =
        ClassLabel::ALL.iter().flat_map(|&l| (0..cfg.counts.get(l)).map(move |i| (l, i))).collect();
    let records = exec.try_map(jobs.len(), |j| -> Result<SampleRecord> {
        let (label, i) = jobs[j];
        let id = format!("{}-{i:05}", label.as_str().to_lowercase());
        let (img, meta) = render_scene(cfg.seed, label, i, cfg.size)?;
        let rel = PathBuf::from("images").join(format!("{id}.ppm"));
        write_ppm(root.join(&rel), &img)?;
        let meta_path = root.join("meta").join(format!("{id}.json"));
        std::fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(meta_path, e))?;
        Ok(SampleRecord { id, path: rel, label, origin: Origin::Synthetic })
    })?;
    let m = DatasetManifest::new(root, records)?;
    m.save_in_root()?;
    Ok(m)
}
