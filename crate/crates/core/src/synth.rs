//! Deterministic synthetic water-surface scenes with floating objects.
//!
//! A scene is a noisy background (low-frequency ripples, optional bright
//! vertical reflection streaks, small bright bubble speckles that are *not*
//! annotated) with a handful of flat-shaded objects on top. Each object's
//! size bin is drawn from [`SceneSpec::bin_mix`], then an area inside that
//! bin and an aspect ratio are drawn and the shape is rasterized. The
//! annotation box is the exact bounding box of the rasterized mask. Objects
//! never share pixels, so every box stays tight.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{size_bin, Annotation, BoundingBox, SizeBin, MEDIUM_MAX_AREA, SMALL_MAX_AREA};
use crate::evaluation::iou;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Object proportions over (small, medium, large) used by default.
pub const DEFAULT_BIN_MIX: [f64; 3] = [0.227, 0.677, 0.096];
/// Largest IoU allowed between any two object boxes in a scene.
pub const MAX_OBJECT_IOU: f64 = 0.3;

const SMALL_MIN_AREA: f64 = 100.0;
const LARGE_MAX_AREA: f64 = 128.0 * 128.0;
const ASPECT_LIMIT: f64 = 2.0;
const PLACEMENT_ATTEMPTS: usize = 400;
const SCENE_ATTEMPTS: usize = 8;
const NOISE_AMPLITUDE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {wanted} objects without overlap after {attempts} attempts")]
    Placement { wanted: usize, attempts: usize },
    #[error("at least one image is required")]
    NoImages,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Ellipse,
    Rectangle,
    Polygon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    #[default]
    Gray,
    Rgb,
}

impl ColorMode {
    pub fn channels(self) -> usize {
        match self {
            ColorMode::Gray => 1,
            ColorMode::Rgb => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub base_luminance: f64,
    pub ripple_amplitude: f64,
    /// Probability that an image carries reflection streaks.
    pub streak_probability: f64,
    /// Expected bubble speckles per pixel.
    pub bubble_density: f64,
}

impl Default for Background {
    fn default() -> Self {
        Self {
            base_luminance: 0.45,
            ripple_amplitude: 0.06,
            streak_probability: 0.5,
            bubble_density: 0.0015,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    /// Inclusive range of objects per image.
    pub objects_per_image: (usize, usize),
    pub bin_mix: [f64; 3],
    pub background: Background,
    pub shapes: Vec<Shape>,
    /// Range of absolute luminance offset between an object and the background.
    pub contrast: (f64, f64),
    pub color: ColorMode,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 160,
            height: 160,
            objects_per_image: (1, 5),
            bin_mix: DEFAULT_BIN_MIX,
            background: Background::default(),
            shapes: vec![Shape::Ellipse, Shape::Rectangle, Shape::Polygon],
            contrast: (0.2, 0.45),
            color: ColorMode::Gray,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |s: String| Err(SynthError::InvalidSpec(s));
        if self.width < 32 || self.height < 32 {
            return bad(format!(
                "image must be at least 32x32, got {}x{}",
                self.width, self.height
            ));
        }
        if self.bin_mix.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad(format!("bin proportions must lie in [0, 1], got {:?}", self.bin_mix));
        }
        let total: f64 = self.bin_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("bin proportions must sum to 1, got {total}"));
        }
        let (lo, hi) = self.objects_per_image;
        if lo > hi {
            return bad(format!("objects per image range {lo}..={hi} is empty"));
        }
        let (c0, c1) = self.contrast;
        if !(0.0 <= c0 && c0 <= c1 && c1 <= 1.0) {
            return bad(format!("contrast range ({c0}, {c1}) must satisfy 0 <= lo <= hi <= 1"));
        }
        if self.shapes.is_empty() {
            return bad("at least one shape is required".into());
        }
        let b = &self.background;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(b.base_luminance) && unit(b.ripple_amplitude) && unit(b.streak_probability) && unit(b.bubble_density))
        {
            return bad("background parameters must lie in [0, 1]".into());
        }
        for (bin, &p) in SizeBin::ALL.iter().zip(&self.bin_mix) {
            if p > 0.0 && self.area_range(*bin).is_none() {
                return bad(format!(
                    "{}x{} image cannot hold a {} object",
                    self.width,
                    self.height,
                    bin.name()
                ));
            }
        }
        Ok(())
    }

    /// Area range sampled for a bin, shrunk to what fits in the image.
    fn area_range(&self, bin: SizeBin) -> Option<(f64, f64)> {
        let side = self.width.min(self.height) as f64 - 2.0;
        let cap = side * side / ASPECT_LIMIT;
        let (lo, hi) = match bin {
            SizeBin::Small => (SMALL_MIN_AREA, SMALL_MAX_AREA as f64),
            SizeBin::Medium => (SMALL_MAX_AREA as f64 + 1.0, MEDIUM_MAX_AREA as f64),
            SizeBin::Large => (MEDIUM_MAX_AREA as f64 + 1.0, LARGE_MAX_AREA),
        };
        let hi = hi.min(cap);
        (hi > lo).then_some((lo, hi))
    }
}

/// A rendered scene. `labels` holds, for every pixel, 0 for background or
/// `k + 1` where `k` indexes `annotation.boxes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `[C, H, W]` with values in `[0, 1]`, quantized to 8 bits.
    pub pixels: Tensor,
    pub annotation: Annotation,
    pub labels: Vec<u16>,
}

struct Mask {
    bbox: BoundingBox,
    pixels: Vec<(u32, u32)>,
}

fn log_uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    rng.uniform(lo.ln(), hi.ln()).exp()
}

/// Rasterizes a shape with nominal size `w x h` at `(x0, y0)`; pixel centers decide membership.
fn rasterize(shape: Shape, x0: f64, y0: f64, w: f64, h: f64, rng: &mut Rng) -> Vec<(u32, u32)> {
    let (cx, cy) = (x0 + w / 2.0, y0 + h / 2.0);
    let (rx, ry) = (w / 2.0, h / 2.0);
    let polygon: Vec<(f64, f64)> = if shape == Shape::Polygon {
        let k = rng.range_inclusive(5, 9);
        let step = 2.0 * core::f64::consts::PI / k as f64;
        (0..k)
            .map(|i| {
                let a = (i as f64 + rng.uniform(-0.3, 0.3)) * step;
                let r = rng.uniform(0.6, 1.0);
                (cx + r * rx * a.cos(), cy + r * ry * a.sin())
            })
            .collect()
    } else {
        Vec::new()
    };
    let inside = |px: f64, py: f64| match shape {
        Shape::Ellipse => {
            let (dx, dy) = ((px - cx) / rx, (py - cy) / ry);
            dx * dx + dy * dy <= 1.0
        }
        Shape::Rectangle => px >= x0 && px < x0 + w && py >= y0 && py < y0 + h,
        Shape::Polygon => point_in_polygon(px, py, &polygon),
    };
    let mut out = Vec::new();
    let (ys, ye) = (Float::floor(y0) as u32, Float::ceil(y0 + h) as u32);
    let (xs, xe) = (Float::floor(x0) as u32, Float::ceil(x0 + w) as u32);
    for y in ys..ye {
        for x in xs..xe {
            if inside(x as f64 + 0.5, y as f64 + 0.5) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Even-odd rule.
fn point_in_polygon(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn mask_bbox(pixels: &[(u32, u32)]) -> Option<BoundingBox> {
    let xmin = pixels.iter().map(|p| p.0).min()?;
    let xmax = pixels.iter().map(|p| p.0).max()? + 1;
    let ymin = pixels.iter().map(|p| p.1).min()?;
    let ymax = pixels.iter().map(|p| p.1).max()? + 1;
    Some(BoundingBox { xmin, ymin, xmax, ymax })
}

/// Draws one object of the given bin that fits the image and does not clash
/// with `placed`.
fn place_object(spec: &SceneSpec, bin: SizeBin, occupied: &[bool], placed: &[Mask], rng: &mut Rng) -> Option<Mask> {
    let (lo, hi) = spec.area_range(bin)?;
    let (iw, ih) = (spec.width as f64, spec.height as f64);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let area = log_uniform(rng, lo, hi);
        let aspect = log_uniform(rng, 1.0 / ASPECT_LIMIT, ASPECT_LIMIT);
        let shape = spec.shapes[rng.below(spec.shapes.len() as u64) as usize];
        let w = (area * aspect).sqrt();
        let h = (area / aspect).sqrt();
        if w > iw - 2.0 || h > ih - 2.0 {
            continue;
        }
        let x0 = rng.uniform(1.0, iw - 1.0 - w);
        let y0 = rng.uniform(1.0, ih - 1.0 - h);
        let pixels = rasterize(shape, x0, y0, w, h, rng);
        let Some(bbox) = mask_bbox(&pixels) else { continue };
        if size_bin(&bbox) != bin || !bbox.fits_within(spec.width, spec.height) {
            continue;
        }
        if placed.iter().any(|m| iou(&m.bbox, &bbox) > MAX_OBJECT_IOU) {
            continue;
        }
        if pixels.iter().any(|&(x, y)| occupied[(y * spec.width + x) as usize]) {
            continue;
        }
        return Some(Mask { bbox, pixels });
    }
    None
}

fn render_background(spec: &SceneSpec, rng: &mut Rng) -> Vec<f64> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let bg = &spec.background;
    let mut lum = vec![0.0; w * h];
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            let angle = rng.uniform(0.0, core::f64::consts::PI);
            let period = rng.uniform(20.0, 60.0);
            let phase = rng.uniform(0.0, 2.0 * core::f64::consts::PI);
            (angle, period, phase)
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let mut v = bg.base_luminance;
            for &(angle, period, phase) in &waves {
                let t = x as f64 * angle.cos() + y as f64 * angle.sin();
                v += bg.ripple_amplitude / 2.0 * (2.0 * core::f64::consts::PI * t / period + phase).sin();
            }
            lum[y * w + x] = v;
        }
    }
    if rng.bernoulli(bg.streak_probability) {
        for _ in 0..rng.range_inclusive(1, 3) {
            let center = rng.uniform(0.0, w as f64);
            let half = rng.uniform(1.0, 4.0);
            let gain = rng.uniform(0.1, 0.25);
            for x in 0..w {
                let d = (x as f64 + 0.5 - center).abs() / half;
                if d < 1.0 {
                    let add = gain * (1.0 - d * d);
                    for y in 0..h {
                        lum[y * w + x] += add;
                    }
                }
            }
        }
    }
    let bubbles = Float::round(bg.bubble_density * (w * h) as f64) as usize;
    for _ in 0..bubbles {
        let bx = rng.below(w as u64) as i64;
        let by = rng.below(h as u64) as i64;
        let gain = rng.uniform(0.2, 0.4);
        for (dx, dy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (x, y) = (bx + dx, by + dy);
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                lum[y as usize * w + x as usize] += if dx == 0 && dy == 0 { gain } else { gain / 2.0 };
            }
        }
    }
    lum
}

fn quantize(v: f64) -> f64 {
    Float::round(v.clamp(0.0, 1.0) * 255.0) / 255.0
}

fn try_scene(spec: &SceneSpec, rng: &mut Rng) -> Option<LabeledImage> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut lum = render_background(spec, rng);
    let wanted = rng.range_inclusive(spec.objects_per_image.0, spec.objects_per_image.1);
    let mut occupied = vec![false; w * h];
    let mut masks: Vec<Mask> = Vec::with_capacity(wanted);
    // Largest first: big objects need the empty canvas, small ones fill gaps.
    let mut bins: Vec<SizeBin> = (0..wanted)
        .map(|_| SizeBin::ALL[rng.categorical(&spec.bin_mix)])
        .collect();
    bins.sort_by_key(|b| core::cmp::Reverse(b.index()));
    for bin in bins {
        let mask = place_object(spec, bin, &occupied, &masks, rng)?;
        for &(x, y) in &mask.pixels {
            occupied[y as usize * w + x as usize] = true;
        }
        masks.push(mask);
    }

    let channels = spec.color.channels();
    let mut tint = vec![[1.0; 3]; masks.len() + 1];
    let mut labels = vec![0u16; w * h];
    for (k, m) in masks.iter().enumerate() {
        let contrast = rng.uniform(spec.contrast.0, spec.contrast.1);
        let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
        let base = spec.background.base_luminance + sign * contrast;
        if spec.color == ColorMode::Rgb {
            tint[k + 1] = [rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.4)];
        }
        for &(x, y) in &m.pixels {
            let i = y as usize * w + x as usize;
            lum[i] = base;
            labels[i] = (k + 1) as u16;
        }
    }
    if spec.color == ColorMode::Rgb {
        tint[0] = [0.85, 1.0, 1.1];
    }
    let mut data = vec![0.0; channels * w * h];
    for i in 0..w * h {
        let noise = rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE);
        let t = tint[labels[i] as usize];
        for c in 0..channels {
            data[c * w * h + i] = quantize((lum[i] + noise) * t[c]);
        }
    }
    let pixels = Tensor::new(vec![channels, h, w], data).expect("buffer matches shape");
    let annotation = Annotation::new("scene", spec.width, spec.height, masks.iter().map(|m| m.bbox).collect())
        .expect("boxes come from in-bounds masks");
    Some(LabeledImage {
        pixels,
        annotation,
        labels,
    })
}

/// Renders one scene. Dense specs are retried a few times from the same
/// random stream before giving up.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<LabeledImage, SynthError> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    for _ in 0..SCENE_ATTEMPTS {
        if let Some(img) = try_scene(spec, &mut rng) {
            return Ok(img);
        }
    }
    Err(SynthError::Placement {
        wanted: spec.objects_per_image.1,
        attempts: SCENE_ATTEMPTS * PLACEMENT_ATTEMPTS,
    })
}

/// Seed of the `index`-th scene of a dataset.
pub fn scene_seed(master: u64, index: usize) -> u64 {
    Rng::substream(master, index as u64 + 1).next_u64()
}

pub fn image_id(index: usize) -> String {
    format!("synth_{index:05}")
}

/// `n_images` scenes, each from its own seed derived from `seed`, with image ids
/// `synth_00000`, `synth_00001`, ...
pub fn generate_dataset(spec: &SceneSpec, n_images: usize, seed: u64) -> Result<Vec<LabeledImage>, SynthError> {
    if n_images == 0 {
        return Err(SynthError::NoImages);
    }
    (0..n_images)
        .map(|i| {
            let mut img = generate_scene(spec, scene_seed(seed, i))?;
            img.annotation.image_id = image_id(i);
            Ok(img)
        })
        .collect()
}
