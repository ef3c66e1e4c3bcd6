//! Seeded synthetic segmentation data: flat-colored rectangles, ellipses
//! and bars on a textured background. Class 0 is background; each object
//! class has its own base color, jittered per object and per pixel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Sample {
    /// `(1, 3, H, W)`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `(1, H, W)`.
    pub labels: LabelMap,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub max_objects: usize,
}

impl SynthConfig {
    pub fn new(size: usize, num_classes: usize) -> Self {
        Self {
            height: size,
            width: size,
            num_classes,
            max_objects: 3,
        }
    }
}

/// Base color of object class `k` in `1..classes`: evenly spaced hues.
pub fn class_color(k: usize, classes: usize) -> [f32; 3] {
    let hue = (k - 1) as f32 / (classes - 1).max(1) as f32 * 6.0;
    let f = hue.fract();
    let (hi, lo) = (0.9f32, 0.15f32);
    let up = lo + (hi - lo) * f;
    let down = hi - (hi - lo) * f;
    match hue as usize % 6 {
        0 => [hi, up, lo],
        1 => [down, hi, lo],
        2 => [lo, hi, up],
        3 => [lo, down, hi],
        4 => [up, lo, hi],
        _ => [hi, lo, down],
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Rect { y0: f32, x0: f32, h: f32, w: f32 },
    Ellipse { cy: f32, cx: f32, ry: f32, rx: f32 },
}

impl Shape {
    fn contains(&self, y: f32, x: f32) -> bool {
        match *self {
            Shape::Rect { y0, x0, h, w } => y >= y0 && y < y0 + h && x >= x0 && x < x0 + w,
            Shape::Ellipse { cy, cx, ry, rx } => {
                let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
                dy * dy + dx * dx <= 1.0
            }
        }
    }

    fn random<R: Rng>(rng: &mut R, h: f32, w: f32) -> Self {
        match rng.gen_range(0..3) {
            0 => {
                let (sh, sw) = (rng.gen_range(14.0..32.0f32).min(h), rng.gen_range(14.0..32.0f32).min(w));
                Shape::Rect {
                    y0: rng.gen_range(0.0..=h - sh),
                    x0: rng.gen_range(0.0..=w - sw),
                    h: sh,
                    w: sw,
                }
            }
            1 => {
                let (ry, rx) = (rng.gen_range(8.0..16.0f32), rng.gen_range(8.0..16.0f32));
                Shape::Ellipse {
                    cy: rng.gen_range(0.0..h),
                    cx: rng.gen_range(0.0..w),
                    ry,
                    rx,
                }
            }
            _ => {
                let thick = rng.gen_range(10.0..14.0f32);
                let long = rng.gen_range(28.0..52.0f32);
                let (sh, sw) = if rng.gen_bool(0.5) { (thick, long) } else { (long, thick) };
                let (sh, sw) = (sh.min(h), sw.min(w));
                Shape::Rect {
                    y0: rng.gen_range(0.0..=h - sh),
                    x0: rng.gen_range(0.0..=w - sw),
                    h: sh,
                    w: sw,
                }
            }
        }
    }
}

fn jitter<R: Rng>(rng: &mut R, c: [f32; 3], amount: f32) -> [f32; 3] {
    c.map(|v| v + rng.gen_range(-amount..amount))
}

/// One sample drawn from `rng`.
pub fn generate_sample<R: Rng>(rng: &mut R, cfg: &SynthConfig) -> Sample {
    let (h, w) = (cfg.height, cfg.width);
    let gray = rng.gen_range(0.3..0.6f32);
    let bg = jitter(rng, [gray; 3], 0.05);
    let freq = rng.gen_range(0.15..0.6f32);
    let angle = rng.gen_range(0.0..std::f32::consts::PI);
    let (fy, fx) = (freq * angle.sin(), freq * angle.cos());
    let mut image = Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        bg[c] + 0.06 * (fy * y as f32 + fx * x as f32).sin()
    });
    let mut labels = LabelMap::filled([1, h, w], 0);
    let objects = rng.gen_range(1..=cfg.max_objects.max(1));
    for _ in 0..objects {
        let class = rng.gen_range(1..cfg.num_classes);
        let color = jitter(rng, class_color(class, cfg.num_classes), 0.06);
        let shape = Shape::random(rng, h as f32, w as f32);
        for y in 0..h {
            for x in 0..w {
                if shape.contains(y as f32 + 0.5, x as f32 + 0.5) {
                    labels.data_mut()[y * w + x] = class as u8;
                    for (c, v) in color.iter().enumerate() {
                        *image.plane_mut(0, c).get_mut(y * w + x).unwrap() = *v;
                    }
                }
            }
        }
    }
    for v in image.data_mut() {
        *v = (*v + rng.gen_range(-0.04..0.04f32)).clamp(0.0, 1.0);
    }
    Sample { image, labels }
}

/// `count` samples; identical for identical arguments.
pub fn synth_dataset(seed: u64, count: usize, cfg: &SynthConfig) -> Result<Vec<Sample>> {
    if cfg.num_classes < 2 || cfg.num_classes > 255 {
        return Err(Error::Config(format!("num_classes must be in 2..=255, got {}", cfg.num_classes)));
    }
    if cfg.height == 0 || cfg.width == 0 || cfg.height % 8 != 0 || cfg.width % 8 != 0 {
        return Err(Error::Config(format!(
            "synthetic image size {}x{} must be a positive multiple of 8",
            cfg.height, cfg.width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| generate_sample(&mut rng, cfg)).collect())
}

/// Stacks samples into one batch.
pub fn batch(samples: &[&Sample]) -> Result<(Tensor<f32>, LabelMap)> {
    let first = samples.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let [_, c, h, w] = first.image.dims();
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        if s.image.dims() != first.image.dims() {
            return Err(Error::Shape("batch samples differ in size".into()));
        }
        data.extend_from_slice(s.image.data());
    }
    let labels: Vec<&LabelMap> = samples.iter().map(|s| &s.labels).collect();
    Ok((Tensor::new([samples.len(), c, h, w], data)?, LabelMap::stack(&labels)?))
}
