//! Seeded synthetic wound images for desk-scale runs.
//!
//! Every image holds one filled ellipse (the wound) on a striped background.
//! The class decides the blob hue band and the stripe period; everything else
//! is drawn from the seed.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::data::{binarize_mask, resize_image, ClassMap, Dataset, Sample, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Blob hue centre per class, in degrees.
pub const HUE_CENTERS: [f64; 4] = [0.0, 60.0, 200.0, 290.0];
/// Half-width of each hue band, in degrees.
pub const HUE_SPREAD: f64 = 12.0;
/// Background stripe period per class, in pixels.
pub const STRIPE_PERIODS: [f64; 4] = [6.0, 10.0, 16.0, 26.0];

/// Rotated ellipse in pixel coordinates; pixel `(x, y)` is sampled at its
/// centre `(x + 0.5, y + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    /// Rotation of the `rx` axis, radians.
    pub theta: f64,
}

impl Ellipse {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        let (s, c) = self.theta.sin_cos();
        let u = (dx * c + dy * s) / self.rx;
        let v = (dy * c - dx * s) / self.ry;
        u * u + v * v <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem {
    pub label: usize,
    pub ellipse: Ellipse,
    pub image: RgbImage,
    /// 255 inside the ellipse, 0 elsewhere.
    pub mask: GrayImage,
}

/// `n_per_class` items for each class, class-major.
pub fn synth_generate(n_per_class: usize, seed: u64) -> Result<Vec<SynthItem>> {
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be at least 1"));
    }
    let mut rng = Rng::new(seed);
    let mut items = Vec::with_capacity(4 * n_per_class);
    for label in 0..ClassMap::NAMES.len() {
        for _ in 0..n_per_class {
            items.push(draw(label, &mut rng));
        }
    }
    Ok(items)
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn draw(label: usize, rng: &mut Rng) -> SynthItem {
    let size = IMAGE_SIZE as u32;
    let ellipse = Ellipse {
        cx: rng.uniform(36.0, 92.0),
        cy: rng.uniform(36.0, 92.0),
        rx: rng.uniform(12.0, 28.0),
        ry: rng.uniform(12.0, 28.0),
        theta: rng.uniform(0.0, std::f64::consts::PI),
    };
    let blob = hsv(
        HUE_CENTERS[label] + rng.uniform(-HUE_SPREAD, HUE_SPREAD),
        rng.uniform(0.65, 0.85),
        rng.uniform(0.55, 0.8),
    );
    let skin = hsv(rng.uniform(20.0, 35.0), rng.uniform(0.2, 0.35), rng.uniform(0.75, 0.9));
    let period = STRIPE_PERIODS[label];
    let phase = rng.uniform(0.0, std::f64::consts::TAU);

    let mut image = RgbImage::new(size, size);
    let mut mask = GrayImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let noise = rng.uniform(-0.03, 0.03);
            let inside = ellipse.contains(x, y);
            let rgb = if inside {
                blob.map(|c| c + noise)
            } else {
                let stripe = 1.0 + 0.12 * (std::f64::consts::TAU * x as f64 / period + phase).sin();
                skin.map(|c| c * stripe + noise)
            };
            image.put_pixel(x, y, Rgb(rgb.map(to_u8)));
            mask.put_pixel(x, y, Luma([if inside { 255 } else { 0 }]));
        }
    }
    SynthItem {
        label,
        ellipse,
        image,
        mask,
    }
}

/// Preprocesses items exactly as the manifest loader would.
pub fn to_dataset(items: &[SynthItem]) -> Result<Dataset> {
    let samples = items
        .iter()
        .map(|item| {
            Ok(Sample {
                image: resize_image(&item.image)?,
                mask: binarize_mask(&item.mask)?,
                label: item.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(samples))
}

/// Writes `images/`, `masks/` and `manifest.csv` under `dir`; returns the
/// manifest path.
pub fn save_synth(items: &[SynthItem], dir: &Path) -> Result<PathBuf> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut counters = [0usize; 4];
    let mut manifest = String::from("image_path,mask_path,class_name\n");
    for item in items {
        let class = ClassMap.name(item.label)?;
        let n = counters[item.label];
        counters[item.label] += 1;
        let file = format!("{class}_{n:03}.png");
        let image_path = images.join(&file);
        let mask_path = masks.join(&file);
        write_png(&image_path, |p| item.image.save_with_format(p, image::ImageFormat::Png))?;
        write_png(&mask_path, |p| item.mask.save_with_format(p, image::ImageFormat::Png))?;
        manifest.push_str(&format!("images/{file},masks/{file},{class}\n"));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub(crate) fn write_png(
    path: &Path,
    save: impl FnOnce(&Path) -> image::ImageResult<()>,
) -> Result<()> {
    save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}
