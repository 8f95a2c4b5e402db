//! Dataset ingestion: manifest parsing, PNG decoding, resizing, mask
//! binarisation and stratified splitting.

use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Rng, Tensor};

/// Side length every image and mask is resized to.
pub const IMAGE_SIZE: usize = 128;

pub const MANIFEST_HEADER: [&str; 3] = ["image_path", "mask_path", "class_name"];

/// Fixed class order: alphabetical by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassMap;

impl ClassMap {
    pub const NAMES: [&'static str; 4] = [
        "foot_ulcer",
        "infected_wound",
        "leg_ulcer",
        "pressure_ulcer",
    ];

    pub fn len(&self) -> usize {
        Self::NAMES.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        Self::NAMES
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| Error::invalid(format!("unknown class name {name:?}")))
    }

    pub fn name(&self, index: usize) -> Result<&'static str> {
        Self::NAMES
            .get(index)
            .copied()
            .ok_or_else(|| Error::invalid(format!("class index {index} out of range")))
    }
}

/// One preprocessed example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[1, 3, 128, 128]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `[1, 1, 128, 128]`, values in `{0, 1}`.
    pub mask: Tensor<f32>,
    pub label: usize,
}

/// Samples in manifest order plus a train/validation partition of their
/// indices. A freshly loaded dataset has every sample in `train`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        let train = (0..samples.len()).collect();
        Dataset {
            samples,
            train,
            val: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Bilinear resize of 8-bit RGB pixels to `[1, 3, 128, 128]` scaled to `[0, 1]`.
///
/// Output pixel `d` samples source coordinate `(d + 0.5) * src / 128 - 0.5`,
/// clamped to the image, and blends its four neighbours.
pub fn resize_image(image: &RgbImage) -> Result<Tensor<f32>> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::invalid("cannot resize an empty image"));
    }
    let xs = bilinear_taps(w, IMAGE_SIZE);
    let ys = bilinear_taps(h, IMAGE_SIZE);
    let raw = image.as_raw();
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let mut data = vec![0f32; 3 * plane];
    for (dy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (dx, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let px = |x: usize, y: usize| raw[(y * w + x) * 3 + c] as f64;
                let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
                let bottom = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data[c * plane + dy * IMAGE_SIZE + dx] = (v / 255.0) as f32;
            }
        }
    }
    Tensor::from_vec(&[1, 3, IMAGE_SIZE, IMAGE_SIZE], data)
}

/// Left/right source index and blend weight for every destination index.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

fn nearest_taps(src: usize, dst: usize) -> Vec<usize> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| (((d as f64 + 0.5) * scale).floor() as usize).min(src - 1))
        .collect()
}

/// Nearest-neighbour resize to `[1, 1, 128, 128]`, then `pixel > 127 → 1`.
pub fn binarize_mask(mask: &GrayImage) -> Result<Tensor<f32>> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::invalid("cannot resize an empty mask"));
    }
    let xs = nearest_taps(w, IMAGE_SIZE);
    let ys = nearest_taps(h, IMAGE_SIZE);
    let raw = mask.as_raw();
    let mut data = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE);
    for &y in &ys {
        for &x in &xs {
            data.push(if raw[y * w + x] > 127 { 1.0 } else { 0.0 });
        }
    }
    Tensor::from_vec(&[1, 1, IMAGE_SIZE, IMAGE_SIZE], data)
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| {
        Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(decode(path)?.to_rgb8())
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(decode(path)?.to_luma8())
}

/// Parsed manifest row; paths already resolved against the manifest directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub label: usize,
}

/// Reads and validates the manifest without touching the referenced files.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let parse = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| parse(1, e.to_string()))?;
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(parse(
            1,
            format!("header must be {:?}, found {:?}", MANIFEST_HEADER.join(","), header),
        ));
    }
    let classes = ClassMap;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 || record.iter().any(str::is_empty) {
            return Err(parse(line, "expected three non-empty fields".to_string()));
        }
        let label = classes.index(&record[2]).map_err(|_| {
            Error::invalid(format!(
                "{}:{line}: unknown class name {:?}",
                path.display(),
                &record[2]
            ))
        })?;
        rows.push(ManifestRow {
            image_path: base.join(&record[0]),
            mask_path: base.join(&record[1]),
            label,
        });
    }
    Ok(rows)
}

pub fn load_sample(row: &ManifestRow) -> Result<Sample> {
    Ok(Sample {
        image: resize_image(&load_rgb(&row.image_path)?)?,
        mask: binarize_mask(&load_gray(&row.mask_path)?)?,
        label: row.label,
    })
}

/// Loads every manifest row; decoding may run in parallel but the result
/// follows row order.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let rows = read_manifest(path)?;
    let samples = par::try_map_range(rows.len(), |i| load_sample(&rows[i]))?;
    Ok(Dataset::new(samples))
}

/// Per-class seeded shuffle; `round(count * val_fraction)` samples of each
/// class go to validation. Index lists are sorted.
pub fn split_dataset(mut dataset: Dataset, val_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let classes = dataset.samples.iter().map(|s| s.label).max().map_or(0, |m| m + 1);
    let mut rng = Rng::new(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in 0..classes {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.samples[i].label == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "class {class} has {} sample; splitting needs at least 2",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        let n_val = val_count(members.len(), val_fraction);
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    dataset.train = train;
    dataset.val = val;
    Ok(dataset)
}

/// `round(count * fraction)`, kept below `count` so every class trains.
pub fn val_count(count: usize, fraction: f64) -> usize {
    ((count as f64 * fraction).round() as usize).min(count - 1)
}
