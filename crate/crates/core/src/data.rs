//! Labeled square images: tetromino synthesis, augmentation, scaling,
//! splitting, and loading from disk.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symmetry::rotate_flat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Base,
    Augmented,
}

/// Square image with values in `[0, 255]`, stored row-major with channels last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub side: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
    /// `+1` or `-1`.
    pub label: i8,
    pub provenance: Provenance,
}

impl LabeledImage {
    pub fn new(side: usize, channels: usize, pixels: Vec<f64>, label: i8) -> Result<Self> {
        let img = Self {
            side,
            channels,
            pixels,
            label,
            provenance: Provenance::Base,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 || self.channels == 0 {
            return Err(Error::Shape("image has no pixels".into()));
        }
        if self.pixels.len() != self.side * self.side * self.channels {
            return Err(Error::Shape(format!(
                "{} values for a {}x{}x{} image",
                self.pixels.len(),
                self.side,
                self.side,
                self.channels
            )));
        }
        if self.label != 1 && self.label != -1 {
            return Err(Error::Validation(format!("label {} is not +1 or -1", self.label)));
        }
        if self.pixels.iter().any(|p| !(0.0..=255.0).contains(p)) {
            return Err(Error::Validation("pixel outside [0, 255]".into()));
        }
        Ok(())
    }

    /// Quarter-turn the image `times` times.
    pub fn rotated(&self, times: usize) -> LabeledImage {
        let c = self.channels;
        let mut out = self.clone();
        for ch in 0..c {
            let plane: Vec<f64> = self.pixels.iter().skip(ch).step_by(c).copied().collect();
            let r = rotate_flat(&plane, self.side, times).expect("square plane");
            for (k, v) in r.into_iter().enumerate() {
                out.pixels[k * c + ch] = v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassNames {
    pub positive: String,
    pub negative: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub items: Vec<LabeledImage>,
    pub class_names: ClassNames,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count_label(&self, label: i8) -> usize {
        self.items.iter().filter(|x| x.label == label).count()
    }

    /// Nonempty, both classes present, all images the same shape.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Validation("dataset is empty".into()));
        }
        if self.count_label(1) == 0 || self.count_label(-1) == 0 {
            return Err(Error::Validation("dataset must contain both classes".into()));
        }
        let (side, ch) = (self.items[0].side, self.items[0].channels);
        for x in &self.items {
            x.validate()?;
            if x.side != side || x.channels != ch {
                return Err(Error::Shape("images differ in shape".into()));
            }
        }
        Ok(())
    }

    fn with_items(&self, items: Vec<LabeledImage>) -> Dataset {
        Dataset {
            items,
            class_names: self.class_names.clone(),
        }
    }
}

/// Cells of the T and L tetrominoes before placement.
const T_CELLS: [(usize, usize); 4] = [(0, 0), (0, 1), (0, 2), (1, 1)];
const L_CELLS: [(usize, usize); 4] = [(0, 0), (1, 0), (2, 0), (2, 1)];

fn placements(cells: &[(usize, usize)], n: usize) -> Vec<Vec<f64>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut shape: Vec<(i64, i64)> = cells.iter().map(|&(i, j)| (i as i64, j as i64)).collect();
    for _ in 0..4 {
        let (mi, mj) = (
            shape.iter().map(|c| c.0).min().unwrap_or(0),
            shape.iter().map(|c| c.1).min().unwrap_or(0),
        );
        let norm: Vec<(usize, usize)> = shape
            .iter()
            .map(|&(i, j)| ((i - mi) as usize, (j - mj) as usize))
            .collect();
        let h = norm.iter().map(|c| c.0).max().unwrap_or(0) + 1;
        let w = norm.iter().map(|c| c.1).max().unwrap_or(0) + 1;
        if h <= n && w <= n {
            for di in 0..=n - h {
                for dj in 0..=n - w {
                    let mut px = vec![0.0; n * n];
                    for &(i, j) in &norm {
                        px[(i + di) * n + (j + dj)] = 255.0;
                    }
                    let key: Vec<u8> = px.iter().map(|&v| (v > 0.0) as u8).collect();
                    if seen.insert(key) {
                        out.push(px);
                    }
                }
            }
        }
        // quarter turn of the shape: (i, j) -> (j, -i)
        shape = shape.iter().map(|&(i, j)| (j, -i)).collect();
    }
    out
}

/// Every placement of the T (label +1) and L (label -1) tetromino in every
/// orientation on an `n x n` grid, foreground 255 on background 0.
pub fn gen_tetrominoes(n: usize) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::Capacity(format!(
            "a {n}x{n} grid cannot hold every tetromino orientation"
        )));
    }
    let mut items = Vec::new();
    for (cells, label) in [(&T_CELLS[..], 1i8), (&L_CELLS[..], -1i8)] {
        for px in placements(cells, n) {
            items.push(LabeledImage {
                side: n,
                channels: 1,
                pixels: px,
                label,
                provenance: Provenance::Base,
            });
        }
    }
    Ok(Dataset {
        items,
        class_names: ClassNames {
            positive: "T".into(),
            negative: "L".into(),
        },
    })
}

/// Appends `copies` noisy variants of every image: pixel plus Gaussian noise
/// of standard deviation `sigma`, clipped to `[0, 255]`.
pub fn augment_noise(d: &Dataset, sigma: f64, copies: usize, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Validation(format!("noise sigma {sigma} must be >= 0")));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Validation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = d.items.clone();
    for x in &d.items {
        for _ in 0..copies {
            let mut y = x.clone();
            for p in &mut y.pixels {
                *p = (*p + noise.sample(&mut rng)).clamp(0.0, 255.0);
            }
            y.provenance = Provenance::Augmented;
            items.push(y);
        }
    }
    Ok(d.with_items(items))
}

/// Appends the three nontrivial rotations of each image, skipping any that
/// exactly match an image already present.
pub fn augment_rotations(d: &Dataset) -> Dataset {
    let key = |x: &LabeledImage| -> Vec<u64> { x.pixels.iter().map(|v| v.to_bits()).collect() };
    let mut seen: HashSet<Vec<u64>> = d.items.iter().map(key).collect();
    let mut items = d.items.clone();
    for x in &d.items {
        for t in 1..4 {
            let mut y = x.rotated(t);
            if seen.insert(key(&y)) {
                y.provenance = Provenance::Augmented;
                items.push(y);
            }
        }
    }
    d.with_items(items)
}

/// Affine map from pixel values `[0, 255]` to rotation angles `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for AngleRange {
    fn default() -> Self {
        Self { lo: -PI, hi: PI }
    }
}

impl AngleRange {
    pub fn map(&self, pixel: f64) -> f64 {
        self.lo + (self.hi - self.lo) * pixel / 255.0
    }
}

/// `x_k = pi (2 p_k / 255 - 1)`, flattened row-major over the first channel.
pub fn scale_features(img: &LabeledImage) -> Vec<f64> {
    scale_features_with(img, &AngleRange::default())
}

pub fn scale_features_with(img: &LabeledImage, range: &AngleRange) -> Vec<f64> {
    img.pixels
        .iter()
        .step_by(img.channels)
        .map(|&p| range.map(p))
        .collect()
}

/// Encoded features and `+-1` labels ready for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Samples {
    pub fn from_dataset(d: &Dataset, range: &AngleRange) -> Samples {
        Samples {
            features: d.items.iter().map(|x| scale_features_with(x, range)).collect(),
            labels: d.items.iter().map(|x| f64::from(x.label)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Stratified seeded split; each class contributes `round(count * test_ratio)`
/// items to the test set, clamped so both splits keep every class with at
/// least two members. Items keep their original relative order.
pub fn split(d: &Dataset, test_ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_ratio > 0.0 && test_ratio < 1.0) {
        return Err(Error::Validation(format!("test ratio {test_ratio} not in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; d.len()];
    for label in [1i8, -1] {
        let mut idx: Vec<usize> = (0..d.len()).filter(|&i| d.items[i].label == label).collect();
        idx.shuffle(&mut rng);
        let count = idx.len();
        let mut k = (count as f64 * test_ratio).round() as usize;
        if count >= 2 {
            k = k.clamp(1, count - 1);
        }
        for &i in &idx[..k] {
            is_test[i] = true;
        }
    }
    let pick = |want: bool| {
        d.with_items(
            d.items
                .iter()
                .zip(&is_test)
                .filter(|(_, &t)| t == want)
                .map(|(x, _)| x.clone())
                .collect(),
        )
    };
    Ok((pick(false), pick(true)))
}

/// Filled rectangles `(row0, row1, col0, col1)` in unit-square coordinates.
const SHIRT: [(f64, f64, f64, f64); 2] = [(0.0, 1.0, 0.3, 0.7), (0.0, 0.35, 0.0, 1.0)];
const TROUSERS: [(f64, f64, f64, f64); 3] = [(0.0, 0.25, 0.2, 0.8), (0.0, 1.0, 0.2, 0.45), (0.0, 1.0, 0.55, 0.8)];

/// Garment silhouettes: a shirt (label +1) or a pair of trousers (label -1)
/// at a random scale, offset, quarter-turn, and intensity, with clipped
/// Gaussian noise. Labels alternate.
pub fn gen_garment_glyphs(side: usize, count: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if side < 8 {
        return Err(Error::Capacity(format!("glyphs need at least 8x8 pixels, got {side}")));
    }
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| Error::Validation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(count);
    for k in 0..count {
        let label: i8 = if k % 2 == 0 { 1 } else { -1 };
        let rects: &[(f64, f64, f64, f64)] = if label > 0 { &SHIRT } else { &TROUSERS };
        let size = rng.random_range(0.6..0.9) * side as f64;
        let oi = rng.random_range(0.0..=side as f64 - size);
        let oj = rng.random_range(0.0..=side as f64 - size);
        let level = rng.random_range(180.0..=255.0);
        let mut px = vec![0.0; side * side];
        for i in 0..side {
            for j in 0..side {
                // pixel centre in glyph coordinates
                let u = (i as f64 + 0.5 - oi) / size;
                let v = (j as f64 + 0.5 - oj) / size;
                if rects.iter().any(|&(r0, r1, c0, c1)| u >= r0 && u < r1 && v >= c0 && v < c1) {
                    px[i * side + j] = level;
                }
            }
        }
        let turns = rng.random_range(0..4);
        let mut px = rotate_flat(&px, side, turns)?;
        for p in &mut px {
            *p = (*p + noise.sample(&mut rng)).clamp(0.0, 255.0);
        }
        items.push(LabeledImage {
            side,
            channels: 1,
            pixels: px,
            label,
            provenance: Provenance::Base,
        });
    }
    Ok(Dataset {
        items,
        class_names: ClassNames {
            positive: "shirt".into(),
            negative: "trousers".into(),
        },
    })
}

/// Writes an 8-bit PNG (grayscale for one channel, RGB for three).
pub fn save_png(img: &LabeledImage, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.pixels.iter().map(|p| p.round().clamp(0.0, 255.0) as u8).collect();
    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::Shape(format!("cannot write a {c}-channel PNG"))),
    };
    let side = img.side as u32;
    image::save_buffer(path, &bytes, side, side, color).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

/// Writes `<root>/<class name>/<index>.png` for every item.
pub fn export_png_tree(d: &Dataset, root: &Path) -> Result<()> {
    for (label, name) in [(1i8, &d.class_names.positive), (-1, &d.class_names.negative)] {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (k, x) in d.items.iter().filter(|x| x.label == label).enumerate() {
            save_png(x, &dir.join(format!("{k:05}.png")))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    Png,
    Raw,
}

impl std::str::FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "png" => Ok(ImageFormat::Png),
            "raw" => Ok(ImageFormat::Raw),
            other => Err(Error::Validation(format!("unknown image format `{other}`"))),
        }
    }
}

/// Writes images in the raw tensor format: little-endian `u32` side,
/// `u32` channels, `u32` count, then `f64` values.
pub fn write_raw(path: &Path, images: &[LabeledImage]) -> Result<()> {
    let (side, channels) = match images.first() {
        Some(x) => (x.side, x.channels),
        None => (0, 0),
    };
    if images.iter().any(|x| x.side != side || x.channels != channels) {
        return Err(Error::Shape("raw files hold images of one shape".into()));
    }
    let mut buf = Vec::new();
    for v in [side, channels, images.len()] {
        let v = u32::try_from(v).map_err(|_| Error::Shape("dimension exceeds u32".into()))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for x in images {
        for p in &x.pixels {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a raw tensor file as `(side, channels, images)` with values unchanged.
pub fn read_raw(path: &Path) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = || Error::Shape(format!("{} is not a raw tensor file", path.display()));
    if bytes.len() < 12 {
        return Err(bad());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (side, channels, count) = (word(0), word(1), word(2));
    let per = side * side * channels;
    if bytes.len() != 12 + 8 * per * count {
        return Err(bad());
    }
    let values: Vec<f64> = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let images = if per == 0 {
        vec![Vec::new(); count]
    } else {
        values.chunks(per).map(<[f64]>::to_vec).collect()
    };
    Ok((side, channels, images))
}

/// Center-crop to a square, then area-average down (or up) to `target` per side.
fn crop_and_resize(src: &[f64], w: usize, h: usize, c: usize, target: usize) -> Vec<f64> {
    let s = w.min(h);
    let (x0, y0) = ((w - s) / 2, (h - s) / 2);
    let scale = s as f64 / target as f64;
    let mut out = vec![0.0; target * target * c];
    for ti in 0..target {
        let (ya, yb) = (ti as f64 * scale, (ti + 1) as f64 * scale);
        for tj in 0..target {
            let (xa, xb) = (tj as f64 * scale, (tj + 1) as f64 * scale);
            let mut acc = vec![0.0; c];
            let mut area = 0.0;
            for y in ya.floor() as usize..(yb.ceil() as usize).min(s) {
                let wy = (yb.min((y + 1) as f64) - ya.max(y as f64)).max(0.0);
                for x in xa.floor() as usize..(xb.ceil() as usize).min(s) {
                    let wx = (xb.min((x + 1) as f64) - xa.max(x as f64)).max(0.0);
                    let wgt = wx * wy;
                    let base = ((y0 + y) * w + (x0 + x)) * c;
                    for (a, v) in acc.iter_mut().zip(&src[base..base + c]) {
                        *a += wgt * v;
                    }
                    area += wgt;
                }
            }
            let o = (ti * target + tj) * c;
            for (k, a) in acc.into_iter().enumerate() {
                out[o + k] = (a / area).clamp(0.0, 255.0);
            }
        }
    }
    out
}

fn to_gray(px: &[f64], c: usize) -> Vec<f64> {
    px.chunks(c).map(|p| p.iter().sum::<f64>() / c as f64).collect()
}

fn decode_png(path: &Path) -> std::result::Result<(usize, usize, usize, Vec<f64>), String> {
    let img = image::open(path).map_err(|e| e.to_string())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, raw) = if img.color().has_color() {
        (3, img.to_rgb8().into_raw())
    } else {
        (1, img.to_luma8().into_raw())
    };
    Ok((w, h, c, raw.into_iter().map(f64::from).collect()))
}

/// Loads `<root>/<class>/<file>` images from exactly two class directories;
/// the first directory in name order is labeled `+1`.
pub fn load_images(root: &Path, format: ImageFormat, target_side: usize, grayscale: bool) -> Result<Dataset> {
    if target_side == 0 {
        return Err(Error::Validation("target side must be positive".into()));
    }
    let mut class_dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.len() != 2 {
        return Err(Error::Validation(format!(
            "{} must contain exactly two class directories, found {}",
            root.display(),
            class_dirs.len()
        )));
    }
    let ext = match format {
        ImageFormat::Png => "png",
        ImageFormat::Raw => "raw",
    };
    let mut items = Vec::new();
    let mut failed: Vec<PathBuf> = Vec::new();
    let mut first_error: Option<String> = None;
    for (dir, label) in class_dirs.iter().zip([1i8, -1]) {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
            .collect();
        files.sort();
        for f in files {
            let decoded: std::result::Result<Vec<(usize, usize, usize, Vec<f64>)>, String> = match format {
                ImageFormat::Png => decode_png(&f).map(|d| vec![d]),
                ImageFormat::Raw => read_raw(&f)
                    .map(|(side, c, imgs)| imgs.into_iter().map(|px| (side, side, c, px)).collect())
                    .map_err(|e| e.to_string()),
            };
            match decoded {
                Ok(list) => {
                    for (w, h, c, px) in list {
                        let (px, c) = if grayscale && c > 1 { (to_gray(&px, c), 1) } else { (px, c) };
                        let pixels = crop_and_resize(&px, w, h, c, target_side);
                        items.push(LabeledImage::new(target_side, c, pixels, label)?);
                    }
                }
                Err(msg) => {
                    first_error.get_or_insert(msg);
                    failed.push(f);
                }
            }
        }
    }
    if !failed.is_empty() {
        return Err(Error::Io {
            paths: failed,
            source: std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                first_error.unwrap_or_default(),
            ),
        });
    }
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let d = Dataset {
        items,
        class_names: ClassNames {
            positive: name(&class_dirs[0]),
            negative: name(&class_dirs[1]),
        },
    };
    d.validate_for_training()?;
    Ok(d)
}

/// Record of how a dataset file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: String,
    pub resolution: usize,
    pub noise_sigma: f64,
    pub noise_copies: usize,
    pub rotations: bool,
    pub seed: u64,
    pub dataset_path: PathBuf,
    pub items: usize,
    pub positives: usize,
    pub negatives: usize,
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string(d)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let d: Dataset = serde_json::from_str(&text)?;
    for x in &d.items {
        x.validate()?;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tetromino_counts() {
        let d = gen_tetrominoes(4).unwrap();
        assert_eq!(d.len(), 48);
        assert_eq!(d.count_label(1), 24);
        assert!(d.items.iter().all(|x| x.pixels.iter().filter(|&&p| p == 255.0).count() == 4));
        assert!(matches!(gen_tetrominoes(3), Err(Error::Capacity(_))));
    }

    #[test]
    fn noise_counts_and_labels() {
        let d = gen_tetrominoes(4).unwrap();
        let a = augment_noise(&d, 25.0, 3, 1).unwrap();
        assert_eq!(a.len(), 192);
        assert_eq!(a.count_label(1), 96);
        let z = augment_noise(&d, 0.0, 1, 1).unwrap();
        assert_eq!(z.items[48].pixels, z.items[0].pixels);
    }

    #[test]
    fn rotation_augmentation_dedups() {
        let d = gen_tetrominoes(4).unwrap();
        assert_eq!(augment_rotations(&d).len(), 48);
        let mut px = vec![0.0; 9];
        px[0] = 10.0;
        let one = Dataset {
            items: vec![LabeledImage::new(3, 1, px, -1).unwrap()],
            class_names: d.class_names.clone(),
        };
        let r = augment_rotations(&one);
        assert_eq!(r.len(), 4);
        assert!(r.items.iter().all(|x| x.label == -1));
        let flat = Dataset {
            items: vec![LabeledImage::new(3, 1, vec![7.0; 9], 1).unwrap()],
            class_names: d.class_names.clone(),
        };
        assert_eq!(augment_rotations(&flat).len(), 1);
    }

    #[test]
    fn scaling_endpoints() {
        let img = LabeledImage::new(2, 1, vec![0.0, 255.0, 127.5, 0.0], 1).unwrap();
        let x = scale_features(&img);
        assert_eq!(x[0], -PI);
        assert_eq!(x[1], PI);
        assert!(x[2].abs() < 1e-15);
    }

    #[test]
    fn png_round_trip_through_loader() {
        let d = gen_garment_glyphs(16, 8, 10.0, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_png_tree(&d, dir.path()).unwrap();
        let back = load_images(dir.path(), ImageFormat::Png, 8, true).unwrap();
        assert_eq!(back.len(), 8);
        assert_eq!(back.items[0].side, 8);
        // "shirt" sorts before "trousers", so it keeps label +1
        assert_eq!(back.class_names.positive, "shirt");
        let same = load_images(dir.path(), ImageFormat::Png, 16, true).unwrap();
        let orig = d.items.iter().find(|x| x.label == 1).unwrap();
        for (a, b) in same.items[0].pixels.iter().zip(&orig.pixels) {
            assert!((a - b).abs() <= 0.5);
        }
    }

    #[test]
    fn raw_round_trip() {
        let d = gen_tetrominoes(4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.raw");
        write_raw(&p, &d.items[..3]).unwrap();
        let (side, c, imgs) = read_raw(&p).unwrap();
        assert_eq!((side, c, imgs.len()), (4, 1, 3));
        assert_eq!(imgs[2], d.items[2].pixels);
    }

    #[test]
    fn split_is_stratified() {
        let d = gen_tetrominoes(4).unwrap();
        let (tr, te) = split(&d, 1.0 / 3.0, 5).unwrap();
        assert_eq!((tr.len(), te.len()), (32, 16));
        assert_eq!(te.count_label(1), 8);
        assert_eq!(split(&d, 1.0 / 3.0, 5).unwrap().1, te);
        assert!(split(&d, 1.0, 5).is_err());
    }
}
