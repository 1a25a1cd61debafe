//! Images, column under-sampling, LR/HR pair construction, dataset manifests and
//! the synthetic B-scan phantom used as the default corpus.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::frequency;
use crate::tensor::{Real, Tensor};

/// Single-channel raster, row-major `height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Image::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .map(|(y, x)| f(y, x))
            .collect();
        Image::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub(crate) fn check_same_dims(&self, other: &Image, what: &str) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// `(1, 1, height, width)` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            [1, 1, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64(v)).collect(),
        )
        .expect("image dimensions are positive")
    }

    /// Channel 0 of sample `n`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize) -> Result<Image> {
        let [batch, _, h, w] = t.shape();
        if n >= batch {
            return Err(Error::Index(format!("sample {n} of a batch of {batch}")));
        }
        let plane = &t.sample(n)[..h * w];
        Image::new(h, w, plane.iter().map(|v| v.as_f64()).collect())
    }
}

/// Reads a PNG and scales intensities to `[0, 1]` by the bit-depth maximum.
/// Colour images are reduced to grey by averaging their colour channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    use image::DynamicImage as D;
    let data: Vec<f64> = match decoded {
        D::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        D::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        D::ImageLuma16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        D::ImageLumaA16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        D::ImageRgb8(buf) => buf
            .pixels()
            .map(|p| p.0.iter().map(|&c| c as f64).sum::<f64>() / (3.0 * 255.0))
            .collect(),
        D::ImageRgba8(buf) => buf
            .pixels()
            .map(|p| p.0[..3].iter().map(|&c| c as f64).sum::<f64>() / (3.0 * 255.0))
            .collect(),
        D::ImageRgb16(buf) => buf
            .pixels()
            .map(|p| p.0.iter().map(|&c| c as f64).sum::<f64>() / (3.0 * 65535.0))
            .collect(),
        D::ImageRgba16(buf) => buf
            .pixels()
            .map(|p| p.0[..3].iter().map(|&c| c as f64).sum::<f64>() / (3.0 * 65535.0))
            .collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported pixel layout {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Image::new(h, w, data)
}

/// Writes an 8-bit grayscale PNG; values are clamped to `[0, 1]` and rounded.
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other}", path.display())),
        })
}

/// `size × size` window whose top-left corner is drawn uniformly by ChaCha8 seeded with `seed`.
pub fn random_crop(img: &Image, size: usize, seed: u64) -> Result<Image> {
    if size == 0 || img.height < size || img.width < size {
        return Err(Error::Dimension(format!(
            "cannot crop {size}x{size} from {}x{}",
            img.height, img.width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = rng.gen_range(0..=img.height - size);
    let left = rng.gen_range(0..=img.width - size);
    Ok(crop(img, top, left, size, size))
}

fn crop(img: &Image, top: usize, left: usize, height: usize, width: usize) -> Image {
    let data = (top..top + height)
        .flat_map(|y| img.row(y)[left..left + width].iter().copied())
        .collect();
    Image {
        height,
        width,
        data,
    }
}

/// Drops the rightmost columns so the width becomes a multiple of `factor`.
pub fn trim_width(img: &Image, factor: usize) -> Result<Image> {
    let width = img.width - img.width % factor.max(1);
    if width == 0 {
        return Err(Error::Dimension(format!(
            "width {} is smaller than the factor {factor}",
            img.width
        )));
    }
    Ok(crop(img, 0, 0, img.height, width))
}

pub const SCALE_FACTORS: [usize; 3] = [2, 4, 8];

/// Keeps every `factor`-th column starting at column 0.
pub fn undersample_columns(img: &Image, factor: usize) -> Result<Image> {
    if ![1, 2, 4, 8].contains(&factor) {
        return Err(Error::Config(format!(
            "under-sampling factor must be 1, 2, 4 or 8, got {factor}"
        )));
    }
    if img.width % factor != 0 {
        return Err(Error::Dimension(format!(
            "width {} is not divisible by {factor}",
            img.width
        )));
    }
    let width = img.width / factor;
    let data = (0..img.height)
        .flat_map(|y| img.row(y).iter().step_by(factor).copied())
        .collect();
    Ok(Image {
        height: img.height,
        width,
        data,
    })
}

/// Aligned HR/LR images and their high-frequency residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub hr: Image,
    pub lr: Image,
    pub hr_hf: Image,
    pub lr_hf: Image,
    pub scale: usize,
}

/// Under-samples `hr` and decomposes both images. The LR residual is computed
/// on the already under-sampled image.
pub fn make_sample_pair(hr: &Image, factor: usize) -> Result<SamplePair> {
    let lr = undersample_columns(hr, factor)?;
    let hr_hf = frequency::decompose(hr)?.residual;
    let lr_hf = frequency::decompose(&lr)?.residual;
    Ok(SamplePair {
        hr: hr.clone(),
        lr,
        hr_hf,
        lr_hf,
        scale: factor,
    })
}

/// Bitwise-reproducible stand-in for a retinal B-scan: 5–9 horizontal bands of
/// distinct brightness following a smooth sinusoidal vertical displacement,
/// 1–3 px band edges, and laterally elongated multiplicative speckle.
pub fn generate_phantom(seed: u64, height: usize, width: usize) -> Result<Image> {
    if height < 32 || width < 32 {
        return Err(Error::Dimension(format!(
            "phantom needs at least 32x32, got {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);

    let bands: usize = rng.gen_range(5..=9);
    let mut levels: Vec<f64> = (0..bands)
        .map(|i| 0.1 + 0.75 * i as f64 / (bands - 1) as f64)
        .collect();
    levels.shuffle(&mut rng);

    let margin = hf / 8.0;
    let spacing = (hf - 2.0 * margin) / (bands - 2) as f64;
    let edges: Vec<(f64, f64)> = (0..bands - 1)
        .map(|k| {
            let centre = margin + spacing * k as f64 + rng.gen_range(-0.25..0.25) * spacing;
            let transition = rng.gen_range(1.0..3.0);
            (centre, transition)
        })
        .collect();

    let amplitude = rng.gen_range(0.4..1.0) * hf / 16.0;
    let waves = [
        (
            0.7 * amplitude,
            rng.gen_range(0.75..2.0) * wf,
            rng.gen_range(0.0..std::f64::consts::TAU),
        ),
        (
            0.3 * amplitude,
            rng.gen_range(0.3..0.6) * wf,
            rng.gen_range(0.0..std::f64::consts::TAU),
        ),
    ];
    let displacement: Vec<f64> = (0..width)
        .map(|x| {
            waves
                .iter()
                .map(|&(a, p, phase)| a * (std::f64::consts::TAU * x as f64 / p + phase).sin())
                .sum()
        })
        .collect();

    let raw: Vec<f64> = (0..height * width)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let speckle = smooth_noise(&raw, height, width, 0.7, 2.0);

    let data = (0..height)
        .flat_map(|y| (0..width).map(move |x| (y, x)))
        .map(|(y, x)| {
            let pos = y as f64 + 0.5 - displacement[x];
            let mut v = levels[0];
            for (k, &(edge, t)) in edges.iter().enumerate() {
                let s = ((pos - edge) / t + 0.5).clamp(0.0, 1.0);
                let s = s * s * (3.0 - 2.0 * s);
                v += (levels[k + 1] - levels[k]) * s;
            }
            (v * (1.0 + 0.12 * speckle[y * width + x])).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(height, width, data)
}

/// Separable Gaussian smoothing of white noise, renormalised to unit variance.
fn smooth_noise(raw: &[f64], h: usize, w: usize, sigma_y: f64, sigma_x: f64) -> Vec<f64> {
    fn taps(sigma: f64) -> Vec<f64> {
        let r = (3.0 * sigma).ceil() as isize;
        let t: Vec<f64> = (-r..=r)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        t.into_iter().map(|v| v / norm).collect()
    }
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    let tx = taps(sigma_x);
    let ty = taps(sigma_y);
    let (rx, ry) = ((tx.len() / 2) as isize, (ty.len() / 2) as isize);
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = tx
                .iter()
                .enumerate()
                .map(|(i, &c)| c * raw[y * w + reflect(x as isize + i as isize - rx, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = ty
                .iter()
                .enumerate()
                .map(|(i, &c)| c * tmp[reflect(y as isize + i as isize - ry, h) * w + x])
                .sum();
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

/// Seeded train/val/test partition of an image directory. Paths are relative
/// to the directory and use `/` separators.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub splits: BTreeMap<Split, Vec<PathBuf>>,
    pub seed: u64,
    pub crop: Option<usize>,
    pub scale: Option<usize>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> &[PathBuf] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    /// One `split<TAB>path` line per image, LF endings, splits in train/val/test order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for split in Split::ALL {
            for p in self.split(split) {
                out.push_str(split.as_str());
                out.push('\t');
                out.push_str(&path_to_slash(p));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut splits: BTreeMap<Split, Vec<PathBuf>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (split, path) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("manifest line {}: missing tab", lineno + 1)))?;
            splits
                .entry(split.parse()?)
                .or_default()
                .push(PathBuf::from(path));
        }
        Ok(DatasetManifest {
            splits,
            seed: 0,
            crop: None,
            scale: None,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn path_to_slash(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// All decodable PNG files below `root`, as sorted relative paths.
pub fn list_images(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
                && image::image_dimensions(&path).is_ok()
            {
                let rel = path.strip_prefix(root).unwrap_or(&path).to_path_buf();
                found.push(rel);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Shuffles the images under `root` with ChaCha8 seeded by `seed` and cuts the
/// list into train/val/test by `ratios`. Images beyond the ratio sum are unused.
pub fn build_manifest(
    root: impl AsRef<Path>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetManifest> {
    let (rt, rv, rs) = ratios;
    if !(rt > 0.0 && rv > 0.0 && rs > 0.0) || rt + rv + rs > 1.0 + 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to at most 1, got {ratios:?}"
        )));
    }
    let mut files = list_images(root.as_ref())?;
    if files.len() < 3 {
        return Err(Error::Data(format!(
            "{} holds {} decodable PNG images; at least 3 are needed",
            root.as_ref().display(),
            files.len()
        )));
    }
    files.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = files.len() as f64;
    let count = |r: f64| (n * r + 1e-9).floor() as usize;
    let (nt, nv, ns) = (count(rt), count(rv), count(rs));
    let mut it = files.into_iter();
    let mut splits = BTreeMap::new();
    splits.insert(Split::Train, it.by_ref().take(nt).collect());
    splits.insert(Split::Val, it.by_ref().take(nv).collect());
    splits.insert(Split::Test, it.by_ref().take(ns).collect());
    Ok(DatasetManifest {
        splits,
        seed,
        crop: None,
        scale: None,
    })
}

/// Seed for crops drawn in a given epoch: the run seed XOR the epoch index.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ epoch as u64
}
