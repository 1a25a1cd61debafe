//! Image-quality metrics and A-line profile export.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::Image;
use crate::error::{Error, Result};

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b, "mse")?;
    let n = a.pixels().len() as f64;
    Ok(a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// `10·log10(peak² / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(sr: &Image, hr: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Config(format!(
            "PSNR peak must be positive, got {peak}"
        )));
    }
    let e = mse(sr, hr)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

/// Peak used by [`psnr_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeakMode {
    /// Fixed data range of 1.0.
    #[default]
    Fixed,
    /// The maximum intensity of the reconstruction.
    Literal,
}

impl FromStr for PeakMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(PeakMode::Fixed),
            "literal" => Ok(PeakMode::Literal),
            other => Err(Error::Config(format!(
                "peak mode must be fixed or literal, got {other}"
            ))),
        }
    }
}

pub fn psnr_with(sr: &Image, hr: &Image, mode: PeakMode) -> Result<f64> {
    match mode {
        PeakMode::Fixed => psnr(sr, hr, 1.0),
        PeakMode::Literal => psnr(sr, hr, sr.max()),
    }
}

/// SSIM constants. `C3 = C2 / 2` folds the structure term into the contrast term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
    pub window: usize,
    pub sigma: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
            window: 11,
            sigma: 1.5,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimMode {
    /// Whole-image statistics.
    Global,
    /// Mean over all fully contained Gaussian-weighted windows.
    #[default]
    Windowed,
}

impl FromStr for SsimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SsimMode::Global),
            "windowed" => Ok(SsimMode::Windowed),
            other => Err(Error::Config(format!(
                "ssim mode must be global or windowed, got {other}"
            ))),
        }
    }
}

/// Combined luminance/contrast-structure form from first and second moments.
fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, p: &SsimParams) -> f64 {
    let (c1, c2) = (p.c1(), p.c2());
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

pub fn ssim(sr: &Image, hr: &Image, params: &SsimParams, mode: SsimMode) -> Result<f64> {
    sr.check_same_dims(hr, "ssim")?;
    match mode {
        SsimMode::Global => Ok(ssim_global(sr.pixels(), hr.pixels(), params)),
        SsimMode::Windowed => ssim_windowed(sr, hr, params),
    }
}

fn ssim_global(x: &[f64], y: &[f64], p: &SsimParams) -> f64 {
    let n = x.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (mx, my) = (mean(x), mean(y));
    let cov = |a: &[f64], ma: f64, b: &[f64], mb: f64| {
        a.iter()
            .zip(b)
            .map(|(u, v)| (u - ma) * (v - mb))
            .sum::<f64>()
            / n
    };
    ssim_from_moments(
        mx,
        my,
        cov(x, mx, x, mx),
        cov(y, my, y, my),
        cov(x, mx, y, my),
        p,
    )
}

/// Valid-mode separable Gaussian filtering.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * wo];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..wo {
            tmp[y * wo + x] = taps.iter().zip(&line[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp[(y + i) * wo + x])
                .sum();
        }
    }
    out
}

fn ssim_windowed(sr: &Image, hr: &Image, p: &SsimParams) -> Result<f64> {
    let (h, w, k) = (sr.height(), sr.width(), p.window);
    if h < k || w < k {
        return Err(Error::Dimension(format!(
            "windowed SSIM needs at least {k}x{k}, got {h}x{w}"
        )));
    }
    let r = (k / 2) as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * p.sigma * p.sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.into_iter().map(|t| t / total).collect();

    let (x, y) = (sr.pixels(), hr.pixels());
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(x, h, w, &taps);
    let my = filter_valid(y, h, w, &taps);
    let exx = filter_valid(&prod(x, x), h, w, &taps);
    let eyy = filter_valid(&prod(y, y), h, w, &taps);
    let exy = filter_valid(&prod(x, y), h, w, &taps);
    let n = mx.len();
    let sum: f64 = (0..n)
        .map(|i| {
            let vx = exx[i] - mx[i] * mx[i];
            let vy = eyy[i] - my[i] * my[i];
            let cxy = exy[i] - mx[i] * my[i];
            ssim_from_moments(mx[i], my[i], vx, vy, cxy, p)
        })
        .sum();
    Ok(sum / n as f64)
}

/// Intensities of one column, top to bottom, as `(row, value)`.
pub fn aline_profile(img: &Image, column: usize) -> Result<Vec<(usize, f64)>> {
    if column >= img.width() {
        return Err(Error::Index(format!(
            "column {column} outside an image of width {}",
            img.width()
        )));
    }
    Ok((0..img.height()).map(|y| (y, img.get(y, column))).collect())
}

/// `row,intensity` CSV of a single profile.
pub fn profile_csv(profile: &[(usize, f64)]) -> String {
    let mut out = String::from("row,intensity\n");
    for (row, v) in profile {
        let _ = writeln!(out, "{row},{v}");
    }
    out
}

/// One row per image row and one intensity column per image, headed by `names`.
pub fn profile_table_csv(names: &[String], images: &[Image], column: usize) -> Result<String> {
    let first = images
        .first()
        .ok_or_else(|| Error::Data("no images to profile".into()))?;
    let profiles = images
        .iter()
        .map(|img| {
            if img.height() != first.height() {
                return Err(Error::Data(format!(
                    "image heights differ: {} vs {}",
                    img.height(),
                    first.height()
                )));
            }
            aline_profile(img, column)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::from("row");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for y in 0..first.height() {
        let _ = write!(out, "{y}");
        for p in &profiles {
            let _ = write!(out, ",{}", p[y].1);
        }
        out.push('\n');
    }
    Ok(out)
}
