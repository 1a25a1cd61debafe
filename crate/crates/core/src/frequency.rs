//! Unsharp-masking decomposition: Gaussian blur, high-frequency residual,
//! classical sharpening, and the five-point Laplacian used by the gradient loss.

use crate::dataio::Image;
use crate::error::{Error, Result};
use crate::tensor::kernels;

pub const DECOMPOSE_KERNEL_SIZE: usize = 5;
pub const DECOMPOSE_SIGMA: f64 = 1.5;

/// Square correlation kernel, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2D {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel2D {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dy, dx)` from the centre.
    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = (self.size / 2) as isize;
        self.weights[((dy + r) * self.size as isize + dx + r) as usize]
    }
}

/// Normalised isotropic Gaussian built as the outer product of a normalised 1-D profile.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Kernel2D> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::Config(format!(
            "kernel size must be odd and at least 3, got {size}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let r = (size / 2) as isize;
    let profile: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = profile.iter().sum();
    let profile: Vec<f64> = profile.into_iter().map(|v| v / total).collect();
    let weights = profile
        .iter()
        .flat_map(|&wy| profile.iter().map(move |&wx| wy * wx))
        .collect();
    Ok(Kernel2D { size, weights })
}

/// Mirror index without repeating the border sample (`-1 → 1`, `n → n - 2`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

/// 2-D correlation with reflect padding; output has the input's dimensions.
pub fn gaussian_blur(img: &Image, kernel: &Kernel2D) -> Result<Image> {
    let k = kernel.size();
    let (h, w) = (img.height(), img.width());
    if h < k || w < k {
        return Err(Error::Dimension(format!(
            "{h}x{w} image is smaller than the {k}x{k} kernel"
        )));
    }
    let r = (k / 2) as isize;
    let cols: Vec<Vec<usize>> = (0..w)
        .map(|x| (-r..=r).map(|d| reflect(x as isize + d, w)).collect())
        .collect();
    let src = img.pixels();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (ky, dy) in (-r..=r).enumerate() {
            let line = &src[reflect(y as isize + dy, h) * w..][..w];
            let taps = &kernel.weights()[ky * k..(ky + 1) * k];
            let dst = &mut out[y * w..(y + 1) * w];
            for (x, o) in dst.iter_mut().enumerate() {
                *o += taps
                    .iter()
                    .zip(&cols[x])
                    .map(|(&t, &c)| t * line[c])
                    .sum::<f64>();
            }
        }
    }
    Image::new(h, w, out)
}

/// Blurred image and high-frequency residual, `blurred + residual = source`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub blurred: Image,
    pub residual: Image,
}

/// Splits an image with the 5×5, σ = 1.5 Gaussian: `R = O − B`.
pub fn decompose(img: &Image) -> Result<Decomposition> {
    let kernel = gaussian_kernel(DECOMPOSE_KERNEL_SIZE, DECOMPOSE_SIGMA)?;
    let blurred = gaussian_blur(img, &kernel)?;
    let residual = Image::new(
        img.height(),
        img.width(),
        img.pixels()
            .iter()
            .zip(blurred.pixels())
            .map(|(&o, &b)| o - b)
            .collect(),
    )?;
    Ok(Decomposition { blurred, residual })
}

/// Unsharp masking `S = O + k·R`, unclamped.
pub fn usm_sharpen(img: &Image, k: f64) -> Result<Image> {
    if !(k >= 0.0) {
        return Err(Error::Config(format!(
            "sharpening amount must be non-negative, got {k}"
        )));
    }
    let d = decompose(img)?;
    Image::new(
        img.height(),
        img.width(),
        img.pixels()
            .iter()
            .zip(d.residual.pixels())
            .map(|(&o, &r)| o + k * r)
            .collect(),
    )
}

/// Five-point Laplacian with replicate borders.
pub fn laplacian(img: &Image) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    if h < 3 || w < 3 {
        return Err(Error::Dimension(format!(
            "laplacian needs at least 3x3, got {h}x{w}"
        )));
    }
    let mut out = vec![0.0; h * w];
    kernels::laplacian_plane(img.pixels(), h, w, &mut out);
    Image::new(h, w, out)
}
