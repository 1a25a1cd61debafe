use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::dataio::{trim_width, undersample_columns, Image};
use crate::error::{Error, Result};
use crate::frequency::decompose;
use crate::metrics::{psnr_with, ssim, PeakMode, SsimMode, SsimParams};
use crate::model::{haspn_forward, HaspnOutput, ModelConfig, ParameterSet};
use crate::tensor::{Eager, Graph, Tensor};

/// Anything that maps an LR image (and its high-frequency residual) to an
/// image `scale` times wider.
pub trait Reconstructor {
    fn scale(&self) -> usize;

    fn method(&self) -> String;

    fn reconstruct(&self, lr: &Image, lr_hf: &Image) -> Result<Image>;
}

/// Trained network, evaluated in 64-bit precision.
#[derive(Clone, Debug)]
pub struct HaspnModel {
    cfg: ModelConfig,
    params: ParameterSet<f64>,
}

impl HaspnModel {
    pub fn new(cfg: ModelConfig, params: &ParameterSet<f32>) -> Result<Self> {
        cfg.validate()?;
        params.check_against(&cfg)?;
        Ok(HaspnModel {
            cfg,
            params: params.cast(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn forward(&self, lr: &Image, lr_hf: &Image) -> Result<HaspnOutput<Tensor<f64>>> {
        let mut g = Eager::new(self.params.as_map());
        let x = g.constant(lr.to_tensor());
        let xh = g.constant(lr_hf.to_tensor());
        let out = haspn_forward(&mut g, &self.cfg, &x, &xh)?;
        Ok(HaspnOutput {
            coarse: (*out.coarse).clone(),
            hf: (*out.hf).clone(),
            fused: (*out.fused).clone(),
        })
    }
}

impl Reconstructor for HaspnModel {
    fn scale(&self) -> usize {
        self.cfg.scale
    }

    fn method(&self) -> String {
        format!("haspn(g={},m={},c={})", self.cfg.g, self.cfg.m, self.cfg.c)
    }

    fn reconstruct(&self, lr: &Image, lr_hf: &Image) -> Result<Image> {
        Image::from_tensor(&self.forward(lr, lr_hf)?.fused, 0)
    }
}

/// Keys cubic convolution kernel with `a = -0.75`.
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.75;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Source position sampled by up-sampled column `j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SampleGrid {
    /// `j / scale`: the columns kept by under-sampling reappear unchanged.
    #[default]
    Aligned,
    /// `(j + 0.5) / scale - 0.5`, the convention of common image resizers.
    HalfPixel,
}

impl FromStr for SampleGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aligned" => Ok(SampleGrid::Aligned),
            "half-pixel" => Ok(SampleGrid::HalfPixel),
            other => Err(Error::Config(format!(
                "grid must be aligned or half-pixel, got {other}"
            ))),
        }
    }
}

/// Width-only bicubic up-sampling by `scale` with replicated borders.
pub fn bicubic_columns(img: &Image, scale: usize, grid: SampleGrid) -> Result<Image> {
    if scale == 0 {
        return Err(Error::Config("scale must be positive".into()));
    }
    let w = img.width();
    let out_w = w * scale;
    let taps: Vec<([usize; 4], [f64; 4])> = (0..out_w)
        .map(|j| {
            let src = match grid {
                SampleGrid::Aligned => j as f64 / scale as f64,
                SampleGrid::HalfPixel => (j as f64 + 0.5) / scale as f64 - 0.5,
            };
            let x0 = src.floor();
            let t = src - x0;
            let idx = |o: f64| (x0 + o).clamp(0.0, (w - 1) as f64) as usize;
            (
                [idx(-1.0), idx(0.0), idx(1.0), idx(2.0)],
                [
                    cubic_weight(1.0 + t),
                    cubic_weight(t),
                    cubic_weight(1.0 - t),
                    cubic_weight(2.0 - t),
                ],
            )
        })
        .collect();
    Image::from_fn(img.height(), out_w, |y, x| {
        let row = img.row(y);
        let (i, k) = &taps[x];
        (0..4).map(|q| k[q] * row[i[q]]).sum()
    })
}

/// Interpolation-only reference.
#[derive(Clone, Copy, Debug)]
pub struct BicubicBaseline {
    pub scale: usize,
    pub grid: SampleGrid,
}

impl BicubicBaseline {
    pub fn new(scale: usize) -> Self {
        BicubicBaseline {
            scale,
            grid: SampleGrid::Aligned,
        }
    }
}

impl Reconstructor for BicubicBaseline {
    fn scale(&self) -> usize {
        self.scale
    }

    fn method(&self) -> String {
        match self.grid {
            SampleGrid::Aligned => "bicubic".into(),
            SampleGrid::HalfPixel => "bicubic-half-pixel".into(),
        }
    }

    fn reconstruct(&self, lr: &Image, _lr_hf: &Image) -> Result<Image> {
        bicubic_columns(lr, self.scale, self.grid)
    }
}

/// Decomposes `lr`, reconstructs and clamps to `[0, 1]`.
pub fn super_resolve(recon: &dyn Reconstructor, lr: &Image) -> Result<Image> {
    let hf = decompose(lr)?.residual;
    Ok(recon.reconstruct(lr, &hf)?.clamped())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub scale: usize,
    pub peak: PeakMode,
    pub ssim_mode: SsimMode,
    pub ssim: SsimParams,
}

impl EvalOptions {
    pub fn new(scale: usize) -> Self {
        EvalOptions {
            scale,
            peak: PeakMode::default(),
            ssim_mode: SsimMode::default(),
            ssim: SsimParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub path: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub method: String,
    pub scale: usize,
    pub peak: PeakMode,
    pub ssim_mode: SsimMode,
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub seconds: f64,
}

impl MetricsReport {
    /// `path,psnr_db,ssim` rows; identical images show PSNR `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,psnr_db,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", csv_field(&r.path), r.psnr_db, r.ssim);
        }
        out
    }

    /// Writes the CSV and a JSON summary (means, settings, wall-clock) next to it.
    pub fn write(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        let json_path = csv_path.with_extension("json");
        let summary = serde_json::json!({
            "method": self.method,
            "scale": self.scale,
            "peak": self.peak,
            "ssim_mode": self.ssim_mode,
            "images": self.rows.len(),
            "mean_psnr_db": self.mean_psnr.to_string(),
            "mean_ssim": self.mean_ssim.to_string(),
            "seconds": self.seconds,
        });
        let text = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Data(format!("report summary: {e}")))?;
        fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Degrades each HR image (width trimmed to a multiple of the scale), restores
/// it with `recon` and scores the clamped result against the trimmed HR image.
pub fn evaluate(
    recon: &dyn Reconstructor,
    images: &[(String, Image)],
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if recon.scale() != opts.scale {
        return Err(Error::Config(format!(
            "requested scale {} but the model restores {}x",
            opts.scale,
            recon.scale()
        )));
    }
    let start = Instant::now();
    let rows = images
        .iter()
        .map(|(path, img)| {
            let hr = trim_width(img, opts.scale)?;
            let lr = undersample_columns(&hr, opts.scale)?;
            let sr = super_resolve(recon, &lr)?;
            Ok(EvalRow {
                path: path.clone(),
                psnr_db: psnr_with(&sr, &hr, opts.peak)?,
                ssim: ssim(&sr, &hr, &opts.ssim, opts.ssim_mode)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let (mean_psnr, mean_ssim) = if rows.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        )
    };
    Ok(MetricsReport {
        method: recon.method(),
        scale: opts.scale,
        peak: opts.peak,
        ssim_mode: opts.ssim_mode,
        rows,
        mean_psnr,
        mean_ssim,
        seconds: start.elapsed().as_secs_f64(),
    })
}
