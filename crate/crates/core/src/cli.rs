//! Command-line front end: `prepare`, `train`, `eval`, `infer`, `profile` and
//! `init`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 checkpoint
//! error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataio::{
    build_manifest, list_images, load_image, random_crop, save_png, DatasetManifest, Split,
    SCALE_FACTORS,
};
use crate::error::{Error, Result};
use crate::metrics::{profile_table_csv, PeakMode, SsimMode};
use crate::model::{init_model, interpolation_params};
use crate::trainer::{
    self, evaluate, super_resolve, BicubicBaseline, Checkpoint, Dataset, EvalOptions, HaspnModel,
    Reconstructor,
};

/// Overrides `train.output` when set.
pub const OUTPUT_ENV: &str = "HASPN_OUTPUT";
pub const PAIRS_FILE: &str = "pairs.csv";

#[derive(Debug, Parser)]
#[command(
    name = "haspn",
    version,
    about = "Super-resolution of column under-sampled OCT B-scans"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split an image directory, crop every image and record the LR geometry.
    Prepare(PrepareArgs),
    /// Train from a TOML run configuration.
    Train(TrainArgs),
    /// Score a checkpoint (or the bicubic baseline) on a directory of HR images.
    Eval(EvalArgs),
    /// Restore one under-sampled image.
    Infer(InferArgs),
    /// Export one column of several images as CSV.
    Profile(ProfileArgs),
    /// Write an untrained checkpoint for a configuration.
    Init(InitArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub crop: usize,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, val and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8125, 0.125, 0.0625])]
    pub split: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate; omit together with `--baseline`.
    #[arg(long, required_unless_present = "baseline")]
    pub ckpt: Option<PathBuf>,
    /// Evaluate width-only bicubic interpolation instead of a checkpoint.
    #[arg(long)]
    pub baseline: bool,
    /// Baseline sample grid: `aligned` reproduces the kept columns, `half-pixel`
    /// follows common image resizers.
    #[arg(long, default_value = "aligned")]
    pub grid: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub scale: usize,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value = "fixed")]
    pub peak: String,
    #[arg(long, default_value = "windowed")]
    pub ssim: String,
    /// Restrict to one split of the directory's `manifest.tsv`.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long)]
    pub column: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Parameters that reduce the network to bilinear width interpolation.
    #[arg(long)]
    pub interpolation: bool,
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Checkpoint(_) | Error::State(_) => 4,
        _ => 3,
    }
}

/// Parses `std::env::args`, runs the command and reports errors on stderr.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => cmd_prepare(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Profile(a) => cmd_profile(&a),
        Command::Init(a) => cmd_init(&a),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Checkpoint(_) => e,
        other => Error::Checkpoint(format!("{}: {other}", path.display())),
    })
}

pub fn cmd_prepare(a: &PrepareArgs) -> Result<()> {
    if !SCALE_FACTORS.contains(&a.scale) {
        return Err(Error::Config(format!(
            "scale must be 2, 4 or 8, got {}",
            a.scale
        )));
    }
    if a.crop == 0 || a.crop % a.scale != 0 {
        return Err(Error::Config(format!(
            "crop ({}) must be a positive multiple of the scale ({})",
            a.crop, a.scale
        )));
    }
    let [rt, rv, rs] = a.split[..] else {
        return Err(Error::Config("split needs three fractions".into()));
    };
    let manifest = build_manifest(&a.input, (rt, rv, rs), a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut out = DatasetManifest {
        splits: Default::default(),
        seed: a.seed,
        crop: Some(a.crop),
        scale: Some(a.scale),
    };
    let mut pairs = String::from("split,path,height,width,lr_width,scale,crop_seed\n");
    for split in Split::ALL {
        for rel in manifest.split(split) {
            let crop_seed: u64 = rng.gen();
            let img = load_image(a.input.join(rel))?;
            let hr = random_crop(&img, a.crop, crop_seed)?;
            let dest_rel = Path::new("hr").join(rel);
            let dest = a.output.join(&dest_rel);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            save_png(&hr, &dest)?;
            let slash = dest_rel.to_string_lossy().replace('\\', "/");
            pairs.push_str(&format!(
                "{split},{slash},{},{},{},{},{crop_seed}\n",
                hr.height(),
                hr.width(),
                hr.width() / a.scale,
                a.scale
            ));
            out.splits.entry(split).or_default().push(dest_rel);
        }
    }
    out.write(a.output.join(trainer::MANIFEST_FILE))?;
    let pairs_path = a.output.join(PAIRS_FILE);
    fs::write(&pairs_path, pairs).map_err(|e| Error::io(&pairs_path, e))?;
    println!(
        "prepared {} train / {} val / {} test crops of {}x{} (LR width {}) in {}",
        out.split(Split::Train).len(),
        out.split(Split::Val).len(),
        out.split(Split::Test).len(),
        a.crop,
        a.crop,
        a.crop / a.scale,
        a.output.display()
    );
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut run = RunConfig::load(&a.config)?;
    if let Some(dir) = std::env::var_os(OUTPUT_ENV) {
        run.train.output = PathBuf::from(dir);
    }
    let resume = a.resume.as_deref().map(load_checkpoint).transpose()?;
    if let Some(ck) = &resume {
        if ck.run.model != run.model {
            return Err(Error::Checkpoint(format!(
                "checkpoint model section {:?} differs from the configured {:?}",
                ck.run.model, run.model
            )));
        }
    }
    let data = Dataset::from_config(&run.data, run.train.seed)?;
    let out = trainer::train(&run, &data, &run.train.output, resume)?;
    let m = &out.checkpoint.metrics;
    println!(
        "epoch {}: val_psnr={} val_ssim={} (best epoch {})",
        out.checkpoint.epoch,
        m.val_psnr,
        m.val_ssim,
        m.best_epoch.map_or("-".into(), |e| e.to_string())
    );
    println!("checkpoints in {}", run.train.output.display());
    Ok(())
}

fn eval_images(a: &EvalArgs) -> Result<Vec<(String, crate::Image)>> {
    let rels = match &a.split {
        Some(s) => {
            let split: Split = s.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            DatasetManifest::read(a.data.join(trainer::MANIFEST_FILE))?
                .split(split)
                .to_vec()
        }
        None => list_images(&a.data)?,
    };
    if rels.is_empty() {
        return Err(Error::Data(format!(
            "no PNG images in {}",
            a.data.display()
        )));
    }
    rels.iter()
        .map(|rel| {
            let name = rel.to_string_lossy().replace('\\', "/");
            Ok((name, load_image(a.data.join(rel))?))
        })
        .collect()
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let peak: PeakMode = a.peak.parse()?;
    let ssim_mode: SsimMode = a.ssim.parse()?;
    let recon: Box<dyn Reconstructor> = match &a.ckpt {
        Some(path) if !a.baseline => {
            let ck = load_checkpoint(path)?;
            Box::new(HaspnModel::new(ck.run.model.clone(), &ck.params)?)
        }
        _ => {
            if !SCALE_FACTORS.contains(&a.scale) {
                return Err(Error::Config(format!(
                    "scale must be 2, 4 or 8, got {}",
                    a.scale
                )));
            }
            Box::new(BicubicBaseline {
                scale: a.scale,
                grid: a.grid.parse()?,
            })
        }
    };
    let images = eval_images(a)?;
    let opts = EvalOptions {
        peak,
        ssim_mode,
        ..EvalOptions::new(a.scale)
    };
    let report = evaluate(recon.as_ref(), &images, &opts)?;
    report.write(&a.report)?;
    println!(
        "{} on {} images: mean_psnr_db={} mean_ssim={}",
        report.method,
        report.rows.len(),
        report.mean_psnr,
        report.mean_ssim
    );
    Ok(())
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let model = HaspnModel::new(ck.run.model.clone(), &ck.params)?;
    let lr = load_image(&a.image)?;
    let sr = super_resolve(&model, &lr)?;
    save_png(&sr, &a.out)?;
    println!(
        "{}x{} -> {}x{} written to {}",
        lr.height(),
        lr.width(),
        sr.height(),
        sr.width(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_profile(a: &ProfileArgs) -> Result<()> {
    let images = a
        .images
        .iter()
        .map(load_image)
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = a
        .images
        .iter()
        .map(|p| {
            p.file_name().map_or_else(
                || p.display().to_string(),
                |n| n.to_string_lossy().into_owned(),
            )
        })
        .collect();
    let csv = profile_table_csv(&names, &images, a.column)?;
    fs::write(&a.out, csv).map_err(|e| Error::io(&a.out, e))?;
    println!(
        "column {} of {} images written to {}",
        a.column,
        images.len(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_init(a: &InitArgs) -> Result<()> {
    let run = RunConfig::load(&a.config)?;
    let params = if a.interpolation {
        interpolation_params(&run.model)?
    } else {
        init_model(&run.model, run.train.seed)?
    };
    Checkpoint::fresh(run, params).save(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::Format("x".into())), 3);
        assert_eq!(exit_code(&Error::Dimension("x".into())), 3);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), 4);
    }

    #[test]
    fn eval_flags_parse() {
        let cli = Cli::try_parse_from([
            "haspn",
            "eval",
            "--baseline",
            "--data",
            "d",
            "--scale",
            "4",
            "--report",
            "r.csv",
            "--peak",
            "literal",
            "--ssim",
            "global",
        ])
        .unwrap();
        match cli.command {
            Command::Eval(a) => {
                assert!(a.baseline && a.ckpt.is_none());
                assert_eq!((a.peak.as_str(), a.ssim.as_str()), ("literal", "global"));
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from([
            "haspn", "eval", "--data", "d", "--scale", "4", "--report", "r"
        ])
        .is_err());
    }
}
