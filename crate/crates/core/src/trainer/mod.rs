//! Adam training with step decay, per-epoch validation and checkpointing, plus
//! dataset evaluation.

mod adam;
pub mod checkpoint;
mod data;
mod eval;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{Checkpoint, RunningMetrics};
pub use data::{Dataset, Entry, MANIFEST_FILE};
pub use eval::{
    bicubic_columns, evaluate, super_resolve, BicubicBaseline, EvalOptions, EvalRow, HaspnModel,
    MetricsReport, Reconstructor, SampleGrid,
};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExtractorSpec, RunConfig};
use crate::dataio::{epoch_seed, make_sample_pair, random_crop, SamplePair, Split};
use crate::error::{Error, Result};
use crate::losses::{total_term, FeatureExtractor, LossConfig, LossTerms};
use crate::model::{haspn_forward, init_model, ModelConfig, ParameterSet};
use crate::tensor::{Graph, Real, Tape, Tensor};

pub const LOG_HEADER: &str =
    "epoch,lr,loss_alpha,loss_beta,loss_gamma,loss_total,val_psnr,val_ssim";
pub const LOG_FILE: &str = "train_log.csv";
pub const BEST_FILE: &str = "best.hspn";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub batch: usize,
    pub epochs: usize,
    /// Seeds initialisation, shuffling, crops and the directory split.
    pub seed: u64,
    pub loss: LossConfig,
    pub extractor: ExtractorSpec,
    /// Directory receiving checkpoints and the training log.
    pub output: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_factor: 0.5,
            decay_every: 20,
            batch: 2,
            epochs: 200,
            seed: 0,
            loss: LossConfig::default(),
            extractor: ExtractorSpec::default(),
            output: PathBuf::from("runs/haspn"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(format!("train.{msg}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return fail("decay_factor must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return fail("beta1 and beta2 must lie strictly between 0 and 1");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if self.batch == 0 {
            return fail("batch must be at least 1");
        }
        if self.decay_every == 0 {
            return fail("decay_every must be at least 1");
        }
        let w = &self.loss.weights;
        if [w.pix, w.per, w.gra]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return fail("loss weights must be finite and non-negative");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// `lr · decay_factor^⌊epoch / decay_every⌋`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let steps = (epoch / cfg.decay_every) as i32;
    cfg.lr * cfg.decay_factor.powi(steps)
}

/// `(lr, lr_hf, hr, hr_hf)` batches.
pub fn batch_tensors<T: Real>(
    batch: &[SamplePair],
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let scale = batch[0].scale;
    if let Some(p) = batch.iter().find(|p| p.scale != scale) {
        return Err(Error::Config(format!(
            "batch mixes scales {scale} and {}",
            p.scale
        )));
    }
    let stack = |f: fn(&SamplePair) -> &crate::dataio::Image| {
        Tensor::stack(&batch.iter().map(|p| f(p).to_tensor()).collect::<Vec<_>>())
    };
    Ok((
        stack(|p| &p.lr)?,
        stack(|p| &p.lr_hf)?,
        stack(|p| &p.hr)?,
        stack(|p| &p.hr_hf)?,
    ))
}

/// Forward pass, composite loss, backpropagation and one Adam update.
pub fn train_step<T: Real>(
    params: &mut ParameterSet<T>,
    state: &mut AdamState<T>,
    batch: &[SamplePair],
    extractor: &FeatureExtractor<T>,
    model: &ModelConfig,
    train: &TrainConfig,
    rate: f64,
) -> Result<LossTerms> {
    let (lr, lr_hf, hr, hr_hf) = batch_tensors::<T>(batch)?;
    if batch[0].scale != model.scale {
        return Err(Error::Config(format!(
            "pairs are {}x, the model is {}x",
            batch[0].scale, model.scale
        )));
    }
    let (grads, terms) = {
        let mut tape = Tape::new(params.as_map());
        let x = tape.constant(lr);
        let xh = tape.constant(lr_hf);
        let y = tape.constant(hr);
        let yh = tape.constant(hr_hf);
        let out = haspn_forward(&mut tape, model, &x, &xh)?;
        let (loss, terms) = total_term(&mut tape, &out, &y, &yh, extractor, &train.loss)?;
        (tape.backward(loss)?.into_params(), terms)
    };
    adam_step(params, state, &grads, rate, &train.adam())?;
    Ok(terms)
}

/// One optimisation step as reported to observers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Zero-based epoch index.
    pub epoch: usize,
    /// Optimiser step count after the update.
    pub step: u64,
    pub rate: f64,
    pub terms: LossTerms,
}

/// One line of the training log; losses are means over the epoch's steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub loss_alpha: f64,
    pub loss_beta: f64,
    pub loss_gamma: f64,
    pub loss_total: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.loss_alpha,
            self.loss_beta,
            self.loss_gamma,
            self.loss_total,
            self.val_psnr,
            self.val_ssim
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State after the last epoch.
    pub checkpoint: Checkpoint,
    /// Epochs run in this call.
    pub epochs: Vec<EpochRecord>,
    pub checkpoint_paths: Vec<PathBuf>,
    pub best_path: PathBuf,
    pub log_path: PathBuf,
}

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.{}", checkpoint::EXTENSION)
}

/// HR validation patches: each image cropped with a fixed per-image seed.
pub fn validation_patches(run: &RunConfig, data: &Dataset) -> Result<Vec<(String, crate::Image)>> {
    data.entries(Split::Val)
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let img = e.load()?;
            let crop = random_crop(&img, run.data.crop, run.train.seed.wrapping_add(i as u64))?;
            Ok((e.name.clone(), crop))
        })
        .collect()
}

/// Runs the training loop from scratch or from `resume`, writing a checkpoint
/// per epoch, `best.hspn` whenever the validation PSNR improves, and the CSV log.
pub fn train(
    run: &RunConfig,
    data: &Dataset,
    out_dir: &Path,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    train_observed(run, data, out_dir, resume, &mut |_| {})
}

pub fn train_observed(
    run: &RunConfig,
    data: &Dataset,
    out_dir: &Path,
    resume: Option<Checkpoint>,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    run.validate()?;
    let train_entries = data.entries(Split::Train);
    if train_entries.is_empty() {
        return Err(Error::Data("the train split is empty".into()));
    }
    let mut ck = match resume {
        Some(ck) => {
            if ck.run.model != run.model {
                return Err(Error::Checkpoint(format!(
                    "checkpoint model {:?} does not match configured model {:?}",
                    ck.run.model, run.model
                )));
            }
            Checkpoint {
                run: run.clone(),
                ..ck
            }
        }
        None => Checkpoint::fresh(run.clone(), init_model(&run.model, run.train.seed)?),
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = open_log(&log_path, ck.epoch)?;

    let extractor = run.train.extractor.build::<f32>()?;
    let val = validation_patches(run, data)?;
    let eval_opts = EvalOptions::new(run.model.scale);
    let cfg = &run.train;

    let mut records = Vec::new();
    let mut paths = Vec::new();
    for e in ck.epoch..cfg.epochs {
        let rate = lr_at_epoch(cfg, e);
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, e));
        let mut order: Vec<usize> = (0..train_entries.len()).collect();
        order.shuffle(&mut rng);
        let crop_seeds: Vec<u64> = order.iter().map(|_| rng.gen()).collect();

        let mut sums = [0.0f64; 4];
        let mut steps = 0usize;
        for (idx, seeds) in order.chunks(cfg.batch).zip(crop_seeds.chunks(cfg.batch)) {
            let batch = idx
                .iter()
                .zip(seeds)
                .map(|(&i, &s)| {
                    let img = train_entries[i].load()?;
                    make_sample_pair(&random_crop(&img, run.data.crop, s)?, run.model.scale)
                })
                .collect::<Result<Vec<_>>>()?;
            let terms = train_step(
                &mut ck.params,
                &mut ck.adam,
                &batch,
                &extractor,
                &run.model,
                cfg,
                rate,
            )?;
            if !terms.total.is_finite() {
                return Err(Error::State(format!(
                    "loss became non-finite at epoch {} step {}",
                    e + 1,
                    ck.adam.step
                )));
            }
            observer(&StepRecord {
                epoch: e,
                step: ck.adam.step,
                rate,
                terms,
            });
            sums[0] += terms.alpha.total;
            sums[1] += terms.beta.total;
            sums[2] += terms.gamma.total;
            sums[3] += terms.total;
            steps += 1;
        }

        let (val_psnr, val_ssim) = if val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let model = HaspnModel::new(run.model.clone(), &ck.params)?;
            let report = evaluate(&model, &val, &eval_opts)?;
            (report.mean_psnr, report.mean_ssim)
        };
        let n = steps as f64;
        let record = EpochRecord {
            epoch: e + 1,
            lr: rate,
            loss_alpha: sums[0] / n,
            loss_beta: sums[1] / n,
            loss_gamma: sums[2] / n,
            loss_total: sums[3] / n,
            val_psnr,
            val_ssim,
        };

        ck.epoch = e + 1;
        ck.metrics.val_psnr = val_psnr;
        ck.metrics.val_ssim = val_ssim;
        let improved = ck.metrics.best_epoch.is_none() || val_psnr > ck.metrics.best_val_psnr;
        if improved {
            ck.metrics.best_val_psnr = val_psnr;
            ck.metrics.best_epoch = Some(e + 1);
        }
        let bytes = ck.to_bytes()?;
        let path = out_dir.join(epoch_checkpoint_name(e + 1));
        fs::write(&path, &bytes).map_err(|err| Error::io(&path, err))?;
        if improved {
            let best = out_dir.join(BEST_FILE);
            fs::write(&best, &bytes).map_err(|err| Error::io(&best, err))?;
        }
        writeln!(log, "{}", record.csv_line()).map_err(|err| Error::io(&log_path, err))?;
        log.flush().map_err(|err| Error::io(&log_path, err))?;
        paths.push(path);
        records.push(record);
    }
    Ok(TrainOutcome {
        checkpoint: ck,
        epochs: records,
        checkpoint_paths: paths,
        best_path: out_dir.join(BEST_FILE),
        log_path,
    })
}

/// Opens the log for appending after `completed` epochs, dropping any lines
/// beyond them, or starts a fresh log.
fn open_log(path: &Path, completed: usize) -> Result<fs::File> {
    let mut kept = format!("{LOG_HEADER}\n");
    if completed > 0 {
        if let Ok(text) = fs::read_to_string(path) {
            for line in text.lines().skip(1).take(completed) {
                kept.push_str(line);
                kept.push('\n');
            }
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))?;
    fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}
