//! TOML run configuration with `[model]`, `[train]` and `[data]` sections.
//!
//! Unknown keys are rejected and missing keys take the defaults below, which
//! reproduce the published training recipe.
//!
//! ```toml
//! [model]
//! g = 20
//! m = 5
//! c = 64
//! scale = 4
//!
//! [train]
//! lr = 1e-4
//! batch = 2
//! epochs = 200
//! extractor = "random"
//!
//! [train.loss.weights]
//! pix = 1.0
//! per = 1.0
//! gra = 1.0
//!
//! [data]
//! root = "data/oct2017"
//! crop = 256
//! split = [0.8125, 0.125, 0.0625]
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{FeatureExtractor, DEFAULT_EXTRACTOR_SEED};
use crate::model::ModelConfig;
use crate::tensor::Real;
use crate::trainer::TrainConfig;

/// Synthetic phantom corpus used in place of an image directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Phantoms are `size × size`.
    pub size: usize,
    /// Phantom `k` of the corpus (train, then val, then test) uses seed `seed + k`.
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            train: 16,
            val: 4,
            test: 4,
            size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Image directory. A `manifest.tsv` inside it is used when present;
    /// otherwise the directory is split with `split` and the training seed.
    pub root: Option<PathBuf>,
    pub phantom: Option<PhantomConfig>,
    /// Square crop side for training and validation patches.
    pub crop: usize,
    /// Train, val and test fractions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            phantom: None,
            crop: 256,
            split: [0.8125, 0.125, 0.0625],
        }
    }
}

/// Perceptual feature extractor choice: `random`, `random:SEED` or `file:PATH`
/// (VGG19 weights in the parameter-archive format).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtractorSpec {
    Random(u64),
    File(PathBuf),
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec::Random(DEFAULT_EXTRACTOR_SEED)
    }
}

impl FromStr for ExtractorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "random" {
            return Ok(ExtractorSpec::default());
        }
        if let Some(seed) = s.strip_prefix("random:") {
            return seed
                .parse()
                .map(ExtractorSpec::Random)
                .map_err(|_| Error::Config(format!("extractor: bad seed in {s:?}")));
        }
        match s.strip_prefix("file:") {
            Some(path) if !path.is_empty() => Ok(ExtractorSpec::File(PathBuf::from(path))),
            _ => Err(Error::Config(format!(
                "extractor must be \"random\", \"random:SEED\" or \"file:PATH\", got {s:?}"
            ))),
        }
    }
}

impl std::fmt::Display for ExtractorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExtractorSpec::Random(seed) if *seed == DEFAULT_EXTRACTOR_SEED => f.write_str("random"),
            ExtractorSpec::Random(seed) => write!(f, "random:{seed}"),
            ExtractorSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl Serialize for ExtractorSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExtractorSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl ExtractorSpec {
    pub fn build<T: Real>(&self) -> Result<FeatureExtractor<T>> {
        match self {
            ExtractorSpec::Random(seed) => Ok(FeatureExtractor::random(*seed)),
            ExtractorSpec::File(path) => FeatureExtractor::vgg19_from_file(path),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if d.crop == 0 || d.crop % self.model.scale != 0 {
            return Err(Error::Config(format!(
                "data.crop ({}) must be a positive multiple of the scale ({})",
                d.crop, self.model.scale
            )));
        }
        let [a, b, c] = d.split;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || a + b + c > 1.0 + 1e-9 {
            return Err(Error::Config(format!(
                "data.split must be positive and sum to at most 1, got {:?}",
                d.split
            )));
        }
        if let Some(p) = &d.phantom {
            if p.size < 32 || p.size < d.crop {
                return Err(Error::Config(format!(
                    "data.phantom.size ({}) must be at least 32 and at least data.crop ({})",
                    p.size, d.crop
                )));
            }
            if p.train == 0 {
                return Err(Error::Config(
                    "data.phantom.train must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }
}
