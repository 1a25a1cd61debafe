use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::{DataConfig, PhantomConfig};
use crate::dataio::{build_manifest, generate_phantom, load_image, DatasetManifest, Image, Split};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Debug)]
enum Source {
    File(PathBuf),
    Memory(Image),
}

/// A named image, loaded from disk on each access or held in memory.
#[derive(Clone, Debug)]
pub struct Entry {
    pub name: String,
    source: Source,
}

impl Entry {
    pub fn file(name: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Entry {
            name: name.into(),
            source: Source::File(path.into()),
        }
    }

    pub fn memory(name: impl Into<String>, image: Image) -> Self {
        Entry {
            name: name.into(),
            source: Source::Memory(image),
        }
    }

    pub fn load(&self) -> Result<Image> {
        match &self.source {
            Source::File(p) => load_image(p),
            Source::Memory(img) => Ok(img.clone()),
        }
    }
}

/// Train, validation and test images.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    splits: BTreeMap<Split, Vec<Entry>>,
}

impl Dataset {
    pub fn new(train: Vec<Entry>, val: Vec<Entry>, test: Vec<Entry>) -> Self {
        let mut splits = BTreeMap::new();
        splits.insert(Split::Train, train);
        splits.insert(Split::Val, val);
        splits.insert(Split::Test, test);
        Dataset { splits }
    }

    pub fn entries(&self, split: Split) -> &[Entry] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Phantom `k` (train first, then val, then test) is generated from `seed + k`.
    pub fn phantoms(cfg: &PhantomConfig) -> Result<Self> {
        let mut k = cfg.seed;
        let mut make = |count: usize, split: Split| -> Result<Vec<Entry>> {
            (0..count)
                .map(|i| {
                    let img = generate_phantom(k, cfg.size, cfg.size)?;
                    let e = Entry::memory(format!("phantom/{split}/{i:04}"), img);
                    k = k.wrapping_add(1);
                    Ok(e)
                })
                .collect()
        };
        let train = make(cfg.train, Split::Train)?;
        let val = make(cfg.val, Split::Val)?;
        let test = make(cfg.test, Split::Test)?;
        Ok(Dataset::new(train, val, test))
    }

    pub fn from_manifest(root: &Path, manifest: &DatasetManifest) -> Self {
        let list = |split| {
            manifest
                .split(split)
                .iter()
                .map(|p| Entry::file(p.to_string_lossy(), root.join(p)))
                .collect()
        };
        Dataset::new(list(Split::Train), list(Split::Val), list(Split::Test))
    }

    /// Uses the phantom corpus or the image directory named by `cfg`. A
    /// directory's own `manifest.tsv` takes precedence over a fresh split.
    pub fn from_config(cfg: &DataConfig, seed: u64) -> Result<Self> {
        match (&cfg.root, &cfg.phantom) {
            (Some(_), Some(_)) => Err(Error::Config(
                "data.root and data.phantom are mutually exclusive".into(),
            )),
            (None, None) => Err(Error::Config(
                "set data.root to an image directory or configure data.phantom".into(),
            )),
            (None, Some(p)) => Self::phantoms(p),
            (Some(root), None) => {
                let listed = root.join(MANIFEST_FILE);
                let manifest = if listed.is_file() {
                    DatasetManifest::read(&listed)?
                } else {
                    let [a, b, c] = cfg.split;
                    build_manifest(root, (a, b, c), seed)?
                };
                Ok(Self::from_manifest(root, &manifest))
            }
        }
    }
}
