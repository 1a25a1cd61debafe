//! Binary parameter archive and training checkpoints.
//!
//! Layout (little-endian): magic `HSPN`, format version `u32`, JSON header
//! length `u32` and the UTF-8 JSON header, then until end of file one record
//! per array: name length `u32`, UTF-8 name, rank `u32`, `rank` dims as `u32`,
//! row-major `f32` data.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::ParameterSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HSPN";
pub const FORMAT_VERSION: u32 = 1;
pub const EXTENSION: &str = "hspn";

const MOMENT1_PREFIX: &str = "adam.m.";
const MOMENT2_PREFIX: &str = "adam.v.";

/// Header text plus named arrays, in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub version: u32,
    pub header: String,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl Archive {
    pub fn new(header: String, tensors: BTreeMap<String, Tensor<f32>>) -> Self {
        Archive {
            version: FORMAT_VERSION,
            header,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        put_len(&mut out, self.header.len(), "header")?;
        out.extend_from_slice(self.header.as_bytes());
        for (name, t) in &self.tensors {
            put_len(&mut out, name.len(), name)?;
            out.extend_from_slice(name.as_bytes());
            let shape = t.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                put_len(&mut out, d, name)?;
            }
            out.reserve(4 * t.len());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("missing HSPN magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let len = r.u32()? as usize;
        let header = utf8(r.take(len)?)?;
        let mut tensors = BTreeMap::new();
        while !r.at_end() {
            let len = r.u32()? as usize;
            let name = utf8(r.take(len)?)?;
            let rank = r.u32()? as usize;
            if rank > 4 {
                return Err(Error::Checkpoint(format!("{name}: rank {rank} exceeds 4")));
            }
            let mut shape = [1usize; 4];
            for d in &mut shape[4 - rank..] {
                *d = r.u32()? as usize;
            }
            let count = shape.iter().product::<usize>();
            let raw = r.take(
                count
                    .checked_mul(4)
                    .ok_or_else(|| Error::Checkpoint(format!("{name}: array size overflows")))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if tensors
                .insert(name.clone(), Tensor::from_vec(shape, data)?)
                .is_some()
            {
                return Err(Error::Checkpoint(format!("duplicate array {name}")));
            }
        }
        Ok(Archive {
            version,
            header,
            tensors,
        })
    }
}

fn put_len(out: &mut Vec<u8>, n: usize, what: &str) -> Result<()> {
    let n = u32::try_from(n)
        .map_err(|_| Error::Checkpoint(format!("{what}: length {n} does not fit in u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn utf8(b: &[u8]) -> Result<String> {
    String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 text".into()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated archive".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Archive> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Archive::from_bytes(&bytes)
}

pub fn write_archive(archive: &Archive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, archive.to_bytes()?).map_err(|e| Error::io(path, e))
}

/// Validation metrics carried across epochs. Non-finite values are stored as
/// the strings `"inf"`, `"-inf"` and `"nan"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningMetrics {
    #[serde(with = "float_text")]
    pub val_psnr: f64,
    #[serde(with = "float_text")]
    pub val_ssim: f64,
    #[serde(with = "float_text")]
    pub best_val_psnr: f64,
    pub best_epoch: Option<usize>,
}

impl Default for RunningMetrics {
    fn default() -> Self {
        RunningMetrics {
            val_psnr: f64::NAN,
            val_ssim: f64::NAN,
            best_val_psnr: f64::NEG_INFINITY,
            best_epoch: None,
        }
    }
}

mod float_text {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Number(*v).serialize(s)
        } else {
            Repr::Text(v.to_string().to_lowercase()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    run: RunConfig,
    epoch: usize,
    adam_step: u64,
    metrics: RunningMetrics,
}

/// Full training state after `epoch` completed epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub epoch: usize,
    pub params: ParameterSet<f32>,
    pub adam: AdamState<f32>,
    pub metrics: RunningMetrics,
}

impl Checkpoint {
    /// An untrained checkpoint: fresh optimizer state, no completed epochs.
    pub fn fresh(run: RunConfig, params: ParameterSet<f32>) -> Self {
        let adam = AdamState::new(&params);
        Checkpoint {
            run,
            epoch: 0,
            params,
            adam,
            metrics: RunningMetrics::default(),
        }
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let header = serde_json::to_string(&Header {
            run: self.run.clone(),
            epoch: self.epoch,
            adam_step: self.adam.step,
            metrics: self.metrics,
        })
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut tensors = self.params.as_map().clone();
        for (name, t) in &self.adam.m {
            tensors.insert(format!("{MOMENT1_PREFIX}{name}"), t.clone());
        }
        for (name, t) in &self.adam.v {
            tensors.insert(format!("{MOMENT2_PREFIX}{name}"), t.clone());
        }
        Ok(Archive::new(header, tensors))
    }

    pub fn from_archive(archive: Archive) -> Result<Self> {
        let header: Header = serde_json::from_str(&archive.header)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut params = BTreeMap::new();
        let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
        for (name, t) in archive.tensors {
            if let Some(rest) = name.strip_prefix(MOMENT1_PREFIX) {
                m.insert(rest.to_string(), t);
            } else if let Some(rest) = name.strip_prefix(MOMENT2_PREFIX) {
                v.insert(rest.to_string(), t);
            } else {
                params.insert(name, t);
            }
        }
        let params = ParameterSet::from_map(params);
        params.check_against(&header.run.model)?;
        let adam = AdamState {
            step: header.adam_step,
            m,
            v,
        };
        adam.check_against(&params)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint {
            run: header.run,
            epoch: header.epoch,
            params,
            adam,
            metrics: header.metrics,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_archive()?.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_archive(Archive::from_bytes(bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_archive(&self.to_archive()?, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
