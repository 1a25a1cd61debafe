//! The dual-branch hybrid-attention network.
//!
//! Every trainable array is addressed by a dotted path such as
//! `branch0.harb3.sarb1.conv1.weight`. `branch0` restores the coarse image from
//! the LR input, `branch1` (textures & details) restores the high-frequency
//! residual, and `fusion.*` merges the two.

mod blocks;

pub use blocks::{
    adcca_forward, branch_forward, conv, esa_forward, ffm_forward, harb_forward, haspn_forward,
    sarb_forward, HaspnOutput,
};

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of HARBs per branch.
    pub g: usize,
    /// SARBs per HARB.
    pub m: usize,
    /// Feature channels.
    pub c: usize,
    /// Width up-sampling factor.
    pub scale: usize,
    pub esa_reduction: usize,
    pub adcca_dilations: Vec<usize>,
    pub adcca_reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            g: 20,
            m: 5,
            c: 64,
            scale: 4,
            esa_reduction: 4,
            adcca_dilations: vec![1, 3, 5],
            adcca_reduction: 4,
        }
    }
}

impl ModelConfig {
    pub fn tiny(scale: usize) -> Self {
        ModelConfig {
            g: 1,
            m: 1,
            c: 8,
            scale,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.g == 0 || self.m == 0 {
            return fail(format!(
                "g and m must be at least 1 (g={}, m={})",
                self.g, self.m
            ));
        }
        if !crate::dataio::SCALE_FACTORS.contains(&self.scale) {
            return fail(format!("scale must be 2, 4 or 8, got {}", self.scale));
        }
        if self.esa_reduction == 0 || self.c < self.esa_reduction {
            return fail(format!(
                "c ({}) must be at least esa_reduction ({}) and esa_reduction positive",
                self.c, self.esa_reduction
            ));
        }
        if self.adcca_reduction == 0 {
            return fail("adcca_reduction must be positive".into());
        }
        if self.adcca_dilations.is_empty() || self.adcca_dilations.contains(&0) {
            return fail("adcca_dilations must be non-empty and all at least 1".into());
        }
        let mut d = self.adcca_dilations.clone();
        d.sort_unstable();
        d.dedup();
        if d.len() != self.adcca_dilations.len() {
            return fail(format!(
                "adcca_dilations must be distinct, got {:?}",
                self.adcca_dilations
            ));
        }
        Ok(())
    }

    pub fn esa_channels(&self) -> usize {
        self.c / self.esa_reduction
    }

    pub fn adcca_bottleneck(&self) -> usize {
        (self.c / self.adcca_reduction).max(4)
    }
}

/// Name, shape and fan-in of one trainable array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 4],
    /// `None` for biases.
    pub fan_in: Option<usize>,
}

struct SpecBuilder(Vec<ParamSpec>);

impl SpecBuilder {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        self.0.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: [cout, cin, k, k],
            fan_in: Some(cin * k * k),
        });
        self.0.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: [cout, 1, 1, 1],
            fan_in: None,
        });
    }

    fn sarb(&mut self, cfg: &ModelConfig, p: &str) {
        let (c, e) = (cfg.c, cfg.esa_channels());
        self.conv(&format!("{p}.conv1"), c, c, 3);
        self.conv(&format!("{p}.conv2"), c, c, 3);
        self.conv(&format!("{p}.esa.reduce"), c, e, 1);
        self.conv(&format!("{p}.esa.down"), e, e, 3);
        self.conv(&format!("{p}.esa.feat"), e, e, 3);
        self.conv(&format!("{p}.esa.expand"), e, c, 1);
    }

    fn adcca(&mut self, cfg: &ModelConfig, p: &str) {
        let (c, b) = (cfg.c, cfg.adcca_bottleneck());
        for i in 0..cfg.adcca_dilations.len() {
            self.conv(&format!("{p}.path{i}.conv1"), c, b, 3);
            self.conv(&format!("{p}.path{i}.conv2"), b, c, 3);
        }
        self.conv(
            &format!("{p}.ffm.fuse"),
            c * cfg.adcca_dilations.len(),
            c,
            1,
        );
        self.conv(&format!("{p}.ffm.conv"), c, c, 3);
    }

    fn branch(&mut self, cfg: &ModelConfig, p: &str) {
        let c = cfg.c;
        self.conv(&format!("{p}.shallow"), 1, c, 3);
        for gi in 0..cfg.g {
            for mi in 0..cfg.m {
                self.sarb(cfg, &format!("{p}.harb{gi}.sarb{mi}"));
            }
            self.adcca(cfg, &format!("{p}.harb{gi}.adcca"));
        }
        self.conv(&format!("{p}.body"), c, c, 3);
        self.conv(&format!("{p}.rec.head"), c, c, 3);
        self.sarb(cfg, &format!("{p}.rec.sarb"));
        self.conv(&format!("{p}.rec.tail"), c, 1, 3);
    }
}

/// Every trainable array the configuration induces, in definition order.
pub fn parameter_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut b = SpecBuilder(Vec::new());
    b.branch(cfg, "branch0");
    b.branch(cfg, "branch1");
    b.conv("fusion.conv1", 2, cfg.c, 3);
    b.conv("fusion.conv2", cfg.c, cfg.c, 3);
    b.conv("fusion.conv3", cfg.c, 1, 3);
    b.0
}

/// Named trainable arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParameterSet<T> {
    pub fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        ParameterSet { tensors }
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ParameterSet {
            tensors: parameter_specs(cfg)
                .into_iter()
                .map(|s| (s.name, Tensor::zeros(s.shape)))
                .collect(),
        })
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.tensors
    }

    pub fn as_map_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.tensors
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Checks that the name set and shapes are exactly those `cfg` induces.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = parameter_specs(cfg);
        if specs.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "model config induces {} parameters, set holds {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for s in specs {
            match self.tensors.get(&s.name) {
                Some(t) if t.shape() == s.shape => {}
                Some(t) => {
                    return Err(Error::Checkpoint(format!(
                        "{}: expected shape {:?}, found {:?}",
                        s.name,
                        s.shape,
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter {}", s.name))),
            }
        }
        Ok(())
    }
}

/// Uniform fan-in initialisation, bound `sqrt(1 / fan_in)`, biases zero.
/// Draws happen in definition order from ChaCha8 seeded with `seed`.
pub fn init_model<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParameterSet<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for spec in parameter_specs(cfg) {
        let t = match spec.fan_in {
            Some(fan_in) => {
                let bound = (1.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                let n: usize = spec.shape.iter().product();
                let data = (0..n).map(|_| T::from_f64(dist.sample(&mut rng))).collect();
                Tensor::from_vec(spec.shape, data)?
            }
            None => Tensor::zeros(spec.shape),
        };
        tensors.insert(spec.name, t);
    }
    Ok(ParameterSet { tensors })
}

/// Parameters under which the network reduces to width-only bilinear
/// interpolation of the LR input: every path is zero except an identity chain
/// through the original branch's shallow conv, global residual, reconstruction
/// and the fusion module's first channel.
pub fn interpolation_params<T: Real>(cfg: &ModelConfig) -> Result<ParameterSet<T>> {
    let mut p = ParameterSet::zeros(cfg)?;
    let mut centre = |name: &str, co: usize, ci: usize| {
        let t = p.get_mut(name).expect("name from parameter_specs");
        let [_, cin, k, _] = t.shape();
        let idx = ((co * cin + ci) * k + k / 2) * k + k / 2;
        t.data_mut()[idx] = T::one();
    };
    centre("branch0.shallow.weight", 0, 0);
    centre("branch0.rec.head.weight", 0, 0);
    centre("branch0.rec.tail.weight", 0, 0);
    centre("fusion.conv1.weight", 0, 0);
    centre("fusion.conv2.weight", 0, 0);
    centre("fusion.conv3.weight", 0, 0);
    Ok(p)
}
