//! Composite training loss: L1 pixel distance, perceptual feature distance and
//! Laplacian gradient distance, applied to the coarse, high-frequency and fused
//! outputs.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HaspnOutput;
use crate::tensor::{Eager, Graph, Real, Tensor};

/// Seed of the default random-feature extractor.
pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x5eed_f00d;

#[derive(Clone, Debug)]
enum Layer<T> {
    Conv { weight: Tensor<T>, bias: Tensor<T> },
    Relu,
    AvgPool2,
    MaxPool2,
}

/// Deterministic, differentiable map from `(N, 1, H, W)` images to feature maps.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T> {
    id: String,
    layers: Vec<Layer<T>>,
    /// Inputs are replicated to this many channels (and normalised when 3).
    input_channels: usize,
    /// The extractor expects intensities in `[0, 1]`.
    unit_domain: bool,
    /// Number of pooling stages; the input must be at least `2^pools` on each side.
    pools: usize,
}

const VGG_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const VGG_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// torchvision `vgg19().features` indices of the convolutions up to the fourth pool.
const VGG19_CONVS: [(usize, usize, usize); 12] = [
    (0, 3, 64),
    (2, 64, 64),
    (5, 64, 128),
    (7, 128, 128),
    (10, 128, 256),
    (12, 256, 256),
    (14, 256, 256),
    (16, 256, 256),
    (19, 256, 512),
    (21, 512, 512),
    (23, 512, 512),
    (25, 512, 512),
];

impl<T: Real> FeatureExtractor<T> {
    /// Fixed-seed random features: 3×3 conv 1→16, ReLU, 2×2 avg pool, 3×3 conv
    /// 16→16, ReLU, 3×3 conv 16→32, ReLU, 2×2 avg pool, 3×3 conv 32→32.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = |cin: usize, cout: usize| {
            let bound = (6.0 / (cin * 9) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let data = (0..cout * cin * 9)
                .map(|_| T::from_f64(dist.sample(&mut rng)))
                .collect();
            Layer::Conv {
                weight: Tensor::from_vec([cout, cin, 3, 3], data).expect("static shape"),
                bias: Tensor::zeros([cout, 1, 1, 1]),
            }
        };
        let layers = vec![
            conv(1, 16),
            Layer::Relu,
            Layer::AvgPool2,
            conv(16, 16),
            Layer::Relu,
            conv(16, 32),
            Layer::Relu,
            Layer::AvgPool2,
            conv(32, 32),
        ];
        FeatureExtractor {
            id: format!("random:{seed}"),
            layers,
            input_channels: 1,
            unit_domain: true,
            pools: 2,
        }
    }

    /// `Φ = id`; signed inputs pass through unchanged.
    pub fn identity() -> Self {
        FeatureExtractor {
            id: "identity".into(),
            layers: Vec::new(),
            input_channels: 1,
            unit_domain: false,
            pools: 0,
        }
    }

    /// VGG19 convolution stack tapped after the fourth max pool, from arrays named
    /// `features.{i}.weight` / `features.{i}.bias` with torchvision indexing.
    /// Grey inputs are replicated to RGB and ImageNet-normalised.
    pub fn vgg19(params: &BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, &(idx, cin, cout)) in VGG19_CONVS.iter().enumerate() {
            let get = |suffix: &str, shape: [usize; 4]| -> Result<Tensor<T>> {
                let name = format!("features.{idx}.{suffix}");
                let t = params
                    .get(&name)
                    .ok_or_else(|| Error::Config(format!("extractor weights lack {name}")))?;
                if t.len() != shape.iter().product::<usize>() {
                    return Err(Error::Config(format!(
                        "{name}: expected {shape:?}, found {:?}",
                        t.shape()
                    )));
                }
                Tensor::from_vec(shape, t.data().to_vec())
            };
            layers.push(Layer::Conv {
                weight: get("weight", [cout, cin, 3, 3])?,
                bias: get("bias", [cout, 1, 1, 1])?,
            });
            layers.push(Layer::Relu);
            if matches!(i, 1 | 3 | 7 | 11) {
                layers.push(Layer::MaxPool2);
            }
        }
        Ok(FeatureExtractor {
            id: "vgg19:pool4".into(),
            layers,
            input_channels: 3,
            unit_domain: true,
            pools: 4,
        })
    }

    /// Loads VGG19 weights from a parameter archive (the checkpoint format).
    pub fn vgg19_from_file(path: impl AsRef<Path>) -> Result<Self> {
        let archive = crate::trainer::checkpoint::read_archive(path)?;
        let params = archive
            .tensors
            .into_iter()
            .map(|(k, v)| (k, v.cast()))
            .collect();
        Self::vgg19(&params)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn unit_domain(&self) -> bool {
        self.unit_domain
    }

    fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let min = 1usize << self.pools;
        if shape[1] != 1 || shape[2] < min || shape[3] < min {
            return Err(Error::Config(format!(
                "extractor {} needs one-channel inputs of at least {min}x{min}, got {shape:?}",
                self.id
            )));
        }
        Ok(())
    }

    pub fn features<G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        self.check_input(g.value(x).shape())?;
        let mut h = if self.input_channels == 3 {
            let chans: Vec<G::V> = (0..3)
                .map(|c| {
                    let s = g.scale(x, T::from_f64(1.0 / VGG_STD[c]));
                    g.add_scalar(&s, T::from_f64(-VGG_MEAN[c] / VGG_STD[c]))
                })
                .collect();
            g.concat_channels(&chans)?
        } else {
            x.clone()
        };
        for layer in &self.layers {
            h = match layer {
                Layer::Conv { weight, bias } => {
                    let w = g.constant(weight.clone());
                    let b = g.constant(bias.clone());
                    g.conv2d(&h, &w, Some(&b), 1, 1)?
                }
                Layer::Relu => g.relu(&h),
                Layer::AvgPool2 => g.avg_pool2(&h)?,
                Layer::MaxPool2 => g.max_pool(&h, 2, 2, 0)?,
            };
        }
        Ok(h)
    }

    /// Feature maps of a tensor, evaluated eagerly.
    pub fn extract(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Eager::without_params();
        let v = g.constant(x.clone());
        let f = self.features(&mut g, &v)?;
        Ok((*f).clone())
    }
}

/// Normalisation of the L1 pixel term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelNorm {
    /// `(1/N) Σ_i ‖sr_i − hr_i‖₁` with the per-image sum of absolute differences.
    #[default]
    Sum,
    /// Mean absolute difference over every element.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub pix: f64,
    pub per: f64,
    pub gra: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pix: 1.0,
            per: 1.0,
            gra: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub pixel_norm: PixelNorm,
}

/// Weighted contributions of one output/target pair; `total = pix + per + gra`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BranchTerms {
    pub pix: f64,
    pub per: f64,
    pub gra: f64,
    pub total: f64,
}

/// `alpha`: coarse vs HR, `beta`: high-frequency output vs HR residual,
/// `gamma`: fused vs HR.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub alpha: BranchTerms,
    pub beta: BranchTerms,
    pub gamma: BranchTerms,
    pub total: f64,
}

fn check_pair(a: [usize; 4], b: [usize; 4], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

fn batch_factor<T: Real>(shape: [usize; 4]) -> T {
    T::one() / T::from_f64(shape[0] as f64)
}

pub fn pixel_term<T: Real, G: Graph<T>>(
    g: &mut G,
    sr: &G::V,
    hr: &G::V,
    norm: PixelNorm,
) -> Result<G::V> {
    let (a, b) = (g.value(sr).shape(), g.value(hr).shape());
    check_pair(a, b, "pixel loss")?;
    let factor = match norm {
        PixelNorm::Sum => batch_factor(a),
        PixelNorm::Mean => T::one() / T::from_f64(a.iter().product::<usize>() as f64),
    };
    g.abs_diff_sum(sr, hr, factor)
}

/// `(1/N) Σ_i ‖Φ(sr_i) − Φ(hr_i)‖²`. When `signed` is set and the extractor
/// expects `[0, 1]` inputs, both images are shifted by +0.5 first.
pub fn perceptual_term<T: Real, G: Graph<T>>(
    g: &mut G,
    sr: &G::V,
    hr: &G::V,
    extractor: &FeatureExtractor<T>,
    signed: bool,
) -> Result<G::V> {
    let (a, b) = (g.value(sr).shape(), g.value(hr).shape());
    check_pair(a, b, "perceptual loss")?;
    let (x, y) = if signed && extractor.unit_domain {
        let half = T::from_f64(0.5);
        (g.add_scalar(sr, half), g.add_scalar(hr, half))
    } else {
        (sr.clone(), hr.clone())
    };
    let fx = extractor.features(g, &x)?;
    let fy = extractor.features(g, &y)?;
    g.sq_diff_sum(&fx, &fy, batch_factor(a))
}

/// `(1/N) Σ_i ‖∇sr_i − ∇hr_i‖₁` with the replicate-border five-point Laplacian.
pub fn gradient_term<T: Real, G: Graph<T>>(g: &mut G, sr: &G::V, hr: &G::V) -> Result<G::V> {
    let (a, b) = (g.value(sr).shape(), g.value(hr).shape());
    check_pair(a, b, "gradient loss")?;
    let la = g.laplacian(sr)?;
    let lb = g.laplacian(hr)?;
    g.abs_diff_sum(&la, &lb, batch_factor(a))
}

/// Weighted `pix + per + gra` for one output/target pair. Terms with zero weight
/// are skipped entirely.
pub fn branch_term<T: Real, G: Graph<T>>(
    g: &mut G,
    out: &G::V,
    target: &G::V,
    extractor: &FeatureExtractor<T>,
    cfg: &LossConfig,
    signed: bool,
) -> Result<(G::V, BranchTerms)> {
    check_pair(g.value(out).shape(), g.value(target).shape(), "branch loss")?;
    let w = cfg.weights;
    let mut parts: Vec<G::V> = Vec::new();
    let mut terms = BranchTerms::default();
    if w.pix != 0.0 {
        let v = pixel_term(g, out, target, cfg.pixel_norm)?;
        let v = g.scale(&v, T::from_f64(w.pix));
        terms.pix = g.value(&v).item().as_f64();
        parts.push(v);
    }
    if w.per != 0.0 {
        let v = perceptual_term(g, out, target, extractor, signed)?;
        let v = g.scale(&v, T::from_f64(w.per));
        terms.per = g.value(&v).item().as_f64();
        parts.push(v);
    }
    if w.gra != 0.0 {
        let v = gradient_term(g, out, target)?;
        let v = g.scale(&v, T::from_f64(w.gra));
        terms.gra = g.value(&v).item().as_f64();
        parts.push(v);
    }
    let total = match parts.split_first() {
        None => g.constant(Tensor::scalar(T::zero())),
        Some((first, rest)) => {
            let mut acc = first.clone();
            for p in rest {
                acc = g.add(&acc, p)?;
            }
            acc
        }
    };
    terms.total = g.value(&total).item().as_f64();
    Ok((total, terms))
}

/// `L = L_α + L_β + L_γ` over the three network outputs.
pub fn total_term<T: Real, G: Graph<T>>(
    g: &mut G,
    out: &HaspnOutput<G::V>,
    hr: &G::V,
    hr_hf: &G::V,
    extractor: &FeatureExtractor<T>,
    cfg: &LossConfig,
) -> Result<(G::V, LossTerms)> {
    let (la, alpha) = branch_term(g, &out.coarse, hr, extractor, cfg, false)?;
    let (lb, beta) = branch_term(g, &out.hf, hr_hf, extractor, cfg, true)?;
    let (lc, gamma) = branch_term(g, &out.fused, hr, extractor, cfg, false)?;
    let sum = g.add(&la, &lb)?;
    let total = g.add(&sum, &lc)?;
    let terms = LossTerms {
        alpha,
        beta,
        gamma,
        total: g.value(&total).item().as_f64(),
    };
    Ok((total, terms))
}

/// L1 pixel loss with per-image sums averaged over the batch.
pub fn pixel_loss<T: Real>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<f64> {
    let mut g = Eager::without_params();
    let (a, b) = (g.constant(sr.clone()), g.constant(hr.clone()));
    Ok(pixel_term(&mut g, &a, &b, PixelNorm::Sum)?.item().as_f64())
}

pub fn perceptual_loss<T: Real>(
    sr: &Tensor<T>,
    hr: &Tensor<T>,
    extractor: &FeatureExtractor<T>,
    signed: bool,
) -> Result<f64> {
    let mut g = Eager::without_params();
    let (a, b) = (g.constant(sr.clone()), g.constant(hr.clone()));
    Ok(perceptual_term(&mut g, &a, &b, extractor, signed)?
        .item()
        .as_f64())
}

pub fn gradient_loss<T: Real>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<f64> {
    let mut g = Eager::without_params();
    let (a, b) = (g.constant(sr.clone()), g.constant(hr.clone()));
    Ok(gradient_term(&mut g, &a, &b)?.item().as_f64())
}

pub fn branch_loss<T: Real>(
    out: &Tensor<T>,
    target: &Tensor<T>,
    extractor: &FeatureExtractor<T>,
    cfg: &LossConfig,
) -> Result<BranchTerms> {
    let mut g = Eager::without_params();
    let x = g.constant(out.clone());
    let y = g.constant(target.clone());
    branch_term(&mut g, &x, &y, extractor, cfg, false).map(|(_, t)| t)
}

/// Loss breakdown for already computed network outputs.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Real>(
    coarse: &Tensor<T>,
    hf: &Tensor<T>,
    fused: &Tensor<T>,
    hr: &Tensor<T>,
    hr_hf: &Tensor<T>,
    extractor: &FeatureExtractor<T>,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let mut g = Eager::without_params();
    let out = HaspnOutput {
        coarse: g.constant(coarse.clone()),
        hf: g.constant(hf.clone()),
        fused: g.constant(fused.clone()),
    };
    let hr = g.constant(hr.clone());
    let hr_hf = g.constant(hr_hf.clone());
    total_term(&mut g, &out, &hr, &hr_hf, extractor, cfg).map(|(_, t)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(seed: u64, shape: [usize; 4]) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn pixel_loss_arithmetic() {
        let hr = Tensor::<f64>::zeros([1, 1, 2, 2]);
        let sr = Tensor::full([1, 1, 2, 2], 0.5);
        assert_eq!(pixel_loss(&sr, &hr).unwrap(), 2.0);
        assert_eq!(pixel_loss(&hr, &sr).unwrap(), 2.0);
        assert_eq!(pixel_loss(&sr, &sr).unwrap(), 0.0);
        assert!(matches!(
            pixel_loss(&sr, &Tensor::zeros([1, 1, 2, 3])),
            Err(Error::Shape(_))
        ));
        // Batch of two with per-image sums 2 and 4 averages to 3.
        let sr =
            Tensor::from_vec([2, 1, 2, 2], vec![0.5, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(pixel_loss(&sr, &Tensor::zeros([2, 1, 2, 2])).unwrap(), 3.0);
    }

    #[test]
    fn perceptual_identity_extractor_is_squared_l2() {
        let a = random(1, [2, 1, 8, 8]);
        let b = random(2, [2, 1, 8, 8]);
        let id = FeatureExtractor::identity();
        let expected = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / 2.0;
        assert!((perceptual_loss(&a, &b, &id, false).unwrap() - expected).abs() < 1e-12);
        let ex = FeatureExtractor::random(DEFAULT_EXTRACTOR_SEED);
        assert_eq!(perceptual_loss(&a, &a, &ex, false).unwrap(), 0.0);
        let ab = perceptual_loss(&a, &b, &ex, false).unwrap();
        let ba = perceptual_loss(&b, &a, &ex, false).unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() <= 1e-12 * ab);
        assert!(matches!(
            perceptual_loss(
                &random(3, [1, 1, 3, 3]),
                &random(4, [1, 1, 3, 3]),
                &ex,
                false
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn random_extractor_is_reproducible() {
        let x = random(5, [1, 1, 16, 12]);
        let a = FeatureExtractor::<f64>::random(7).extract(&x).unwrap();
        let b = FeatureExtractor::<f64>::random(7).extract(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), [1, 32, 4, 3]);
        assert_ne!(a, FeatureExtractor::<f64>::random(8).extract(&x).unwrap());
    }

    #[test]
    fn gradient_loss_ignores_constants_and_affine_interiors() {
        let a = random(6, [1, 1, 7, 7]);
        let shifted = a.map(|v| v + 0.25);
        assert_eq!(gradient_loss(&a, &a).unwrap(), 0.0);
        assert!(gradient_loss(&a, &shifted).unwrap() < 1e-12);

        let plane = |p: f64, q: f64| {
            Tensor::from_vec(
                [1, 1, 6, 6],
                (0..36)
                    .map(|i| p * (i % 6) as f64 + q * (i / 6) as f64)
                    .collect(),
            )
            .unwrap()
        };
        let la = crate::tensor::kernels::laplacian(&plane(0.3, -0.1)).unwrap();
        let lb = crate::tensor::kernels::laplacian(&plane(-0.7, 0.4)).unwrap();
        for y in 1..5 {
            for x in 1..5 {
                assert!((la.at(0, 0, y, x) - lb.at(0, 0, y, x)).abs() < 1e-12);
            }
        }
        let b = random(7, [1, 1, 7, 7]);
        assert!((gradient_loss(&a, &b).unwrap() - gradient_loss(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn branch_and_total_losses_are_sums_of_their_parts() {
        let ex = FeatureExtractor::random(DEFAULT_EXTRACTOR_SEED);
        let a = random(8, [1, 1, 8, 8]);
        let b = random(9, [1, 1, 8, 8]);
        let cfg = LossConfig::default();
        let t = branch_loss(&a, &b, &ex, &cfg).unwrap();
        let sum = pixel_loss(&a, &b).unwrap()
            + perceptual_loss(&a, &b, &ex, false).unwrap()
            + gradient_loss(&a, &b).unwrap();
        assert!((t.total - sum).abs() < 1e-12);
        assert_eq!(
            branch_loss(&a, &a, &ex, &cfg).unwrap(),
            BranchTerms::default()
        );
        let only_pix = LossConfig {
            weights: LossWeights {
                pix: 1.0,
                per: 0.0,
                gra: 0.0,
            },
            ..cfg
        };
        assert_eq!(
            branch_loss(&a, &b, &ex, &only_pix).unwrap().total,
            pixel_loss(&a, &b).unwrap()
        );

        let hr = random(10, [1, 1, 8, 8]);
        let hf = random(11, [1, 1, 8, 8]);
        let zero = total_loss(&hr, &hf, &hr, &hr, &hf, &ex, &cfg).unwrap();
        assert_eq!(zero.total, 0.0);
        let other = random(12, [1, 1, 8, 8]);
        let only_beta = total_loss(&hr, &other, &hr, &hr, &hf, &ex, &cfg).unwrap();
        assert_eq!(only_beta.alpha.total, 0.0);
        assert_eq!(only_beta.gamma.total, 0.0);
        assert_eq!(only_beta.total, only_beta.beta.total);
        assert!(only_beta.beta.total > 0.0);

        let (c, f) = (random(13, [1, 1, 8, 8]), random(14, [1, 1, 8, 8]));
        let t = total_loss(&c, &other, &f, &hr, &hf, &ex, &cfg).unwrap();
        let mut g = Eager::without_params();
        let (vo, vh) = (g.constant(other.clone()), g.constant(hf.clone()));
        let (_, beta) = branch_term(&mut g, &vo, &vh, &ex, &cfg, true).unwrap();
        let expected = branch_loss(&c, &hr, &ex, &cfg).unwrap().total
            + beta.total
            + branch_loss(&f, &hr, &ex, &cfg).unwrap().total;
        assert!((t.total - expected).abs() < 1e-12);
    }
}
