use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real};

/// `name.weight` / `name.bias` convolution.
pub fn conv<T: Real, G: Graph<T>>(
    g: &mut G,
    name: &str,
    x: &G::V,
    stride: usize,
    dilation: usize,
) -> Result<G::V> {
    let w = g.param(&format!("{name}.weight"))?;
    let b = g.param(&format!("{name}.bias"))?;
    g.conv2d(x, &w, Some(&b), stride, dilation)
}

fn spatial<T: Real, G: Graph<T>>(g: &G, x: &G::V) -> (usize, usize) {
    let s = g.value(x).shape();
    (s[2], s[3])
}

/// Modified enhanced spatial attention: 1×1 reduce, stride-2 3×3, 7×7/3 max
/// pool, a single 3×3 conv, bilinear restore, 1×1 expand, sigmoid gate.
pub fn esa_forward<T: Real, G: Graph<T>>(g: &mut G, prefix: &str, x: &G::V) -> Result<G::V> {
    let (h, w) = spatial(g, x);
    if h < 8 || w < 8 {
        return Err(Error::Dimension(format!(
            "{prefix}: spatial attention needs at least 8x8, got {h}x{w}"
        )));
    }
    let r = conv(g, &format!("{prefix}.reduce"), x, 1, 1)?;
    let d = conv(g, &format!("{prefix}.down"), &r, 2, 1)?;
    let p = g.max_pool(&d, 7, 3, 3)?;
    let f = conv(g, &format!("{prefix}.feat"), &p, 1, 1)?;
    let u = g.resize_bilinear(&f, h, w)?;
    let e = conv(g, &format!("{prefix}.expand"), &u, 1, 1)?;
    let m = g.sigmoid(&e);
    g.mul(x, &m)
}

/// Feature fusion: channel concatenation, 1×1 conv to `C`, 3×3 conv.
pub fn ffm_forward<T: Real, G: Graph<T>>(g: &mut G, prefix: &str, parts: &[G::V]) -> Result<G::V> {
    let cat = match parts {
        [single] => single.clone(),
        _ => g.concat_channels(parts)?,
    };
    let f = conv(g, &format!("{prefix}.fuse"), &cat, 1, 1)?;
    conv(g, &format!("{prefix}.conv"), &f, 1, 1)
}

/// Dilated-convolution channel attention: 2×2 max-pool squeeze, one
/// DC–ReLU–DC path per dilation, FFM merge, global average pool, sigmoid gate.
pub fn adcca_forward<T: Real, G: Graph<T>>(
    g: &mut G,
    cfg: &ModelConfig,
    prefix: &str,
    x: &G::V,
) -> Result<G::V> {
    let (h, w) = spatial(g, x);
    if h < 4 || w < 4 {
        return Err(Error::Dimension(format!(
            "{prefix}: channel attention needs at least 4x4, got {h}x{w}"
        )));
    }
    let s = g.max_pool(x, 2, 2, 0)?;
    let mut paths = Vec::with_capacity(cfg.adcca_dilations.len());
    for (i, &d) in cfg.adcca_dilations.iter().enumerate() {
        let a = conv(g, &format!("{prefix}.path{i}.conv1"), &s, 1, d)?;
        let a = g.relu(&a);
        paths.push(conv(g, &format!("{prefix}.path{i}.conv2"), &a, 1, d)?);
    }
    let merged = ffm_forward(g, &format!("{prefix}.ffm"), &paths)?;
    let pooled = g.global_avg_pool(&merged);
    let a = g.sigmoid(&pooled);
    g.mul_channels(x, &a)
}

/// `esa(conv(relu(conv(x)))) + x`.
pub fn sarb_forward<T: Real, G: Graph<T>>(g: &mut G, prefix: &str, x: &G::V) -> Result<G::V> {
    let a = conv(g, &format!("{prefix}.conv1"), x, 1, 1)?;
    let a = g.relu(&a);
    let b = conv(g, &format!("{prefix}.conv2"), &a, 1, 1)?;
    let e = esa_forward(g, &format!("{prefix}.esa"), &b)?;
    g.add(&e, x)
}

/// `u = x + shallow`; M SARBs; ADCCA; `+ u`.
pub fn harb_forward<T: Real, G: Graph<T>>(
    g: &mut G,
    cfg: &ModelConfig,
    prefix: &str,
    x: &G::V,
    shallow: &G::V,
) -> Result<G::V> {
    let u = g.add(x, shallow)?;
    let mut v = u.clone();
    for j in 0..cfg.m {
        v = sarb_forward(g, &format!("{prefix}.sarb{j}"), &v)?;
    }
    let w = adcca_forward(g, cfg, &format!("{prefix}.adcca"), &v)?;
    g.add(&w, &u)
}

/// One branch: shallow 3×3 conv, G HARBs sharing the shallow features, 3×3
/// conv plus global residual, width-only bilinear up-sampling by `scale`, then
/// 3×3 conv → SARB → 3×3 conv to one channel.
pub fn branch_forward<T: Real, G: Graph<T>>(
    g: &mut G,
    cfg: &ModelConfig,
    prefix: &str,
    input: &G::V,
) -> Result<G::V> {
    let [_, c, h, w] = g.value(input).shape();
    if c != 1 {
        return Err(Error::Shape(format!(
            "{prefix}: branch input must have one channel, got {c}"
        )));
    }
    let shallow = conv(g, &format!("{prefix}.shallow"), input, 1, 1)?;
    let mut deep = shallow.clone();
    for i in 0..cfg.g {
        deep = harb_forward(g, cfg, &format!("{prefix}.harb{i}"), &deep, &shallow)?;
    }
    let deep = conv(g, &format!("{prefix}.body"), &deep, 1, 1)?;
    let deep = g.add(&deep, &shallow)?;
    let up = g.resize_bilinear(&deep, h, w * cfg.scale)?;
    let r = conv(g, &format!("{prefix}.rec.head"), &up, 1, 1)?;
    let r = sarb_forward(g, &format!("{prefix}.rec.sarb"), &r)?;
    conv(g, &format!("{prefix}.rec.tail"), &r, 1, 1)
}

/// The three network outputs, one per loss target.
#[derive(Clone, Debug)]
pub struct HaspnOutput<V> {
    pub coarse: V,
    pub hf: V,
    pub fused: V,
}

/// Runs both branches and the fusion module (3×3 conv → 3×3 conv with dilation 2 → 3×3 conv).
pub fn haspn_forward<T: Real, G: Graph<T>>(
    g: &mut G,
    cfg: &ModelConfig,
    lr: &G::V,
    lr_hf: &G::V,
) -> Result<HaspnOutput<G::V>> {
    let (a, b) = (g.value(lr).shape(), g.value(lr_hf).shape());
    if a != b {
        return Err(Error::Shape(format!(
            "LR input {a:?} and its high-frequency residual {b:?} differ"
        )));
    }
    let coarse = branch_forward(g, cfg, "branch0", lr)?;
    let hf = branch_forward(g, cfg, "branch1", lr_hf)?;
    let cat = g.concat_channels(&[coarse.clone(), hf.clone()])?;
    let f = conv(g, "fusion.conv1", &cat, 1, 1)?;
    let f = conv(g, "fusion.conv2", &f, 1, 2)?;
    let fused = conv(g, "fusion.conv3", &f, 1, 1)?;
    Ok(HaspnOutput { coarse, hf, fused })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParameterSet;
    use crate::tensor::{Eager, Tensor};

    #[test]
    fn attention_blocks_reject_small_maps() {
        let cfg = ModelConfig::tiny(2);
        let p = ParameterSet::<f64>::zeros(&cfg).unwrap();
        let mut g = Eager::new(p.as_map());
        let x = g.constant(Tensor::zeros([1, 8, 7, 16]));
        let e = esa_forward(&mut g, "branch0.harb0.sarb0.esa", &x).unwrap_err();
        assert!(e.to_string().contains("7x16"));
        let x = g.constant(Tensor::zeros([1, 8, 3, 16]));
        assert!(adcca_forward(&mut g, &cfg, "branch0.harb0.adcca", &x).is_err());
    }

    #[test]
    fn forward_checks_inputs() {
        let cfg = ModelConfig::tiny(2);
        let p = ParameterSet::<f64>::zeros(&cfg).unwrap();
        let mut g = Eager::new(p.as_map());
        let a = g.constant(Tensor::zeros([1, 1, 8, 8]));
        let b = g.constant(Tensor::zeros([1, 1, 8, 9]));
        assert!(matches!(
            haspn_forward(&mut g, &cfg, &a, &b),
            Err(Error::Shape(_))
        ));
        let two = g.constant(Tensor::zeros([1, 2, 8, 8]));
        assert!(matches!(
            branch_forward(&mut g, &cfg, "branch0", &two),
            Err(Error::Shape(_))
        ));
        let out = haspn_forward(&mut g, &cfg, &a, &a).unwrap();
        assert_eq!(g.value(&out.fused).shape(), [1, 1, 8, 16]);
    }

    #[test]
    fn missing_parameters_are_reported() {
        let cfg = ModelConfig::tiny(2);
        let mut p = ParameterSet::<f64>::zeros(&cfg).unwrap();
        p.as_map_mut().remove("fusion.conv2.weight");
        let mut g = Eager::new(p.as_map());
        let a = g.constant(Tensor::zeros([1, 1, 8, 8]));
        let e = haspn_forward(&mut g, &cfg, &a, &a).unwrap_err();
        assert!(e.to_string().contains("fusion.conv2.weight"), "{e}");
    }
}
