//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use haspn::dataio::Image;
use haspn::frequency::decompose;
use haspn::losses::{gradient_term, perceptual_term, pixel_term, FeatureExtractor, PixelNorm};
use haspn::model::{haspn_forward, init_model, ModelConfig};
use std::rc::Rc;

use haspn::tensor::{kernels, Eager, Graph, Real, Tape, Tensor};
use haspn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<T: Real>(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-1.0..1.0)))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    let data = (0..h * w).map(|_| rng.gen::<f64>()).collect();
    Image::new(h, w, data).unwrap()
}

/// Direct "same"-padded convolution in 64-bit arithmetic.
pub fn naive_conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    dilation: usize,
) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape();
    let [cout, _, k, _] = w.shape();
    let pad = (dilation * (k - 1) / 2) as isize;
    let span = dilation * (k - 1) + 1;
    let ho = (h + 2 * pad as usize - span) / stride + 1;
    let wo = (wd + 2 * pad as usize - span) / stride + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for i in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[co].as_f64();
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky * dilation) as isize - pad;
                                let ix = (ox * stride + kx * dilation) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(i, ci, iy as usize, ix as usize).as_f64()
                                    * w.at(co, ci, ky, kx).as_f64();
                            }
                        }
                    }
                    out[((i * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec([n, cout, ho, wo], out).unwrap()
}

#[derive(Clone, Copy, Debug)]
pub struct ConvCase {
    pub x: [usize; 4],
    pub w: [usize; 4],
    pub stride: usize,
    pub dilation: usize,
}

/// Random small geometries covering strides 1/2 and dilations 1/2/3/5, with
/// cases where the dilated kernel is wider than the input.
pub fn conv_cases(count: usize, seed: u64) -> Vec<ConvCase> {
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let stride = [1, 2][i % 2];
            let dilation = [1, 2, 3, 5][(i / 2) % 4];
            let k = [3, 1, 3, 5][(i / 8) % 4];
            ConvCase {
                x: [
                    r.gen_range(1..=2),
                    r.gen_range(1..=4),
                    r.gen_range(1..=12),
                    r.gen_range(1..=12),
                ],
                w: [r.gen_range(1..=4), 0, k, k],
                stride,
                dilation,
            }
        })
        .map(|mut c| {
            c.w[1] = c.x[1];
            c
        })
        .collect()
}

/// Branch decisions of the non-smooth operations: ReLU input signs, max-pool
/// argmax positions and the signs inside absolute differences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Pattern {
    signs: Vec<bool>,
    argmax: Vec<u32>,
}

/// Eager evaluation that also records the [`Pattern`] of the computation.
pub struct Probe<'p> {
    inner: Eager<'p, f64>,
    pub pattern: Pattern,
}

impl<'p> Probe<'p> {
    pub fn new(params: &'p BTreeMap<String, Tensor<f64>>) -> Self {
        Probe {
            inner: Eager::new(params),
            pattern: Pattern::default(),
        }
    }
}

impl Graph<f64> for Probe<'_> {
    type V = Rc<Tensor<f64>>;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<f64> {
        v
    }
    fn constant(&mut self, t: Tensor<f64>) -> Self::V {
        self.inner.constant(t)
    }
    fn param(&mut self, name: &str) -> Result<Self::V> {
        self.inner.param(name)
    }
    fn conv2d(
        &mut self,
        x: &Self::V,
        weight: &Self::V,
        bias: Option<&Self::V>,
        stride: usize,
        dilation: usize,
    ) -> Result<Self::V> {
        self.inner.conv2d(x, weight, bias, stride, dilation)
    }
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.inner.add(a, b)
    }
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.inner.mul(a, b)
    }
    fn mul_channels(&mut self, x: &Self::V, a: &Self::V) -> Result<Self::V> {
        self.inner.mul_channels(x, a)
    }
    fn scale(&mut self, a: &Self::V, factor: f64) -> Self::V {
        self.inner.scale(a, factor)
    }
    fn add_scalar(&mut self, a: &Self::V, offset: f64) -> Self::V {
        self.inner.add_scalar(a, offset)
    }
    fn relu(&mut self, a: &Self::V) -> Self::V {
        self.pattern.signs.extend(a.data().iter().map(|&v| v > 0.0));
        self.inner.relu(a)
    }
    fn sigmoid(&mut self, a: &Self::V) -> Self::V {
        self.inner.sigmoid(a)
    }
    fn max_pool(
        &mut self,
        a: &Self::V,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self::V> {
        let (out, arg) = kernels::max_pool(a, kernel, stride, pad)?;
        self.pattern.argmax.extend(arg);
        Ok(Rc::new(out))
    }
    fn avg_pool2(&mut self, a: &Self::V) -> Result<Self::V> {
        self.inner.avg_pool2(a)
    }
    fn global_avg_pool(&mut self, a: &Self::V) -> Self::V {
        self.inner.global_avg_pool(a)
    }
    fn resize_bilinear(&mut self, a: &Self::V, out_h: usize, out_w: usize) -> Result<Self::V> {
        self.inner.resize_bilinear(a, out_h, out_w)
    }
    fn concat_channels(&mut self, parts: &[Self::V]) -> Result<Self::V> {
        self.inner.concat_channels(parts)
    }
    fn laplacian(&mut self, a: &Self::V) -> Result<Self::V> {
        self.inner.laplacian(a)
    }
    fn abs_diff_sum(&mut self, a: &Self::V, b: &Self::V, factor: f64) -> Result<Self::V> {
        self.pattern
            .signs
            .extend(a.data().iter().zip(b.data()).map(|(x, y)| x > y));
        self.inner.abs_diff_sum(a, b, factor)
    }
    fn sq_diff_sum(&mut self, a: &Self::V, b: &Self::V, factor: f64) -> Result<Self::V> {
        self.inner.sq_diff_sum(a, b, factor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Pixel,
    Perceptual,
    Gradient,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Pixel, LossKind::Perceptual, LossKind::Gradient];
}

/// One loss term on the fused output against a fixed target.
pub struct GradProblem {
    pub cfg: ModelConfig,
    pub params: BTreeMap<String, Tensor<f64>>,
    pub lr: Tensor<f64>,
    pub lr_hf: Tensor<f64>,
    pub hr: Tensor<f64>,
    pub extractor: FeatureExtractor<f64>,
    pub kind: LossKind,
}

impl GradProblem {
    /// Tiny model on a 16×8 input at 4x. The target is the initial fused output
    /// plus uniform noise of amplitude `spread`.
    pub fn tiny(kind: LossKind, seed: u64, spread: f64) -> Self {
        let cfg = ModelConfig::tiny(4);
        let params = init_model::<f64>(&cfg, seed).unwrap().into_map();
        let mut r = rng(seed ^ 0xabc);
        let lr_img = random_image(16, 8, &mut r);
        let lr = lr_img.to_tensor();
        let lr_hf = decompose(&lr_img).unwrap().residual.to_tensor();
        let fused = {
            let mut g = Eager::new(&params);
            let (x, xh) = (g.constant(lr.clone()), g.constant(lr_hf.clone()));
            (*haspn_forward(&mut g, &cfg, &x, &xh).unwrap().fused).clone()
        };
        let noisy = fused
            .data()
            .iter()
            .map(|&v| v + spread * r.gen_range(-1.0..1.0))
            .collect();
        let hr = Tensor::from_vec(fused.shape(), noisy).unwrap();
        GradProblem {
            cfg,
            params,
            lr,
            lr_hf,
            hr,
            extractor: FeatureExtractor::random(seed.wrapping_add(1)),
            kind,
        }
    }

    fn loss_on<G: Graph<f64>>(&self, g: &mut G) -> G::V {
        let x = g.constant(self.lr.clone());
        let xh = g.constant(self.lr_hf.clone());
        let hr = g.constant(self.hr.clone());
        let out = haspn_forward(g, &self.cfg, &x, &xh).unwrap();
        match self.kind {
            LossKind::Pixel => pixel_term(g, &out.fused, &hr, PixelNorm::Sum),
            LossKind::Perceptual => perceptual_term(g, &out.fused, &hr, &self.extractor, false),
            LossKind::Gradient => gradient_term(g, &out.fused, &hr),
        }
        .unwrap()
    }

    /// Per-element loss contributions recomputed outside the library, with
    /// the branch pattern of the whole computation.
    pub fn contributions(&self, params: &BTreeMap<String, Tensor<f64>>) -> (Vec<f64>, Pattern) {
        let mut g = Probe::new(params);
        let x = g.constant(self.lr.clone());
        let xh = g.constant(self.lr_hf.clone());
        let out = haspn_forward(&mut g, &self.cfg, &x, &xh).unwrap();
        let sr = g.value(&out.fused).clone();
        let terms: Vec<f64> = match self.kind {
            LossKind::Pixel => abs_terms(sr.data(), self.hr.data(), &mut g.pattern),
            LossKind::Gradient => abs_terms(
                &laplacian_oracle(&sr),
                &laplacian_oracle(&self.hr),
                &mut g.pattern,
            ),
            LossKind::Perceptual => {
                let fx = self.extractor.features(&mut g, &out.fused).unwrap();
                let fy = self.extractor.extract(&self.hr).unwrap();
                g.value(&fx)
                    .data()
                    .iter()
                    .zip(fy.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .collect()
            }
        };
        (terms, g.pattern)
    }

    /// The library's value of the loss.
    pub fn loss(&self, params: &BTreeMap<String, Tensor<f64>>) -> f64 {
        let mut g = Eager::new(params);
        let l = self.loss_on(&mut g);
        g.value(&l).item()
    }

    pub fn analytic(&self) -> BTreeMap<String, Tensor<f64>> {
        let mut t = Tape::new(&self.params);
        let l = self.loss_on(&mut t);
        t.backward(l).unwrap().into_params()
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Elements whose stencil crosses a non-differentiable point.
    pub kinks: usize,
    pub total: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// Central differences with step `h` for every `every`-th element of each
/// parameter. The relative error is `|a - n| / max(|a|, |n|)` wherever either
/// magnitude exceeds `floor`.
/// Elements whose `±h` evaluations take a different [`Pattern`] from the
/// unperturbed one are not differentiable on the stencil and are counted as
/// kinks instead.
///
/// The two evaluations are differenced contribution by contribution before
/// summing, which keeps the reduction's rounding out of the quotient.
pub fn grad_check(p: &GradProblem, h: f64, floor: f64, every: usize) -> GradReport {
    let analytic = p.analytic();
    let mut params = p.params.clone();
    let (terms, base) = p.contributions(&params);
    let library = p.loss(&params);
    let oracle: f64 = terms.iter().sum();
    assert!(
        (library - oracle).abs() <= 1e-12 * oracle.abs().max(1.0),
        "loss oracle {oracle} differs from the library value {library}"
    );
    let mut report = GradReport::default();
    let names: Vec<String> = params.keys().cloned().collect();
    for name in names {
        let len = params[&name].len();
        for i in (0..len).step_by(every) {
            let orig = params[&name].data()[i];
            params.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let (up, pu) = p.contributions(&params);
            params.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let (down, pd) = p.contributions(&params);
            params.get_mut(&name).unwrap().data_mut()[i] = orig;
            report.total += 1;
            if pu != base || pd != base {
                report.kinks += 1;
                continue;
            }
            let numeric = up.iter().zip(&down).map(|(u, d)| u - d).sum::<f64>() / (2.0 * h);
            let a = analytic[&name].data()[i];
            let scale = a.abs().max(numeric.abs());
            if scale <= floor {
                continue;
            }
            report.checked += 1;
            let rel = (a - numeric).abs() / scale;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = format!("{name}[{i}] analytic {a:e} numeric {numeric:e}");
            }
        }
    }
    report
}

fn abs_terms(a: &[f64], b: &[f64], pattern: &mut Pattern) -> Vec<f64> {
    pattern.signs.extend(a.iter().zip(b).map(|(x, y)| x > y));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect()
}

/// Five-point Laplacian with replicated borders over every plane.
pub fn laplacian_oracle(t: &Tensor<f64>) -> Vec<f64> {
    let [n, c, h, w] = t.shape();
    let mut out = Vec::with_capacity(t.len());
    for i in 0..n {
        for ch in 0..c {
            let at = |y: isize, x: isize| {
                let y = y.clamp(0, h as isize - 1) as usize;
                let x = x.clamp(0, w as isize - 1) as usize;
                t.at(i, ch, y, x)
            };
            for y in 0..h as isize {
                for x in 0..w as isize {
                    out.push(
                        at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) - 4.0 * at(y, x),
                    );
                }
            }
        }
    }
    out
}

/// Spacing between `|x|` and the next larger double.
pub fn ulp(x: f64) -> f64 {
    let a = x.abs();
    a.next_up() - a
}

/// Largest `|(B + R) - O|` in units of `ulp(max(|O|, |B|))` over all pixels.
pub fn reconstruction_ulps(o: &Image, b: &Image, r: &Image) -> f64 {
    o.pixels()
        .iter()
        .zip(b.pixels())
        .zip(r.pixels())
        .map(|((&o, &b), &r)| ((b + r) - o).abs() / ulp(o.abs().max(b.abs())))
        .fold(0.0, f64::max)
}

/// Small phantom run used by the determinism checks: 5 training images in
/// batches of 2, so each epoch is 3 steps.
pub fn small_run(out: &std::path::Path, epochs: usize) -> haspn::RunConfig {
    let mut run = haspn::RunConfig::default();
    run.model = ModelConfig::tiny(4);
    run.train.lr = 1e-3;
    run.train.epochs = epochs;
    run.train.seed = 9;
    run.train.output = out.to_path_buf();
    run.data.crop = 32;
    run.data.phantom = Some(haspn::config::PhantomConfig {
        train: 5,
        val: 1,
        test: 0,
        size: 40,
        seed: 70,
    });
    run
}

/// Total loss of every step of a training call, in order.
pub fn step_losses(
    run: &haspn::RunConfig,
    resume: Option<haspn::trainer::Checkpoint>,
) -> (Vec<f64>, haspn::trainer::TrainOutcome) {
    let data = haspn::trainer::Dataset::from_config(&run.data, run.train.seed).unwrap();
    let mut losses = Vec::new();
    let outcome = haspn::trainer::train_observed(run, &data, &run.train.output, resume, &mut |s| {
        losses.push(s.terms.total)
    })
    .unwrap();
    (losses, outcome)
}

/// `initial · 0.5^⌊e / 20⌋` by repeated halving.
pub fn halving_schedule(initial: f64, epoch: usize) -> f64 {
    (0..epoch / 20).fold(initial, |r, _| r / 2.0)
}
