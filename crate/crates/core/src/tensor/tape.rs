use std::collections::BTreeMap;

use super::graph::{abs_diff_sum_value, add_values, mul_values, sq_diff_sum_value};
use super::{kernels, Graph, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        dilation: usize,
    },
    Add(usize, usize),
    Mul(usize, usize),
    MulChannels(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    MaxPool(usize, Vec<u32>),
    AvgPool2(usize),
    GlobalAvgPool(usize),
    Resize(usize),
    Concat(Vec<usize>),
    Laplacian(usize),
    AbsDiffSum(usize, usize, T),
    SqDiffSum(usize, usize, T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations for reverse-mode differentiation.
pub struct Tape<'p, T> {
    nodes: Vec<Node<T>>,
    source: &'p BTreeMap<String, Tensor<T>>,
    params: BTreeMap<String, Var>,
}

/// Gradients of a scalar with respect to every recorded node that needs one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Var>,
    shapes: Vec<[usize; 4]>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for every parameter touched by the forward pass; parameters the
    /// scalar does not depend on get zeros.
    pub fn into_params(mut self) -> BTreeMap<String, Tensor<T>> {
        let params = std::mem::take(&mut self.params);
        params
            .into_iter()
            .map(|(name, v)| {
                let g = self.grads[v.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]));
                (name, g)
            })
            .collect()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p BTreeMap<String, Tensor<T>>) -> Self {
        Tape {
            nodes: Vec::new(),
            source: params,
            params: BTreeMap::new(),
        }
    }

    /// A differentiable leaf that is not a named parameter, e.g. an input whose
    /// gradient is wanted.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of the parameters the recorded computation used.
    pub fn used_params(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_any(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&v| self.nodes[v].needs_grad)
    }

    fn unary(&mut self, a: &Var, value: Tensor<T>, op: Op<T>) -> Var {
        let g = self.nodes[a.0].needs_grad;
        self.push(value, op, g)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(i, g, &mut grads)?;
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], idx: usize, g: Tensor<T>) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        match &mut grads[idx] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, &v)| *a += v),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].needs_grad
    }

    fn propagate(&self, i: usize, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                x,
                w,
                b,
                stride,
                dilation,
            } => {
                let want_w = self.wants(*w) || b.is_some_and(|b| self.wants(b));
                let (dx, dw, db) = kernels::conv2d_backward(
                    &self.nodes[*x].value,
                    &self.nodes[*w].value,
                    &g,
                    *stride,
                    *dilation,
                    self.wants(*x),
                    want_w,
                )?;
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.clone());
                }
                self.accumulate(grads, *b, g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, mul_values(&g, &self.nodes[*b].value)?);
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, mul_values(&g, &self.nodes[*a].value)?);
                }
            }
            Op::MulChannels(x, a) => {
                let xv = &self.nodes[*x].value;
                let av = &self.nodes[*a].value;
                if self.wants(*x) {
                    self.accumulate(grads, *x, kernels::mul_channels(&g, av)?);
                }
                if self.wants(*a) {
                    let plane = xv.height() * xv.width();
                    let data = g
                        .data()
                        .chunks(plane)
                        .zip(xv.data().chunks(plane))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(&u, &v)| u * v).sum::<T>())
                        .collect();
                    self.accumulate(grads, *a, Tensor::from_vec(av.shape(), data)?);
                }
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                self.accumulate(grads, *a, g.map(|v| v * f));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g),
            Op::Relu(a) => {
                let mut d = g;
                d.data_mut()
                    .iter_mut()
                    .zip(self.nodes[*a].value.data())
                    .for_each(|(d, &x)| {
                        if x <= T::zero() {
                            *d = T::zero()
                        }
                    });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g;
                d.data_mut()
                    .iter_mut()
                    .zip(node.value.data())
                    .for_each(|(d, &s)| *d *= s * (T::one() - s));
                self.accumulate(grads, *a, d);
            }
            Op::MaxPool(a, argmax) => {
                let d = kernels::max_pool_backward(self.nodes[*a].value.shape(), argmax, &g);
                self.accumulate(grads, *a, d);
            }
            Op::AvgPool2(a) => {
                let d = kernels::avg_pool2_backward(self.nodes[*a].value.shape(), &g);
                self.accumulate(grads, *a, d);
            }
            Op::GlobalAvgPool(a) => {
                let d = kernels::global_avg_pool_backward(self.nodes[*a].value.shape(), &g);
                self.accumulate(grads, *a, d);
            }
            Op::Resize(a) => {
                let d = kernels::resize_bilinear_backward(self.nodes[*a].value.shape(), &g);
                self.accumulate(grads, *a, d);
            }
            Op::Concat(parts) => {
                let channels: Vec<usize> = parts
                    .iter()
                    .map(|&p| self.nodes[p].value.channels())
                    .collect();
                for (&p, d) in parts.iter().zip(kernels::split_channels(&g, &channels)) {
                    self.accumulate(grads, p, d);
                }
            }
            Op::Laplacian(a) => self.accumulate(grads, *a, kernels::laplacian_backward(&g)),
            Op::AbsDiffSum(a, b, factor) => {
                let s = g.item() * *factor;
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let sign: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d > T::zero() {
                            s
                        } else if d < T::zero() {
                            -s
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let da = Tensor::from_vec(av.shape(), sign)?;
                if self.wants(*b) {
                    self.accumulate(grads, *b, da.map(|v| -v));
                }
                self.accumulate(grads, *a, da);
            }
            Op::SqDiffSum(a, b, factor) => {
                let s = g.item() * *factor * T::from_f64(2.0);
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let diff: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&x, &y)| (x - y) * s)
                    .collect();
                let da = Tensor::from_vec(av.shape(), diff)?;
                if self.wants(*b) {
                    self.accumulate(grads, *b, da.map(|v| -v));
                }
                self.accumulate(grads, *a, da);
            }
        }
        Ok(())
    }
}

impl<T: Real> Graph<T> for Tape<'_, T> {
    type V = Var;

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = self
            .source
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?
            .clone();
        let v = self.push(t, Op::Leaf, true);
        self.params.insert(name.to_owned(), v);
        Ok(v)
    }

    fn conv2d(
        &mut self,
        x: &Var,
        weight: &Var,
        bias: Option<&Var>,
        stride: usize,
        dilation: usize,
    ) -> Result<Var> {
        let value = kernels::conv2d(
            &self.nodes[x.0].value,
            &self.nodes[weight.0].value,
            bias.map(|b| &self.nodes[b.0].value),
            stride,
            dilation,
        )?;
        let mut deps = vec![x.0, weight.0];
        deps.extend(bias.map(|b| b.0));
        let g = self.grad_any(&deps);
        Ok(self.push(
            value,
            Op::Conv {
                x: x.0,
                w: weight.0,
                b: bias.map(|b| b.0),
                stride,
                dilation,
            },
            g,
        ))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = add_values(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let g = self.grad_any(&[a.0, b.0]);
        Ok(self.push(value, Op::Add(a.0, b.0), g))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = mul_values(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let g = self.grad_any(&[a.0, b.0]);
        Ok(self.push(value, Op::Mul(a.0, b.0), g))
    }

    fn mul_channels(&mut self, x: &Var, a: &Var) -> Result<Var> {
        let value = kernels::mul_channels(&self.nodes[x.0].value, &self.nodes[a.0].value)?;
        let g = self.grad_any(&[x.0, a.0]);
        Ok(self.push(value, Op::MulChannels(x.0, a.0), g))
    }

    fn scale(&mut self, a: &Var, factor: T) -> Var {
        let value = self.nodes[a.0].value.map(|v| v * factor);
        self.unary(a, value, Op::Scale(a.0, factor))
    }

    fn add_scalar(&mut self, a: &Var, offset: T) -> Var {
        let value = self.nodes[a.0].value.map(|v| v + offset);
        self.unary(a, value, Op::AddScalar(a.0))
    }

    fn relu(&mut self, a: &Var) -> Var {
        let value = self.nodes[a.0].value.map(|v| v.max(T::zero()));
        self.unary(a, value, Op::Relu(a.0))
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        let value = self.nodes[a.0].value.map(kernels::sigmoid);
        self.unary(a, value, Op::Sigmoid(a.0))
    }

    fn max_pool(&mut self, a: &Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (value, arg) = kernels::max_pool(&self.nodes[a.0].value, kernel, stride, pad)?;
        Ok(self.unary(a, value, Op::MaxPool(a.0, arg)))
    }

    fn avg_pool2(&mut self, a: &Var) -> Result<Var> {
        let value = kernels::avg_pool2(&self.nodes[a.0].value)?;
        Ok(self.unary(a, value, Op::AvgPool2(a.0)))
    }

    fn global_avg_pool(&mut self, a: &Var) -> Var {
        let value = kernels::global_avg_pool(&self.nodes[a.0].value);
        self.unary(a, value, Op::GlobalAvgPool(a.0))
    }

    fn resize_bilinear(&mut self, a: &Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = kernels::resize_bilinear(&self.nodes[a.0].value, out_h, out_w)?;
        Ok(self.unary(a, value, Op::Resize(a.0)))
    }

    fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let value = kernels::concat_channels(&refs)?;
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let g = self.grad_any(&idx);
        Ok(self.push(value, Op::Concat(idx), g))
    }

    fn laplacian(&mut self, a: &Var) -> Result<Var> {
        let value = kernels::laplacian(&self.nodes[a.0].value)?;
        Ok(self.unary(a, value, Op::Laplacian(a.0)))
    }

    fn abs_diff_sum(&mut self, a: &Var, b: &Var, factor: T) -> Result<Var> {
        let v = abs_diff_sum_value(&self.nodes[a.0].value, &self.nodes[b.0].value, factor)?;
        let g = self.grad_any(&[a.0, b.0]);
        Ok(self.push(Tensor::scalar(v), Op::AbsDiffSum(a.0, b.0, factor), g))
    }

    fn sq_diff_sum(&mut self, a: &Var, b: &Var, factor: T) -> Result<Var> {
        let v = sq_diff_sum_value(&self.nodes[a.0].value, &self.nodes[b.0].value, factor)?;
        let g = self.grad_any(&[a.0, b.0]);
        Ok(self.push(Tensor::scalar(v), Op::SqDiffSum(a.0, b.0, factor), g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Eager;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone, Copy, Debug)]
    enum Case {
        Conv,
        DilatedStridedConv,
        Add,
        Mul,
        MulChannels,
        Scale,
        AddScalar,
        Relu,
        Sigmoid,
        MaxPool,
        AvgPool2,
        GlobalAvgPool,
        Resize,
        Concat,
        Laplacian,
        AbsDiffSum,
        Reuse,
    }

    const CASES: [Case; 17] = [
        Case::Conv,
        Case::DilatedStridedConv,
        Case::Add,
        Case::Mul,
        Case::MulChannels,
        Case::Scale,
        Case::AddScalar,
        Case::Relu,
        Case::Sigmoid,
        Case::MaxPool,
        Case::AvgPool2,
        Case::GlobalAvgPool,
        Case::Resize,
        Case::Concat,
        Case::Laplacian,
        Case::AbsDiffSum,
        Case::Reuse,
    ];

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Distinct values well away from zero, so ReLU, max pooling and absolute
    /// values stay differentiable under small perturbations.
    fn spread_input() -> Tensor<f64> {
        let shape = [2, 2, 6, 5];
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| {
                let v = 0.1 + (i * 37 % n) as f64 / n as f64;
                if i % 3 == 0 {
                    -v
                } else {
                    v
                }
            })
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    fn params() -> BTreeMap<String, Tensor<f64>> {
        let mut p = BTreeMap::new();
        p.insert("w".to_string(), random([3, 2, 3, 3], 1));
        p.insert("b".to_string(), random([3, 1, 1, 1], 2));
        p.insert("s".to_string(), random([2, 2, 1, 1], 3));
        p.insert("unused".to_string(), random([1, 1, 1, 1], 4));
        p
    }

    /// A scalar built from `x` through the operation under test.
    fn build<G: Graph<f64>>(g: &mut G, x: &G::V, case: Case) -> G::V {
        let y = match case {
            Case::Conv => {
                let (w, b) = (g.param("w").unwrap(), g.param("b").unwrap());
                g.conv2d(x, &w, Some(&b), 1, 1).unwrap()
            }
            Case::DilatedStridedConv => {
                let w = g.param("w").unwrap();
                g.conv2d(x, &w, None, 2, 3).unwrap()
            }
            Case::Add => {
                let c = g.constant(random([2, 2, 6, 5], 5));
                g.add(x, &c).unwrap()
            }
            Case::Mul => {
                let c = g.constant(random([2, 2, 6, 5], 6));
                g.mul(&c, x).unwrap()
            }
            Case::MulChannels => {
                let s = g.param("s").unwrap();
                g.mul_channels(x, &s).unwrap()
            }
            Case::Scale => g.scale(x, -1.7),
            Case::AddScalar => g.add_scalar(x, 0.3),
            Case::Relu => g.relu(x),
            Case::Sigmoid => g.sigmoid(x),
            Case::MaxPool => g.max_pool(x, 3, 2, 1).unwrap(),
            Case::AvgPool2 => g.avg_pool2(x).unwrap(),
            Case::GlobalAvgPool => g.global_avg_pool(x),
            Case::Resize => g.resize_bilinear(x, 4, 11).unwrap(),
            Case::Concat => {
                let s = g.scale(x, 2.0);
                g.concat_channels(&[x.clone(), s]).unwrap()
            }
            Case::Laplacian => g.laplacian(x).unwrap(),
            Case::AbsDiffSum => {
                let c = g.constant(Tensor::zeros([2, 2, 6, 5]));
                return g.abs_diff_sum(x, &c, 0.7).unwrap();
            }
            Case::Reuse => {
                let a = g.mul(x, x).unwrap();
                g.add(&a, x).unwrap()
            }
        };
        let target = g.constant(random(g.value(&y).shape(), 7));
        g.sq_diff_sum(&y, &target, 0.5).unwrap()
    }

    #[test]
    fn every_operation_matches_central_differences() {
        let p = params();
        let x0 = spread_input();
        for case in CASES {
            let mut tape = Tape::new(&p);
            let x = tape.leaf(x0.clone());
            let loss = build(&mut tape, &x, case);
            let eager_value = {
                let mut e = Eager::new(&p);
                let xv = e.constant(x0.clone());
                let l = build(&mut e, &xv, case);
                e.value(&l).item()
            };
            assert_eq!(tape.value(&loss).item(), eager_value, "{case:?}");
            let grads = tape.backward(loss).unwrap();
            let dx = grads.get(x).cloned();
            let dparams = grads.into_params();

            let eval = |xs: &Tensor<f64>, ps: &BTreeMap<String, Tensor<f64>>| {
                let mut e = Eager::new(ps);
                let xv = e.constant(xs.clone());
                let l = build(&mut e, &xv, case);
                e.value(&l).item()
            };
            let h = 1e-4;
            let check = |analytic: f64, numeric: f64, what: &str| {
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
                assert!(
                    err < 1e-5,
                    "{case:?} {what}: analytic {analytic} numeric {numeric}"
                );
            };
            let dx = dx.unwrap_or_else(|| Tensor::zeros(x0.shape()));
            for i in 0..x0.len() {
                let (mut up, mut down) = (x0.clone(), x0.clone());
                up.data_mut()[i] += h;
                down.data_mut()[i] -= h;
                check(
                    dx.data()[i],
                    (eval(&up, &p) - eval(&down, &p)) / (2.0 * h),
                    &format!("x[{i}]"),
                );
            }
            for (name, grad) in &dparams {
                for i in 0..grad.len() {
                    let (mut up, mut down) = (p.clone(), p.clone());
                    up.get_mut(name).unwrap().data_mut()[i] += h;
                    down.get_mut(name).unwrap().data_mut()[i] -= h;
                    check(
                        grad.data()[i],
                        (eval(&x0, &up) - eval(&x0, &down)) / (2.0 * h),
                        &format!("{name}[{i}]"),
                    );
                }
            }
        }
    }

    #[test]
    fn untouched_parameters_are_absent_and_constants_get_no_gradient() {
        let p = params();
        let mut tape = Tape::new(&p);
        let c = tape.constant(spread_input());
        let w = tape.param("w").unwrap();
        let y = tape.conv2d(&c, &w, None, 1, 1).unwrap();
        let z = tape.constant(Tensor::zeros(tape.value(&y).shape()));
        let l = tape.sq_diff_sum(&y, &z, 1.0).unwrap();
        assert_eq!(tape.used_params().collect::<Vec<_>>(), vec!["w"]);
        let grads = tape.backward(l).unwrap();
        assert!(grads.get(c).is_none());
        let by_name = grads.into_params();
        assert_eq!(by_name.keys().collect::<Vec<_>>(), vec!["w"]);
        assert!(tape.param("missing").is_err());
    }

    #[test]
    fn backward_needs_a_scalar() {
        let p = params();
        let mut tape = Tape::new(&p);
        let x = tape.leaf(spread_input());
        let y = tape.relu(&x);
        assert!(matches!(tape.backward(y), Err(Error::Shape(_))));
    }
}
