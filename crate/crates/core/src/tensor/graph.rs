use std::collections::BTreeMap;
use std::rc::Rc;

use super::{kernels, Real, Tensor};
use crate::error::{Error, Result};

/// The operation set the network, the losses and the feature extractors are
/// written against.
///
/// Scalar-valued operations (`abs_diff_sum`, `sq_diff_sum`, `add`, `scale` on
/// scalars) return `1×1×1×1` tensors.
pub trait Graph<T: Real> {
    type V: Clone;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T>;

    /// A constant input; no gradient flows into it.
    fn constant(&mut self, t: Tensor<T>) -> Self::V;

    /// A named trainable parameter.
    fn param(&mut self, name: &str) -> Result<Self::V>;

    fn conv2d(
        &mut self,
        x: &Self::V,
        weight: &Self::V,
        bias: Option<&Self::V>,
        stride: usize,
        dilation: usize,
    ) -> Result<Self::V>;

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;

    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;

    /// Scales every channel of `x` by the matching entry of the `(n, c, 1, 1)` tensor `a`.
    fn mul_channels(&mut self, x: &Self::V, a: &Self::V) -> Result<Self::V>;

    fn scale(&mut self, a: &Self::V, factor: T) -> Self::V;

    fn add_scalar(&mut self, a: &Self::V, offset: T) -> Self::V;

    fn relu(&mut self, a: &Self::V) -> Self::V;

    fn sigmoid(&mut self, a: &Self::V) -> Self::V;

    fn max_pool(
        &mut self,
        a: &Self::V,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self::V>;

    fn avg_pool2(&mut self, a: &Self::V) -> Result<Self::V>;

    fn global_avg_pool(&mut self, a: &Self::V) -> Self::V;

    fn resize_bilinear(&mut self, a: &Self::V, out_h: usize, out_w: usize) -> Result<Self::V>;

    fn concat_channels(&mut self, parts: &[Self::V]) -> Result<Self::V>;

    fn laplacian(&mut self, a: &Self::V) -> Result<Self::V>;

    /// `factor * Σ |a - b|` as a scalar.
    fn abs_diff_sum(&mut self, a: &Self::V, b: &Self::V, factor: T) -> Result<Self::V>;

    /// `factor * Σ (a - b)²` as a scalar.
    fn sq_diff_sum(&mut self, a: &Self::V, b: &Self::V, factor: T) -> Result<Self::V>;
}

pub(crate) fn add_values<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.check_same_shape(b, "add")?;
    let mut out = a.clone();
    out.data_mut()
        .iter_mut()
        .zip(b.data())
        .for_each(|(o, &v)| *o += v);
    Ok(out)
}

pub(crate) fn mul_values<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.check_same_shape(b, "mul")?;
    let mut out = a.clone();
    out.data_mut()
        .iter_mut()
        .zip(b.data())
        .for_each(|(o, &v)| *o *= v);
    Ok(out)
}

pub(crate) fn abs_diff_sum_value<T: Real>(a: &Tensor<T>, b: &Tensor<T>, factor: T) -> Result<T> {
    a.check_same_shape(b, "abs_diff_sum")?;
    Ok(factor
        * a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs())
            .sum::<T>())
}

pub(crate) fn sq_diff_sum_value<T: Real>(a: &Tensor<T>, b: &Tensor<T>, factor: T) -> Result<T> {
    a.check_same_shape(b, "sq_diff_sum")?;
    Ok(factor
        * a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>())
}

/// Immediate evaluation with no gradient bookkeeping; intermediates are freed
/// as soon as the last handle to them is dropped.
pub struct Eager<'p, T> {
    params: Option<&'p BTreeMap<String, Tensor<T>>>,
}

impl<'p, T: Real> Eager<'p, T> {
    pub fn new(params: &'p BTreeMap<String, Tensor<T>>) -> Self {
        Eager {
            params: Some(params),
        }
    }

    /// An evaluator without parameters, for parameter-free computations.
    pub fn without_params() -> Self {
        Eager { params: None }
    }
}

impl<T: Real> Graph<T> for Eager<'_, T> {
    type V = Rc<Tensor<T>>;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T> {
        v
    }

    fn constant(&mut self, t: Tensor<T>) -> Self::V {
        Rc::new(t)
    }

    fn param(&mut self, name: &str) -> Result<Self::V> {
        self.params
            .and_then(|p| p.get(name))
            .map(|t| Rc::new(t.clone()))
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    fn conv2d(
        &mut self,
        x: &Self::V,
        weight: &Self::V,
        bias: Option<&Self::V>,
        stride: usize,
        dilation: usize,
    ) -> Result<Self::V> {
        kernels::conv2d(x, weight, bias.map(|b| &**b), stride, dilation).map(Rc::new)
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        add_values(a, b).map(Rc::new)
    }

    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        mul_values(a, b).map(Rc::new)
    }

    fn mul_channels(&mut self, x: &Self::V, a: &Self::V) -> Result<Self::V> {
        kernels::mul_channels(x, a).map(Rc::new)
    }

    fn scale(&mut self, a: &Self::V, factor: T) -> Self::V {
        Rc::new(a.map(|v| v * factor))
    }

    fn add_scalar(&mut self, a: &Self::V, offset: T) -> Self::V {
        Rc::new(a.map(|v| v + offset))
    }

    fn relu(&mut self, a: &Self::V) -> Self::V {
        Rc::new(a.map(|v| v.max(T::zero())))
    }

    fn sigmoid(&mut self, a: &Self::V) -> Self::V {
        Rc::new(a.map(kernels::sigmoid))
    }

    fn max_pool(
        &mut self,
        a: &Self::V,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self::V> {
        kernels::max_pool(a, kernel, stride, pad).map(|(t, _)| Rc::new(t))
    }

    fn avg_pool2(&mut self, a: &Self::V) -> Result<Self::V> {
        kernels::avg_pool2(a).map(Rc::new)
    }

    fn global_avg_pool(&mut self, a: &Self::V) -> Self::V {
        Rc::new(kernels::global_avg_pool(a))
    }

    fn resize_bilinear(&mut self, a: &Self::V, out_h: usize, out_w: usize) -> Result<Self::V> {
        kernels::resize_bilinear(a, out_h, out_w).map(Rc::new)
    }

    fn concat_channels(&mut self, parts: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|p| &**p).collect();
        kernels::concat_channels(&refs).map(Rc::new)
    }

    fn laplacian(&mut self, a: &Self::V) -> Result<Self::V> {
        kernels::laplacian(a).map(Rc::new)
    }

    fn abs_diff_sum(&mut self, a: &Self::V, b: &Self::V, factor: T) -> Result<Self::V> {
        abs_diff_sum_value(a, b, factor).map(|v| Rc::new(Tensor::scalar(v)))
    }

    fn sq_diff_sum(&mut self, a: &Self::V, b: &Self::V, factor: T) -> Result<Self::V> {
        sq_diff_sum_value(a, b, factor).map(|v| Rc::new(Tensor::scalar(v)))
    }
}
