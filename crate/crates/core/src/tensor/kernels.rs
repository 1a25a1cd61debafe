//! Forward and adjoint kernels over raw tensors. No bookkeeping happens here;
//! [`super::Eager`] and [`super::Tape`] both dispatch into these functions.

use std::ops::Range;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Output geometry of a square-kernel convolution with "same"-style zero padding
/// `dilation * (k - 1) / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    pub fn new(x: [usize; 4], weight: [usize; 4], stride: usize, dilation: usize) -> Result<Self> {
        let [_, cin, h, w] = x;
        let [cout, wcin, k, k2] = weight;
        if cin != wcin {
            return Err(Error::Shape(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if k != k2 || k % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv2d: kernel must be square and odd, got {k}x{k2}"
            )));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Config(
                "conv2d: stride and dilation must be at least 1".into(),
            ));
        }
        let pad = dilation * (k - 1) / 2;
        let span = dilation * (k - 1) + 1;
        let ho = (h + 2 * pad - span) / stride + 1;
        let wo = (w + 2 * pad - span) / stride + 1;
        Ok(ConvGeometry {
            cin,
            h,
            w,
            cout,
            k,
            stride,
            dilation,
            pad,
            ho,
            wo,
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    /// Range of output columns whose input column `ox * stride + offset` lies in `[0, w)`.
    fn valid_range(&self, offset: isize, len_in: usize, len_out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let lo = if offset >= 0 {
            0
        } else {
            (-offset + s - 1) / s
        }
        .min(len_out as isize);
        let hi = if (len_in as isize) <= offset {
            0
        } else {
            ((len_in as isize - offset + s - 1) / s).min(len_out as isize)
        };
        (lo as usize, hi.max(lo) as usize)
    }
}

/// Output rows per im2col block, sized so the column buffer stays cache resident.
fn block_rows(g: &ConvGeometry) -> usize {
    const TARGET: usize = 1 << 16;
    (TARGET / (g.patch_len() * g.wo).max(1)).clamp(1, g.ho.max(1))
}

/// Columns for output rows `rows`, laid out `[cin·k·k, rows.len()·wo]`.
fn im2col<T: Real>(x: &[T], g: &ConvGeometry, rows: Range<usize>, col: &mut [T]) {
    let bp = rows.len() * g.wo;
    let (k, s, d, p) = (g.k, g.stride, g.dilation as isize, g.pad as isize);
    for ci in 0..g.cin {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * bp..(row + 1) * bp];
                let yoff = ky as isize * d - p;
                let xoff = kx as isize * d - p;
                let (x0, x1) = g.valid_range(xoff, g.w, g.wo);
                for (r, oy) in rows.clone().enumerate() {
                    let iy = (oy * s) as isize + yoff;
                    let out = &mut dst[r * g.wo..(r + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize || x1 == x0 {
                        out.fill(T::zero());
                        continue;
                    }
                    let line = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..x0].fill(T::zero());
                    out[x1..].fill(T::zero());
                    if s == 1 {
                        let start = (x0 as isize + xoff) as usize;
                        out[x0..x1].copy_from_slice(&line[start..start + (x1 - x0)]);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate().take(x1).skip(x0) {
                            *o = line[((ox * s) as isize + xoff) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a `[cin·k·k, rows.len()·wo]` block into `dx`.
fn col2im<T: Real>(col: &[T], g: &ConvGeometry, rows: Range<usize>, dx: &mut [T]) {
    let bp = rows.len() * g.wo;
    let (k, s, d, p) = (g.k, g.stride, g.dilation as isize, g.pad as isize);
    for ci in 0..g.cin {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * bp..(row + 1) * bp];
                let yoff = ky as isize * d - p;
                let xoff = kx as isize * d - p;
                let (x0, x1) = g.valid_range(xoff, g.w, g.wo);
                for (r, oy) in rows.clone().enumerate() {
                    let iy = (oy * s) as isize + yoff;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let grad = &src[r * g.wo..(r + 1) * g.wo];
                    if s == 1 && x1 > x0 {
                        let start = (x0 as isize + xoff) as usize;
                        for (l, &gv) in line[start..start + (x1 - x0)].iter_mut().zip(&grad[x0..x1])
                        {
                            *l += gv;
                        }
                    } else {
                        for ox in x0..x1 {
                            line[((ox * s) as isize + xoff) as usize] += grad[ox];
                        }
                    }
                }
            }
        }
    }
}

fn row_blocks(g: &ConvGeometry) -> impl Iterator<Item = Range<usize>> {
    let step = block_rows(g);
    let ho = g.ho;
    (0..ho).step_by(step).map(move |r| r..(r + step).min(ho))
}

/// Cross-correlation with zero padding `dilation * (k - 1) / 2`, so stride-1
/// convolutions preserve height and width and stride 2 yields `ceil(dim / 2)`.
///
/// `weight` is `(cout, cin, k, k)`, `bias` is `(cout, 1, 1, 1)`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    dilation: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), weight.shape(), stride, dilation)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(Error::Shape(format!(
                "conv2d: bias has {} entries for {} output channels",
                b.len(),
                g.cout
            )));
        }
    }
    let n = x.batch();
    let plane = g.out_plane();
    let kk = g.patch_len();
    let mut out = Tensor::zeros([n, g.cout, g.ho, g.wo]);
    let mut col = vec![
        T::zero();
        if g.is_pointwise() {
            0
        } else {
            kk * block_rows(&g) * g.wo
        }
    ];
    let per_out = g.cout * plane;
    for i in 0..n {
        let xs = x.sample(i);
        let dst = &mut out.data_mut()[i * per_out..(i + 1) * per_out];
        if let Some(b) = bias {
            for (co, chunk) in dst.chunks_mut(plane).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        if g.is_pointwise() {
            // SAFETY: weight is [cout, cin], xs is [cin, plane], dst is [cout, plane].
            unsafe {
                T::gemm(
                    g.cout,
                    kk,
                    plane,
                    T::one(),
                    weight.data().as_ptr(),
                    kk as isize,
                    1,
                    xs.as_ptr(),
                    plane as isize,
                    1,
                    beta,
                    dst.as_mut_ptr(),
                    plane as isize,
                    1,
                );
            }
            continue;
        }
        for rows in row_blocks(&g) {
            let bp = rows.len() * g.wo;
            im2col(xs, &g, rows.clone(), &mut col);
            // SAFETY: col holds [kk, bp]; the destination block is [cout, bp]
            // with row stride `plane` inside dst.
            unsafe {
                T::gemm(
                    g.cout,
                    kk,
                    bp,
                    T::one(),
                    weight.data().as_ptr(),
                    kk as isize,
                    1,
                    col.as_ptr(),
                    bp as isize,
                    1,
                    beta,
                    dst.as_mut_ptr().add(rows.start * g.wo),
                    plane as isize,
                    1,
                );
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv2d`]: returns `(dx, dweight, dbias)`; `dx` only when requested.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &Tensor<T>,
    stride: usize,
    dilation: usize,
    want_dx: bool,
    want_dweight: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>)> {
    let g = ConvGeometry::new(x.shape(), weight.shape(), stride, dilation)?;
    let n = x.batch();
    let plane = g.out_plane();
    let kk = g.patch_len();
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = want_dweight.then(|| Tensor::zeros(weight.shape()));
    let mut db = want_dweight.then(|| Tensor::zeros([g.cout, 1, 1, 1]));
    let block = if g.is_pointwise() {
        0
    } else {
        kk * block_rows(&g) * g.wo
    };
    let mut col = vec![T::zero(); if want_dweight { block } else { 0 }];
    let mut dcol = vec![T::zero(); if want_dx { block } else { 0 }];
    let per_out = g.cout * plane;
    let per_in = g.cin * g.h * g.w;
    for i in 0..n {
        let go = &dout.data()[i * per_out..(i + 1) * per_out];
        if let Some(db) = db.as_mut() {
            for (co, chunk) in go.chunks(plane).enumerate() {
                db.data_mut()[co] += chunk.iter().copied().sum::<T>();
            }
        }
        if g.is_pointwise() {
            if let Some(dw) = dw.as_mut() {
                // SAFETY: dw is [cout, cin]; go is [cout, plane]; x read transposed.
                unsafe {
                    T::gemm(
                        g.cout,
                        plane,
                        kk,
                        T::one(),
                        go.as_ptr(),
                        plane as isize,
                        1,
                        x.sample(i).as_ptr(),
                        1,
                        plane as isize,
                        T::one(),
                        dw.data_mut().as_mut_ptr(),
                        kk as isize,
                        1,
                    );
                }
            }
            if let Some(dx) = dx.as_mut() {
                let target = &mut dx.data_mut()[i * per_in..(i + 1) * per_in];
                // SAFETY: weight read transposed as [cin, cout]; target is [cin, plane].
                unsafe {
                    T::gemm(
                        kk,
                        g.cout,
                        plane,
                        T::one(),
                        weight.data().as_ptr(),
                        1,
                        kk as isize,
                        go.as_ptr(),
                        plane as isize,
                        1,
                        T::zero(),
                        target.as_mut_ptr(),
                        plane as isize,
                        1,
                    );
                }
            }
            continue;
        }
        for rows in row_blocks(&g) {
            let bp = rows.len() * g.wo;
            let gblock = &go[rows.start * g.wo..];
            if let Some(dw) = dw.as_mut() {
                im2col(x.sample(i), &g, rows.clone(), &mut col);
                // SAFETY: dw is [cout, kk]; the dout block is [cout, bp] with row
                // stride `plane`; col is [kk, bp] read transposed.
                unsafe {
                    T::gemm(
                        g.cout,
                        bp,
                        kk,
                        T::one(),
                        gblock.as_ptr(),
                        plane as isize,
                        1,
                        col.as_ptr(),
                        1,
                        bp as isize,
                        T::one(),
                        dw.data_mut().as_mut_ptr(),
                        kk as isize,
                        1,
                    );
                }
            }
            if let Some(dx) = dx.as_mut() {
                // SAFETY: weight read transposed as [kk, cout]; dcol is [kk, bp].
                unsafe {
                    T::gemm(
                        kk,
                        g.cout,
                        bp,
                        T::one(),
                        weight.data().as_ptr(),
                        1,
                        kk as isize,
                        gblock.as_ptr(),
                        plane as isize,
                        1,
                        T::zero(),
                        dcol.as_mut_ptr(),
                        bp as isize,
                        1,
                    );
                }
                col2im(
                    &dcol,
                    &g,
                    rows.clone(),
                    &mut dx.data_mut()[i * per_in..(i + 1) * per_in],
                );
            }
        }
    }
    Ok((dx, dw, db))
}

/// Max pooling with `-inf` padding. Returns the pooled tensor and, per output
/// element, the in-plane index of the winning input.
pub fn max_pool<T: Real>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = x.shape();
    if h + 2 * pad < kernel || w + 2 * pad < kernel || stride == 0 {
        return Err(Error::Dimension(format!(
            "max_pool: {h}x{w} input too small for kernel {kernel} with padding {pad}"
        )));
    }
    let ho = (h + 2 * pad - kernel) / stride + 1;
    let wo = (w + 2 * pad - kernel) / stride + 1;
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    for (plane_idx, src) in x.data().chunks(h * w).enumerate() {
        let base = plane_idx * ho * wo;
        for oy in 0..ho {
            let y0 = (oy * stride) as isize - pad as isize;
            let ys = y0.max(0) as usize..((y0 + kernel as isize).min(h as isize)) as usize;
            for ox in 0..wo {
                let x0 = (ox * stride) as isize - pad as isize;
                let xs = x0.max(0) as usize..((x0 + kernel as isize).min(w as isize)) as usize;
                let mut best = T::neg_infinity();
                let mut best_idx = 0usize;
                for yy in ys.clone() {
                    for xx in xs.clone() {
                        let v = src[yy * w + xx];
                        if v > best {
                            best = v;
                            best_idx = yy * w + xx;
                        }
                    }
                }
                out.data_mut()[base + oy * wo + ox] = best;
                arg[base + oy * wo + ox] = best_idx as u32;
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool_backward<T: Real>(
    input_shape: [usize; 4],
    argmax: &[u32],
    dout: &Tensor<T>,
) -> Tensor<T> {
    let [_, _, h, w] = input_shape;
    let plane_out = dout.height() * dout.width();
    let mut dx = Tensor::zeros(input_shape);
    for (i, (&g, &a)) in dout.data().iter().zip(argmax).enumerate() {
        let plane = i / plane_out;
        dx.data_mut()[plane * h * w + a as usize] += g;
    }
    dx
}

/// 2×2 average pooling with stride 2; a trailing odd row/column is dropped.
pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if h < 2 || w < 2 {
        return Err(Error::Dimension(format!(
            "avg_pool2: {h}x{w} input is smaller than 2x2"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for (p, src) in x.data().chunks(h * w).enumerate() {
        let dst = &mut out.data_mut()[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let (y, xx) = (2 * oy, 2 * ox);
                dst[oy * wo + ox] = (src[y * w + xx]
                    + src[y * w + xx + 1]
                    + src[(y + 1) * w + xx]
                    + src[(y + 1) * w + xx + 1])
                    * quarter;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2_backward<T: Real>(input_shape: [usize; 4], dout: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = input_shape;
    let (ho, wo) = (dout.height(), dout.width());
    let quarter = T::from_f64(0.25);
    let mut dx = Tensor::zeros(input_shape);
    for (p, g) in dout.data().chunks(ho * wo).enumerate() {
        let dst = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let v = g[oy * wo + ox] * quarter;
                let (y, xx) = (2 * oy, 2 * ox);
                dst[y * w + xx] += v;
                dst[y * w + xx + 1] += v;
                dst[(y + 1) * w + xx] += v;
                dst[(y + 1) * w + xx + 1] += v;
            }
        }
    }
    dx
}

/// Mean over each `(n, c)` plane, producing `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let inv = T::one() / T::from_f64((h * w) as f64);
    let data = x
        .data()
        .chunks(h * w)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor {
        shape: [n, c, 1, 1],
        data,
    }
}

pub fn global_avg_pool_backward<T: Real>(input_shape: [usize; 4], dout: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = input_shape;
    let inv = T::one() / T::from_f64((h * w) as f64);
    let mut dx = Tensor::zeros(input_shape);
    for (p, dst) in dx.data_mut().chunks_mut(h * w).enumerate() {
        dst.fill(dout.data()[p] * inv);
    }
    dx
}

/// Source taps of a half-pixel-centred linear resample of `len_in` samples to `len_out`.
pub fn linear_taps(len_in: usize, len_out: usize) -> Vec<(usize, usize, f64)> {
    let ratio = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len_in - 1);
            let i1 = (i0 + 1).min(len_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centres (sample positions `(i + 0.5) * in / out - 0.5`,
/// clamped at the borders). Resizing only the width leaves rows untouched.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("resize_bilinear: zero-sized output".into()));
    }
    let [n, c, h, w] = x.shape();
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for (p, src) in x.data().chunks(h * w).enumerate() {
        let dst = &mut out.data_mut()[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::from_f64(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::from_f64(lx);
                // a + t·(b − a) is exact whenever a == b.
                let (a, b) = (src[y0 * w + x0], src[y0 * w + x1]);
                let (c, d) = (src[y1 * w + x0], src[y1 * w + x1]);
                let top = a + lx * (b - a);
                let bottom = c + lx * (d - c);
                dst[oy * out_w + ox] = top + ly * (bottom - top);
            }
        }
    }
    Ok(out)
}

pub fn resize_bilinear_backward<T: Real>(input_shape: [usize; 4], dout: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = input_shape;
    let (out_h, out_w) = (dout.height(), dout.width());
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    let mut dx = Tensor::zeros(input_shape);
    for (p, g) in dout.data().chunks(out_h * out_w).enumerate() {
        let dst = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let (ly1, ly0) = (T::from_f64(ly), T::from_f64(1.0 - ly));
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (lx1, lx0) = (T::from_f64(lx), T::from_f64(1.0 - lx));
                let v = g[oy * out_w + ox];
                dst[y0 * w + x0] += ly0 * lx0 * v;
                dst[y0 * w + x1] += ly0 * lx1 * v;
                dst[y1 * w + x0] += ly1 * lx0 * v;
                dst[y1 * w + x1] += ly1 * lx1 * v;
            }
        }
    }
    dx
}

/// Five-point Laplacian of one `h × w` plane with replicate borders.
pub fn laplacian_plane<T: Real>(src: &[T], h: usize, w: usize, dst: &mut [T]) {
    let four = T::from_f64(4.0);
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(w - 1);
            dst[y * w + x] =
                src[y * w + right] + src[y * w + left] + src[down * w + x] + src[up * w + x]
                    - four * src[y * w + x];
        }
    }
}

/// Adjoint of [`laplacian_plane`], accumulated into `dx`.
pub fn laplacian_plane_backward<T: Real>(g: &[T], h: usize, w: usize, dx: &mut [T]) {
    let four = T::from_f64(4.0);
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(w - 1);
            let v = g[y * w + x];
            dx[y * w + right] += v;
            dx[y * w + left] += v;
            dx[down * w + x] += v;
            dx[up * w + x] += v;
            dx[y * w + x] -= four * v;
        }
    }
}

pub fn laplacian<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.shape();
    if h < 3 || w < 3 {
        return Err(Error::Dimension(format!(
            "laplacian needs at least 3x3, got {h}x{w}"
        )));
    }
    let mut out = Tensor::zeros(x.shape());
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(h * w)) {
        laplacian_plane(src, h, w, dst);
    }
    Ok(out)
}

pub fn laplacian_backward<T: Real>(dout: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = dout.shape();
    let mut dx = Tensor::zeros(dout.shape());
    for (g, dst) in dout
        .data()
        .chunks(h * w)
        .zip(dx.data_mut().chunks_mut(h * w))
    {
        laplacian_plane_backward(g, h, w, dst);
    }
    dx
}

/// Concatenate along the channel axis.
pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat: no inputs".into()))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        let [pn, _, ph, pw] = p.shape();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "concat: {:?} does not match {:?}",
                p.shape(),
                first.shape()
            )));
        }
    }
    let c: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for i in 0..n {
        for p in parts {
            data.extend_from_slice(p.sample(i));
        }
    }
    Ok(Tensor {
        shape: [n, c, h, w],
        data,
    })
}

/// Splits a channel-concatenated gradient back into per-part gradients.
pub fn split_channels<T: Real>(dout: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let [n, _, h, w] = dout.shape();
    let mut parts: Vec<Vec<T>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(n * c * h * w))
        .collect();
    for i in 0..n {
        let mut offset = 0;
        let s = dout.sample(i);
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&s[offset..offset + c * h * w]);
            offset += c * h * w;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(data, &c)| Tensor {
            shape: [n, c, h, w],
            data,
        })
        .collect()
}

/// `x * a` where `a` is `(n, c, 1, 1)`, broadcast over height and width.
pub fn mul_channels<T: Real>(x: &Tensor<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if a.shape() != [n, c, 1, 1] {
        return Err(Error::Shape(format!(
            "channel scaling: {:?} cannot scale {:?}",
            a.shape(),
            x.shape()
        )));
    }
    let mut out = x.clone();
    for (p, dst) in out.data_mut().chunks_mut(h * w).enumerate() {
        let s = a.data()[p];
        dst.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

pub fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}
