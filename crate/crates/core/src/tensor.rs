//! Dense tensors and the handful of kernels every cell and topology shares:
//! matrix multiply, 3x3 same-padding convolution, and non-overlapping pooling,
//! each paired with its closed-form backward.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar element type. `f64` is used by oracles and tests, `f32` for training.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Width in bytes, used by the checkpoint container.
    const BYTES: u8;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("representable")
    }

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const BYTES: u8 = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const BYTES: u8 = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite tensor element");
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Tensor<T>, scale: T) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

fn dims2<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [a, b] => Ok((a, b)),
        ref s => Err(Error::shape(format!("{what}: expected rank-2 tensor, got {s:?}"))),
    }
}

fn dims3<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        ref s => Err(Error::shape(format!("{what}: expected rank-3 tensor, got {s:?}"))),
    }
}

/// `C = A · B` for `A: [m,k]`, `B: [k,n]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2(a, "matmul lhs")?;
    let (k2, n) = dims2(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::shape(format!("matmul inner dims {k} vs {k2}")));
    }
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], c)
}

fn transpose<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = dims2(a, "transpose")?;
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::from_vec(&[n, m], out)
}

/// Gradients of `C = A·B`: `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
pub fn matmul_backward<T: Real>(
    dc: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, _) = dims2(a, "matmul lhs")?;
    let (_, n) = dims2(b, "matmul rhs")?;
    if dc.shape() != [m, n] {
        return Err(Error::shape(format!("matmul grad {:?} vs [{m},{n}]", dc.shape())));
    }
    let da = matmul(dc, &transpose(b)?)?;
    let db = matmul(&transpose(a)?, dc)?;
    Ok((da, db))
}

/// Dense `y += Wᵀ x` where `w` is stored input-major as `[n_in, n_out]`.
/// Zero inputs are skipped, which makes binary spike inputs event-driven.
pub fn accumulate_input_major<T: Real>(w: &[T], n_out: usize, x: &[T], y: &mut [T]) {
    debug_assert_eq!(w.len(), x.len() * n_out);
    debug_assert_eq!(y.len(), n_out);
    for (j, &xj) in x.iter().enumerate() {
        if xj == T::zero() {
            continue;
        }
        let col = &w[j * n_out..(j + 1) * n_out];
        if xj == T::one() {
            for (yv, &wv) in y.iter_mut().zip(col) {
                *yv += wv;
            }
        } else {
            for (yv, &wv) in y.iter_mut().zip(col) {
                *yv += xj * wv;
            }
        }
    }
}

/// Backward of [`accumulate_input_major`]: `dx += W δ`, `dW += x δᵀ`.
pub fn accumulate_input_major_backward<T: Real>(
    w: &[T],
    n_out: usize,
    x: &[T],
    delta: &[T],
    dx: Option<&mut [T]>,
    dw: &mut [T],
) {
    if let Some(dx) = dx {
        for (j, dxj) in dx.iter_mut().enumerate() {
            let col = &w[j * n_out..(j + 1) * n_out];
            let mut s = T::zero();
            for (&wv, &dv) in col.iter().zip(delta) {
                s += wv * dv;
            }
            *dxj += s;
        }
    }
    for (j, &xj) in x.iter().enumerate() {
        if xj == T::zero() {
            continue;
        }
        let col = &mut dw[j * n_out..(j + 1) * n_out];
        for (g, &dv) in col.iter_mut().zip(delta) {
            *g += xj * dv;
        }
    }
}

/// 3x3 cross-correlation, stride 1, zero padding 1: `[Cin,H,W] * [Cout,Cin,3,3] -> [Cout,H,W]`.
pub fn conv2d<T: Real>(x: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let (cin, h, w) = dims3(x, "conv2d input")?;
    let cout = check_kernel(k, cin)?;
    let mut y = vec![T::zero(); cout * h * w];
    conv2d_into(x.data(), cin, h, w, k.data(), cout, &mut y);
    Tensor::from_vec(&[cout, h, w], y)
}

fn check_kernel<T: Real>(k: &Tensor<T>, cin: usize) -> Result<usize> {
    match *k.shape() {
        [cout, kc, 3, 3] if kc == cin => Ok(cout),
        [_, kc, 3, 3] => Err(Error::shape(format!("conv2d channel mismatch: input {cin}, kernel {kc}"))),
        ref s => Err(Error::shape(format!("conv2d kernel must be [Cout,Cin,3,3], got {s:?}"))),
    }
}

/// Slice-level convolution that accumulates into `y`. Zero input pixels are skipped.
pub fn conv2d_into<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: &[T],
    cout: usize,
    y: &mut [T],
) {
    let plane = h * w;
    for ci in 0..cin {
        for iy in 0..h {
            for ix in 0..w {
                let xv = x[ci * plane + iy * w + ix];
                if xv == T::zero() {
                    continue;
                }
                // input pixel (iy,ix) contributes to output (oy,ox) with kernel tap
                // (ky,kx) where iy = oy + ky - 1
                for ky in 0..3 {
                    let oy = iy as isize + 1 - ky as isize;
                    if oy < 0 || oy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ox = ix as isize + 1 - kx as isize;
                        if ox < 0 || ox >= w as isize {
                            continue;
                        }
                        let o = oy as usize * w + ox as usize;
                        for co in 0..cout {
                            y[co * plane + o] += xv * k[((co * cin + ci) * 3 + ky) * 3 + kx];
                        }
                    }
                }
            }
        }
    }
}

/// Slice-level conv backward: accumulates `dx` (if requested) and `dk`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_into<T: Real>(
    dy: &[T],
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: &[T],
    cout: usize,
    mut dx: Option<&mut [T]>,
    dk: &mut [T],
) {
    let plane = h * w;
    for ci in 0..cin {
        for iy in 0..h {
            for ix in 0..w {
                let xi = ci * plane + iy * w + ix;
                let xv = x[xi];
                let mut gx = T::zero();
                for ky in 0..3 {
                    let oy = iy as isize + 1 - ky as isize;
                    if oy < 0 || oy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ox = ix as isize + 1 - kx as isize;
                        if ox < 0 || ox >= w as isize {
                            continue;
                        }
                        let o = oy as usize * w + ox as usize;
                        for co in 0..cout {
                            let ki = ((co * cin + ci) * 3 + ky) * 3 + kx;
                            let g = dy[co * plane + o];
                            gx += g * k[ki];
                            if xv != T::zero() {
                                dk[ki] += g * xv;
                            }
                        }
                    }
                }
                if let Some(dx) = dx.as_deref_mut() {
                    dx[xi] += gx;
                }
            }
        }
    }
}

/// Returns `(dX, dK)` for [`conv2d`].
pub fn conv2d_backward<T: Real>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    k: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (cin, h, w) = dims3(x, "conv2d input")?;
    let cout = check_kernel(k, cin)?;
    if dy.shape() != [cout, h, w] {
        return Err(Error::shape(format!("conv2d grad {:?} vs [{cout},{h},{w}]", dy.shape())));
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dk = Tensor::zeros(k.shape());
    conv2d_backward_into(dy.data(), x.data(), cin, h, w, k.data(), cout, Some(dx.data_mut()), dk.data_mut());
    Ok((dx, dk))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

pub fn pooled_dims(c: usize, h: usize, w: usize, k: usize) -> Result<(usize, usize, usize)> {
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::shape(format!("pool size {k} does not divide {h}x{w}")));
    }
    Ok((c, h / k, w / k))
}

/// Non-overlapping max pooling on a `[C,H,W]` slice. `argmax` receives the flat input
/// index chosen for each output; ties go to the first element in row-major order.
pub fn maxpool_into<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    y: &mut [T],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / k, w / k);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = 0usize;
                for dy in 0..k {
                    for dx in 0..k {
                        let i = ch * h * w + (oy * k + dy) * w + ox * k + dx;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                y[o] = best;
                argmax[o] = best_i as u32;
            }
        }
    }
}

pub fn maxpool_backward_into<T: Real>(dy: &[T], argmax: &[u32], dx: &mut [T]) {
    for (&g, &i) in dy.iter().zip(argmax) {
        dx[i as usize] += g;
    }
}

pub fn avgpool_into<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, y: &mut [T]) {
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::of((k * k) as f64);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = T::zero();
                for dy in 0..k {
                    let row = ch * h * w + (oy * k + dy) * w + ox * k;
                    for v in &x[row..row + k] {
                        s += *v;
                    }
                }
                y[ch * oh * ow + oy * ow + ox] = s * inv;
            }
        }
    }
}

pub fn avgpool_backward_into<T: Real>(dy: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::of((k * k) as f64);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dy[ch * oh * ow + oy * ow + ox] * inv;
                for dy_ in 0..k {
                    let row = ch * h * w + (oy * k + dy_) * w + ox * k;
                    for v in &mut dx[row..row + k] {
                        *v += g;
                    }
                }
            }
        }
    }
}

/// Max pooling over `[C,H,W]`; returns the pooled tensor and the argmax tape.
pub fn maxpool<T: Real>(x: &Tensor<T>, k: usize) -> Result<(Tensor<T>, Vec<u32>)> {
    let (c, h, w) = dims3(x, "maxpool input")?;
    let (c, oh, ow) = pooled_dims(c, h, w, k)?;
    let mut y = vec![T::zero(); c * oh * ow];
    let mut arg = vec![0u32; c * oh * ow];
    maxpool_into(x.data(), c, h, w, k, &mut y, &mut arg);
    Ok((Tensor::from_vec(&[c, oh, ow], y)?, arg))
}

pub fn maxpool_backward<T: Real>(dy: &Tensor<T>, argmax: &[u32], input_shape: &[usize]) -> Result<Tensor<T>> {
    if dy.len() != argmax.len() {
        return Err(Error::shape("maxpool grad does not match argmax tape"));
    }
    let mut dx = Tensor::zeros(input_shape);
    maxpool_backward_into(dy.data(), argmax, dx.data_mut());
    Ok(dx)
}

pub fn avgpool<T: Real>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(x, "avgpool input")?;
    let (c, oh, ow) = pooled_dims(c, h, w, k)?;
    let mut y = vec![T::zero(); c * oh * ow];
    avgpool_into(x.data(), c, h, w, k, &mut y);
    Tensor::from_vec(&[c, oh, ow], y)
}

pub fn avgpool_backward<T: Real>(dy: &Tensor<T>, k: usize, input_shape: &[usize]) -> Result<Tensor<T>> {
    let (c, h, w) = match *input_shape {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("avgpool input must be rank 3")),
    };
    let (_, oh, ow) = pooled_dims(c, h, w, k)?;
    if dy.shape() != [c, oh, ow] {
        return Err(Error::shape(format!("avgpool grad {:?} vs [{c},{oh},{ow}]", dy.shape())));
    }
    let mut dx = Tensor::zeros(input_shape);
    avgpool_backward_into(dy.data(), c, h, w, k, dx.data_mut());
    Ok(dx)
}
