//! Dense row-major `f32` tensors and the inference-time layer kernels.
//!
//! Every kernel is a pure function of its arguments. Summation order is fixed,
//! so repeated calls produce bit-identical results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!("extents must be >= 1, got {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size in bytes when stored as 32-bit reals.
    pub fn byte_len(&self) -> usize {
        self.data.len() * 4
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    fn dims3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(format!(
                "{what} expects a [c,h,w] tensor, got {:?}",
                self.shape
            ))),
        }
    }

    fn ensure_finite(&self, what: &str) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("{what}: element {pos} is {}", self.data[pos])));
        }
        Ok(())
    }
}

/// Output extent of a sliding window: `floor((len + 2*pad - k) / stride) + 1`.
pub fn window_extent(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    let padded = len + 2 * pad;
    if kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// 2-D cross-correlation with per-output-channel bias.
///
/// `weights` is `[n, c, kh, kw]`; `input` is `[c, h, w]`.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (c, h, w) = input.dims3("conv2d")?;
    let (n, wc, kh, kw) = match weights.shape[..] {
        [n, wc, kh, kw] => (n, wc, kh, kw),
        _ => {
            return Err(Error::shape(format!(
                "conv2d weights must be [n,c,kh,kw], got {:?}",
                weights.shape
            )))
        }
    };
    if wc != c {
        return Err(Error::shape(format!(
            "conv2d input has {c} channels, weights expect {wc}"
        )));
    }
    if bias.len() != n {
        return Err(Error::shape(format!("conv2d bias has {} entries, expected {n}", bias.len())));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d stride must be positive"));
    }
    let (oh, ow) = match (window_extent(h, kh, stride, pad), window_extent(w, kw, stride, pad)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} does not fit {h}x{w} with pad {pad}"
            )))
        }
    };
    input.ensure_finite("conv2d input")?;

    let src = input.data();
    let wts = weights.data();
    let mut out = vec![0.0f32; n * oh * ow];
    for (o, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
        plane.fill(bias[o]);
        for ci in 0..c {
            let in_plane = &src[ci * h * w..(ci + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let wv = wts[((o * c + ci) * kh + ki) * kw + kj];
                    // valid ox: 0 <= ox*stride + kj - pad < w
                    let ox_lo = pad.saturating_sub(kj).div_ceil(stride);
                    let ox_hi = if w + pad > kj {
                        ((w + pad - kj - 1) / stride + 1).min(ow)
                    } else {
                        0
                    };
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = oy * stride + ki;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let row = &in_plane[(iy - pad) * w..(iy - pad + 1) * w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for ox in ox_lo..ox_hi {
                            dst[ox] += wv * row[ox * stride + kj - pad];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, oh, ow], out)
}

/// Max pooling without padding.
pub fn maxpool2d_forward(input: &Tensor, kh: usize, kw: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = input.dims3("maxpool")?;
    let (oh, ow) = match (window_extent(h, kh, stride, 0), window_extent(w, kw, stride, 0)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::shape(format!(
                "pool window {kh}x{kw} (stride {stride}) does not fit {h}x{w}"
            )))
        }
    };
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for ki in 0..kh {
                    let row = &plane[(oy * stride + ki) * w..];
                    for kj in 0..kw {
                        m = m.max(row[ox * stride + kj]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// `y = W x + b` with `W` stored `[out, in]`.
pub fn linear_forward(input: &Tensor, weights: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let (out_dim, in_dim) = match weights.shape[..] {
        [o, i] => (o, i),
        _ => {
            return Err(Error::shape(format!(
                "linear weights must be [out,in], got {:?}",
                weights.shape
            )))
        }
    };
    if input.shape.len() != 1 || input.len() != in_dim {
        return Err(Error::shape(format!(
            "linear expects a vector of {in_dim}, got {:?}",
            input.shape
        )));
    }
    if bias.len() != out_dim {
        return Err(Error::shape(format!(
            "linear bias has {} entries, expected {out_dim}",
            bias.len()
        )));
    }
    input.ensure_finite("linear input")?;
    let x = input.data();
    let y = weights
        .data()
        .chunks_exact(in_dim)
        .zip(bias)
        .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v))
        .collect();
    Tensor::from_vec(y)
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Numerically stable softmax over a vector.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    if input.shape.len() != 1 {
        return Err(Error::shape(format!("softmax expects a vector, got {:?}", input.shape)));
    }
    let max = input.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = input.data.iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    Tensor::from_vec(exps.into_iter().map(|e| e / sum).collect())
}

pub fn flatten(input: &Tensor) -> Tensor {
    Tensor {
        shape: vec![input.len()],
        data: input.data.clone(),
    }
}
