//! Small fully connected network with manual backpropagation.
//!
//! Hidden layers use the rectifier; the output activation is configurable.
//! Parameters are `f64` so gradients survive finite-difference checks.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[out_dim, in_dim]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNet {
    layers: Vec<DenseLayer>,
    output: OutputActivation,
}

/// Intermediate values from a forward pass needed by the backward pass.
/// Rows are samples; every buffer is row-major `[batch, width]`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Gradients with the same layout as the network's parameters, plus the
/// gradient with respect to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

/// `C[m, n] = A[m, k] · B[k, n] + beta·C`, with `A` and `B` given as
/// `(data, row_stride, col_stride)` and `C` row-major.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    assert!(a.0.len() >= m * k && b.0.len() >= k * n && c.len() >= m * n && ldc == n);
    // SAFETY: the extents and strides above describe in-bounds views of
    // each slice, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl MlpNet {
    /// `dims` is `[input, hidden..., output]`. Hidden layers get He-uniform
    /// init; the output layer is drawn from `±final_scale`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        output: OutputActivation,
        final_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::shape(format!("invalid mlp dims {dims:?}")));
        }
        let count = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = if i + 1 == count {
                    final_scale
                } else {
                    (6.0 / fan_in as f64).sqrt()
                };
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bound");
                let bias_limit = 1.0 / (fan_in as f64).sqrt();
                let bias_dist = Uniform::new_inclusive(-bias_limit, bias_limit).expect("finite bound");
                DenseLayer {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weights: (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect(),
                    biases: if i + 1 == count {
                        (0..fan_out).map(|_| dist.sample(rng)).collect()
                    } else {
                        (0..fan_out).map(|_| bias_dist.sample(rng)).collect()
                    },
                }
            })
            .collect();
        Ok(Self { layers, output })
    }

    pub fn from_layers(layers: Vec<DenseLayer>, output: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("mlp needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.biases.len() != l.out_dim {
                return Err(Error::shape(format!("layer {i} parameter count mismatch")));
            }
            if i > 0 && layers[i - 1].out_dim != l.in_dim {
                return Err(Error::shape(format!("layer {i} does not chain")));
            }
        }
        Ok(Self { layers, output })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.forward_batch(x, 1)
    }

    /// Forward pass over `batch` samples stored row-major in `x`.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        if batch == 0 || x.len() != batch * self.input_dim() {
            return Err(Error::shape(format!(
                "mlp input has {} values, expected {batch} x {}",
                x.len(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let (n_in, n_out) = (layer.in_dim, layer.out_dim);
            let mut z: Vec<f64> = layer.biases.repeat(batch);
            // Z[batch, out] = X[batch, in] · Wᵀ + bias
            gemm(batch, n_in, n_out, (&act, n_in as isize, 1), (&layer.weights, 1, n_in as isize), 1.0, &mut z, n_out);
            let next = if i == last {
                match self.output {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
                }
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            inputs.push(std::mem::replace(&mut act, next));
            pre.push(z);
        }
        let cache = ForwardCache {
            batch,
            inputs,
            pre,
            output: act.clone(),
        };
        Ok((act, cache))
    }

    /// Convenience forward that drops the cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_accumulate(cache, grad_out, &mut grads)?;
        Ok(grads)
    }

    /// Adds the parameter gradients (summed over the cached batch) into
    /// `acc` and overwrites `acc.input` with the input gradient.
    pub fn backward_accumulate(&self, cache: &ForwardCache, grad_out: &[f64], acc: &mut Gradients) -> Result<()> {
        self.backprop(cache, grad_out, Some(acc)).map(|dx| {
            acc.input = dx;
        })
    }

    /// Gradient with respect to the input only, row-major `[batch, input]`.
    pub fn input_gradient(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<Vec<f64>> {
        self.backprop(cache, grad_out, None)
    }

    fn backprop(&self, cache: &ForwardCache, grad_out: &[f64], mut acc: Option<&mut Gradients>) -> Result<Vec<f64>> {
        let batch = cache.batch;
        if grad_out.len() != batch * self.output_dim() || cache.pre.len() != self.layers.len() {
            return Err(Error::shape("gradient does not match the forward cache"));
        }
        if let Some(a) = acc.as_deref() {
            if a.weights.len() != self.layers.len() {
                return Err(Error::shape("gradient layer count mismatch"));
            }
        }
        let mut dz: Vec<f64> = match self.output {
            OutputActivation::Identity => grad_out.to_vec(),
            OutputActivation::Sigmoid => grad_out
                .iter()
                .zip(&cache.output)
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
        };
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let (n_in, n_out) = (layer.in_dim, layer.out_dim);
            let x = &cache.inputs[i];
            if let Some(a) = acc.as_deref_mut() {
                if a.weights[i].len() != layer.weights.len() {
                    return Err(Error::shape("gradient parameter count mismatch"));
                }
                // dW[out, in] += dZᵀ · X
                gemm(n_out, batch, n_in, (&dz, 1, n_out as isize), (x, n_in as isize, 1), 1.0, &mut a.weights[i], n_in);
                for row in dz.chunks_exact(n_out) {
                    for (b, g) in a.biases[i].iter_mut().zip(row) {
                        *b += g;
                    }
                }
            }
            // dX[batch, in] = dZ · W
            let mut dx = vec![0.0; batch * n_in];
            gemm(batch, n_out, n_in, (&dz, n_out as isize, 1), (&layer.weights, n_in as isize, 1), 0.0, &mut dx, n_in);
            if i == 0 {
                return Ok(dx);
            }
            dz = dx
                .into_iter()
                .zip(&cache.pre[i - 1])
                .map(|(d, z)| if *z > 0.0 { d } else { 0.0 })
                .collect();
        }
        unreachable!("network has at least one layer")
    }

    /// `θ ← θ − lr·∇θ`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.weights.len() != self.layers.len() {
            return Err(Error::shape("gradient layer count mismatch"));
        }
        for ((layer, dw), db) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            if dw.len() != layer.weights.len() || db.len() != layer.biases.len() {
                return Err(Error::shape("gradient parameter count mismatch"));
            }
            for (w, g) in layer.weights.iter_mut().zip(dw) {
                *w -= lr * g;
            }
            for (b, g) in layer.biases.iter_mut().zip(db) {
                *b -= lr * g;
            }
        }
        Ok(())
    }

    /// `self ← τ·source + (1−τ)·self`.
    pub fn blend_from(&mut self, source: &MlpNet, tau: f64) -> Result<()> {
        if self.dims() != source.dims() {
            return Err(Error::shape("cannot blend networks of different dims"));
        }
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            for (d, s) in dst.weights.iter_mut().zip(&src.weights) {
                *d = tau * s + (1.0 - tau) * *d;
            }
            for (d, s) in dst.biases.iter_mut().zip(&src.biases) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
        Ok(())
    }
}

impl Gradients {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    /// `self += scale·other`. The input gradient is accumulated only when
    /// both have the same length.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        if self.input.len() == other.input.len() {
            for (x, y) in self.input.iter_mut().zip(&other.input) {
                *x += scale * y;
            }
        }
    }
}

/// Parameter update rule with its running state.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(net: &MlpNet, lr: f64) -> Self {
        Optimizer::Adam(Adam::new(net, lr))
    }

    /// Descends along `grads`.
    pub fn step(&mut self, net: &mut MlpNet, grads: &Gradients) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => net.sgd_step(grads, *lr),
            Optimizer::Adam(a) => a.step(net, grads),
        }
    }
}

/// Adam with bias correction (β1 = 0.9, β2 = 0.999, ε = 1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(net: &MlpNet, lr: f64) -> Self {
        Self {
            lr,
            t: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut MlpNet, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != net.layers.len() || self.m.weights.len() != net.layers.len() {
            return Err(Error::shape("gradient layer count mismatch"));
        }
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| -> Result<()> {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::shape("gradient parameter count mismatch"));
            }
            for i in 0..p.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
            Ok(())
        };
        for (i, layer) in net.layers.iter_mut().enumerate() {
            update(&mut layer.weights, &grads.weights[i], &mut self.m.weights[i], &mut self.v.weights[i])?;
            update(&mut layer.biases, &grads.biases[i], &mut self.m.biases[i], &mut self.v.biases[i])?;
        }
        Ok(())
    }
}
