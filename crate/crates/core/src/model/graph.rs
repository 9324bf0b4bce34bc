use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{self, window_extent, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        out_channels: usize,
        in_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    },
    #[serde(rename = "maxpool")]
    MaxPool { kernel: (usize, usize), stride: usize },
    Relu,
    Linear { out_features: usize, in_features: usize },
    Flatten,
    Softmax,
}

impl LayerKind {
    pub fn code(&self) -> u8 {
        match self {
            LayerKind::Conv2d { .. } => 0,
            LayerKind::MaxPool { .. } => 1,
            LayerKind::Relu => 2,
            LayerKind::Linear { .. } => 3,
            LayerKind::Flatten => 4,
            LayerKind::Softmax => 5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Relu => "relu",
            LayerKind::Linear { .. } => "linear",
            LayerKind::Flatten => "flatten",
            LayerKind::Softmax => "softmax",
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Linear { .. })
    }

    /// Shape of the weight tensor for parametric layers.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel: (kh, kw),
                ..
            } => Some(vec![out_channels, in_channels, kh, kw]),
            LayerKind::Linear {
                out_features,
                in_features,
            } => Some(vec![out_features, in_features]),
            _ => None,
        }
    }

    /// Output shape for a given input shape, or `None` if it does not chain.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match (*self, input) {
            (
                LayerKind::Conv2d {
                    out_channels,
                    in_channels,
                    kernel: (kh, kw),
                    stride,
                    pad,
                },
                &[c, h, w],
            ) if c == in_channels => Some(vec![
                out_channels,
                window_extent(h, kh, stride, pad)?,
                window_extent(w, kw, stride, pad)?,
            ]),
            (LayerKind::MaxPool { kernel: (kh, kw), stride }, &[c, h, w]) => {
                Some(vec![c, window_extent(h, kh, stride, 0)?, window_extent(w, kw, stride, 0)?])
            }
            (LayerKind::Relu, s) => Some(s.to_vec()),
            (
                LayerKind::Linear {
                    out_features,
                    in_features,
                },
                &[n],
            ) if n == in_features => Some(vec![out_features]),
            (LayerKind::Flatten, s) => Some(vec![s.iter().product()]),
            (LayerKind::Softmax, &[n]) => Some(vec![n]),
            _ => None,
        }
    }
}

/// One layer of a sequential model with its resolved shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// 1-based position in the chain.
    pub index: usize,
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
}

impl LayerSpec {
    /// Multiply-accumulates counted as two operations; bias adds excluded.
    pub fn flops(&self) -> u64 {
        match self.kind {
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel: (kh, kw),
                ..
            } => {
                let spatial: usize = self.output_shape[1..].iter().product();
                2 * (out_channels * in_channels * kh * kw * spatial) as u64
            }
            LayerKind::Linear {
                out_features,
                in_features,
            } => 2 * (out_features * in_features) as u64,
            _ => 0,
        }
    }

    pub fn output_bytes(&self) -> u64 {
        4 * self.output_shape.iter().product::<usize>() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Option<LayerParams>,
}

/// Sequential chain of layers over a `[c, h, w]` input.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
}

impl ModelGraph {
    /// Validates the shape chain and parameter presence/shape for every layer.
    pub fn new(
        input_shape: [usize; 3],
        layers: Vec<(String, LayerKind, Option<LayerParams>)>,
    ) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(Error::model("input extents must be >= 1"));
        }
        let mut shape = input_shape.to_vec();
        let mut built = Vec::with_capacity(layers.len());
        for (pos, (name, kind, params)) in layers.into_iter().enumerate() {
            let index = pos + 1;
            let out = kind.output_shape(&shape).ok_or_else(|| {
                Error::model(format!(
                    "layer {index} ({name}, {}) does not accept input {shape:?}",
                    kind.name()
                ))
            })?;
            match (kind.weight_shape(), &params) {
                (Some(ws), Some(p)) => {
                    let n = ws[0];
                    if p.weights.shape() != ws.as_slice() || p.bias.len() != n {
                        return Err(Error::model(format!(
                            "layer {index} ({name}) parameters have shape {:?}/{}, expected {ws:?}/{n}",
                            p.weights.shape(),
                            p.bias.len()
                        )));
                    }
                }
                (None, None) => {}
                (Some(_), None) => {
                    return Err(Error::model(format!("layer {index} ({name}) is missing weights")))
                }
                (None, Some(_)) => {
                    return Err(Error::model(format!(
                        "layer {index} ({name}) is not parametric but carries weights"
                    )))
                }
            }
            built.push(Layer {
                spec: LayerSpec {
                    index,
                    name,
                    kind,
                    input_shape: shape.clone(),
                    output_shape: out.clone(),
                },
                params,
            });
            shape = out;
        }
        if built.is_empty() {
            return Err(Error::model("model has no layers"));
        }
        Ok(Self {
            input_shape,
            layers: built,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn input_bytes(&self) -> u64 {
        4 * self.input_shape.iter().product::<usize>() as u64
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(|l| &l.spec)
    }

    /// `N`, the number of layers.
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// 1-based layer lookup.
    pub fn layer(&self, index: usize) -> Result<&Layer> {
        index
            .checked_sub(1)
            .and_then(|i| self.layers.get(i))
            .ok_or_else(|| Error::arg(format!("layer index {index} out of range 1..={}", self.len())))
    }

    /// 1-based indices of the convolution layers (the prunable set).
    pub fn prunable(&self) -> Vec<usize> {
        self.specs()
            .filter(|s| matches!(s.kind, LayerKind::Conv2d { .. }))
            .map(|s| s.index)
            .collect()
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.layers[self.layers.len() - 1].spec.output_shape
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape().iter().product()
    }

    /// Shape of the tensor that crosses the wire at split point `c`
    /// (`c = 0` is the raw input).
    pub fn boundary_shape(&self, split: usize) -> Result<Vec<usize>> {
        if split == 0 {
            Ok(self.input_shape.to_vec())
        } else {
            Ok(self.layer(split)?.spec.output_shape.clone())
        }
    }

    pub fn boundary_bytes(&self, split: usize) -> Result<u64> {
        Ok(4 * self.boundary_shape(split)?.iter().product::<usize>() as u64)
    }

    pub fn total_flops(&self) -> u64 {
        self.specs().map(LayerSpec::flops).sum()
    }

    pub fn forward_layer(&self, index: usize, input: &Tensor) -> Result<Tensor> {
        let layer = self.layer(index)?;
        if input.shape() != layer.spec.input_shape.as_slice() {
            return Err(Error::shape(format!(
                "layer {index} expects {:?}, got {:?}",
                layer.spec.input_shape,
                input.shape()
            )));
        }
        let params = || layer.params.as_ref().expect("validated at construction");
        match layer.spec.kind {
            LayerKind::Conv2d { stride, pad, .. } => {
                let p = params();
                tensor::conv2d_forward(input, &p.weights, &p.bias, stride, pad)
            }
            LayerKind::MaxPool {
                kernel: (kh, kw),
                stride,
            } => tensor::maxpool2d_forward(input, kh, kw, stride),
            LayerKind::Relu => Ok(tensor::relu(input)),
            LayerKind::Linear { .. } => {
                let p = params();
                tensor::linear_forward(input, &p.weights, &p.bias)
            }
            LayerKind::Flatten => Ok(tensor::flatten(input)),
            LayerKind::Softmax => tensor::softmax(input),
        }
    }

    /// Runs layers `from+1 ..= to` (1-based), i.e. everything after boundary
    /// `from` up to and including layer `to`.
    pub fn forward_range(&self, input: &Tensor, from: usize, to: usize) -> Result<Tensor> {
        if from > to || to > self.len() {
            return Err(Error::arg(format!("bad layer range ({from}, {to}] for {} layers", self.len())));
        }
        let expected = self.boundary_shape(from)?;
        if input.shape() != expected.as_slice() {
            return Err(Error::shape(format!(
                "input to layer {} must be {expected:?}, got {:?}",
                from + 1,
                input.shape()
            )));
        }
        let mut x = input.clone();
        for i in from + 1..=to {
            x = self.forward_layer(i, &x)?;
        }
        Ok(x)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.forward_range(input, 0, self.len())
    }

    /// SHA-256 over the model's SWMF encoding; identifies the model on the wire.
    pub fn hash(&self) -> [u8; 32] {
        let bytes = super::swmf::to_bytes(self);
        Sha256::digest(&bytes).into()
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash())
    }
}
