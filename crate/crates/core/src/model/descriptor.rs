//! JSON model descriptors: layer kinds and hyperparameters without weights.
//!
//! Input channel/feature counts are derived from the chain, so a descriptor
//! only names output widths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{LayerKind, LayerParams, LayerSpec, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDesc {
    Conv2d {
        name: String,
        out_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
    },
    #[serde(rename = "maxpool")]
    MaxPool {
        name: String,
        kernel: [usize; 2],
        stride: usize,
    },
    Relu {
        name: String,
    },
    Linear {
        name: String,
        out_features: usize,
    },
    Flatten {
        name: String,
    },
    Softmax {
        name: String,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub input: [usize; 3],
    pub layers: Vec<LayerDesc>,
}

const REFERENCE_JSON: &str = include_str!("alexnet_mini.json");

/// The bundled AlexNet-style chain: five conv, three max-pool, seven ReLU,
/// flatten, three linear and a softmax (20 layers) over a 3x224x224 input
/// with 38 classes.
pub fn reference_descriptor() -> ModelDescriptor {
    serde_json::from_str(REFERENCE_JSON).expect("bundled descriptor is valid")
}

impl ModelDescriptor {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn kinds(&self) -> Result<Vec<(String, LayerKind)>> {
        let mut shape = self.input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (pos, desc) in self.layers.iter().enumerate() {
            let (name, kind) = match desc {
                LayerDesc::Conv2d {
                    name,
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => (
                    name,
                    LayerKind::Conv2d {
                        out_channels: *out_channels,
                        in_channels: shape[0],
                        kernel: (kernel[0], kernel[1]),
                        stride: *stride,
                        pad: *pad,
                    },
                ),
                LayerDesc::MaxPool { name, kernel, stride } => (
                    name,
                    LayerKind::MaxPool {
                        kernel: (kernel[0], kernel[1]),
                        stride: *stride,
                    },
                ),
                LayerDesc::Relu { name } => (name, LayerKind::Relu),
                LayerDesc::Linear { name, out_features } => (
                    name,
                    LayerKind::Linear {
                        out_features: *out_features,
                        in_features: shape.iter().product(),
                    },
                ),
                LayerDesc::Flatten { name } => (name, LayerKind::Flatten),
                LayerDesc::Softmax { name } => (name, LayerKind::Softmax),
            };
            shape = kind.output_shape(&shape).ok_or_else(|| {
                Error::model(format!("descriptor layer {} ({name}) does not chain from {shape:?}", pos + 1))
            })?;
            out.push((name.clone(), kind));
        }
        Ok(out)
    }

    /// Resolved layer specs, enough for FLOPs and output-size accounting.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        let mut shape = self.input.to_vec();
        self.kinds()?
            .into_iter()
            .enumerate()
            .map(|(i, (name, kind))| {
                let out = kind.output_shape(&shape).expect("checked in kinds()");
                let spec = LayerSpec {
                    index: i + 1,
                    name,
                    kind,
                    input_shape: std::mem::replace(&mut shape, out.clone()),
                    output_shape: out,
                };
                Ok(spec)
            })
            .collect()
    }

    /// Instantiates the descriptor with He-normal weights and small biases.
    pub fn build(&self, seed: u64) -> Result<ModelGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = self
            .kinds()?
            .into_iter()
            .map(|(name, kind)| {
                let params = kind.weight_shape().map(|shape| {
                    let fan_in: usize = shape[1..].iter().product();
                    let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
                    let count = shape.iter().product();
                    let weights: Vec<f32> = (0..count).map(|_| normal.sample(&mut rng)).collect();
                    let bias = (0..shape[0]).map(|_| rng.random_range(-0.05..0.05)).collect();
                    LayerParams {
                        weights: Tensor::new(shape, weights).expect("shape from kind"),
                        bias,
                    }
                });
                (name, kind, params)
            })
            .collect();
        ModelGraph::new(self.input, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_chain_shapes() {
        let d = reference_descriptor();
        let specs = d.layer_specs().unwrap();
        assert_eq!(specs.len(), 20);
        let convs = specs.iter().filter(|s| matches!(s.kind, LayerKind::Conv2d { .. })).count();
        let pools = specs.iter().filter(|s| matches!(s.kind, LayerKind::MaxPool { .. })).count();
        let linears = specs.iter().filter(|s| matches!(s.kind, LayerKind::Linear { .. })).count();
        assert_eq!((convs, pools, linears), (5, 3, 3));
        assert_eq!(specs.last().unwrap().output_shape, vec![38]);
    }

    #[test]
    fn build_is_seed_deterministic() {
        let d = reference_descriptor();
        assert_eq!(d.build(3).unwrap(), d.build(3).unwrap());
        assert_ne!(d.build(3).unwrap(), d.build(4).unwrap());
    }

    #[test]
    fn bad_chain_rejected() {
        let d = ModelDescriptor::from_json(
            r#"{"name":"x","input":[1,4,4],"layers":[{"kind":"maxpool","name":"p","kernel":[5,5],"stride":1}]}"#,
        )
        .unwrap();
        assert!(matches!(d.layer_specs(), Err(Error::InvalidModel(_))));
    }
}
