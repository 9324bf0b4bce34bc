//! SWMF weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! "SWMF" | u16 version (=1) | u16 layer_count | u16 in_c, in_h, in_w
//! per layer:
//!   u16 name_len | name (UTF-8) | u8 kind
//!   kind params as u32:  conv    n, c, kh, kw, stride, pad
//!                        maxpool kh, kw, stride
//!                        linear  n, c
//!   f32 weights, then f32 biases (conv: n*c*kh*kw + n; linear: n*c + n)
//! ```
//!
//! Kind codes: 0 conv, 1 maxpool, 2 relu, 3 linear, 4 flatten, 5 softmax.

use std::fs;
use std::path::Path;

use super::bytes::{ByteReader, ByteWriter};
use super::graph::{LayerKind, LayerParams, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SWMF";
pub const VERSION: u16 = 1;

pub fn to_bytes(graph: &ModelGraph) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u16(graph.len() as u16);
    for d in graph.input_shape() {
        w.u16(d as u16);
    }
    for layer in graph.layers() {
        let spec = &layer.spec;
        w.u16(spec.name.len() as u16);
        w.bytes(spec.name.as_bytes());
        w.u8(spec.kind.code());
        match spec.kind {
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel: (kh, kw),
                stride,
                pad,
            } => {
                for v in [out_channels, in_channels, kh, kw, stride, pad] {
                    w.u32(v as u32);
                }
            }
            LayerKind::MaxPool {
                kernel: (kh, kw),
                stride,
            } => {
                for v in [kh, kw, stride] {
                    w.u32(v as u32);
                }
            }
            LayerKind::Linear {
                out_features,
                in_features,
            } => {
                w.u32(out_features as u32);
                w.u32(in_features as u32);
            }
            LayerKind::Relu | LayerKind::Flatten | LayerKind::Softmax => {}
        }
        if let Some(p) = &layer.params {
            w.f32s(p.weights.data());
            w.f32s(&p.bias);
        }
    }
    w.into_inner()
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelGraph> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::format("not an SWMF file (bad magic)"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported SWMF version {version}")));
    }
    let count = r.u16()? as usize;
    let input_shape = [r.u16()? as usize, r.u16()? as usize, r.u16()? as usize];
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::format("layer name is not UTF-8"))?;
        let code = r.u8()?;
        let kind = match code {
            0 => {
                let v = r.u32s(6)?;
                LayerKind::Conv2d {
                    out_channels: v[0],
                    in_channels: v[1],
                    kernel: (v[2], v[3]),
                    stride: v[4],
                    pad: v[5],
                }
            }
            1 => {
                let v = r.u32s(3)?;
                LayerKind::MaxPool {
                    kernel: (v[0], v[1]),
                    stride: v[2],
                }
            }
            2 => LayerKind::Relu,
            3 => {
                let v = r.u32s(2)?;
                LayerKind::Linear {
                    out_features: v[0],
                    in_features: v[1],
                }
            }
            4 => LayerKind::Flatten,
            5 => LayerKind::Softmax,
            other => return Err(Error::format(format!("unknown layer kind code {other}"))),
        };
        let params = match kind.weight_shape() {
            Some(shape) => {
                let n = shape[0];
                let count = shape
                    .iter()
                    .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                    .ok_or_else(|| Error::format("weight tensor too large"))?;
                let weights = Tensor::new(shape, r.f32s(count)?).map_err(|e| Error::model(e.to_string()))?;
                let bias = r.f32s(n)?;
                Some(LayerParams { weights, bias })
            }
            None => None,
        };
        layers.push((name, kind, params));
    }
    if !r.is_empty() {
        return Err(Error::format(format!("{} trailing bytes after last layer", r.remaining())));
    }
    ModelGraph::new(input_shape, layers)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    from_bytes(&fs::read(path)?)
}

pub fn save_model(graph: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(graph))?;
    Ok(())
}
