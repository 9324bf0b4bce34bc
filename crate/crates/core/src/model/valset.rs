//! SWDS validation sets.
//!
//! Little-endian layout: `"SWDS" | u16 version (=1) | u32 sample_count |
//! u16 c, h, w | u16 class_count`, then per sample `u16 label` followed by
//! `c*h*w` f32 values.

use std::fs;
use std::path::Path;

use super::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SWDS";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    input_shape: [usize; 3],
    class_count: usize,
    samples: Vec<Sample>,
}

impl ValidationSet {
    pub fn new(input_shape: [usize; 3], class_count: usize, samples: Vec<Sample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.input.shape() != input_shape.as_slice() {
                return Err(Error::arg(format!(
                    "sample {i} has shape {:?}, expected {input_shape:?}",
                    s.input.shape()
                )));
            }
            if s.label >= class_count {
                return Err(Error::arg(format!(
                    "sample {i} label {} >= class count {class_count}",
                    s.label
                )));
            }
        }
        Ok(Self {
            input_shape,
            class_count,
            samples,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn to_bytes(set: &ValidationSet) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u32(set.samples.len() as u32);
    for d in set.input_shape {
        w.u16(d as u16);
    }
    w.u16(set.class_count as u16);
    for s in &set.samples {
        w.u16(s.label as u16);
        w.f32s(s.input.data());
    }
    w.into_inner()
}

pub fn from_bytes(bytes: &[u8]) -> Result<ValidationSet> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::format("not an SWDS file (bad magic)"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported SWDS version {version}")));
    }
    let count = r.u32()? as usize;
    let shape = [r.u16()? as usize, r.u16()? as usize, r.u16()? as usize];
    let class_count = r.u16()? as usize;
    let per_sample: usize = shape.iter().product();
    let mut samples = Vec::with_capacity(count.min(r.remaining() / (2 + 4 * per_sample.max(1))));
    for _ in 0..count {
        let label = r.u16()? as usize;
        let data = r.f32s(per_sample)?;
        let input = Tensor::new(shape.to_vec(), data).map_err(|e| Error::format(e.to_string()))?;
        samples.push(Sample { input, label });
    }
    if !r.is_empty() {
        return Err(Error::format(format!("{} trailing bytes after last sample", r.remaining())));
    }
    ValidationSet::new(shape, class_count, samples).map_err(|e| Error::format(e.to_string()))
}

pub fn load_valset(path: impl AsRef<Path>) -> Result<ValidationSet> {
    from_bytes(&fs::read(path)?)
}

pub fn save_valset(set: &ValidationSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(set))?;
    Ok(())
}
