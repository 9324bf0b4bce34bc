//! Raw input tensors: little-endian `f32` values, shape implied by the model.

use std::fs;
use std::path::Path;

use super::bytes::{f32s_from_le, f32s_to_le};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn load_input(path: impl AsRef<Path>, shape: &[usize]) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let want = 4 * shape.iter().product::<usize>();
    if bytes.len() != want {
        return Err(Error::format(format!(
            "{} holds {} bytes; a {shape:?} input needs {want}",
            path.display(),
            bytes.len()
        )));
    }
    Tensor::new(shape.to_vec(), f32s_from_le(&bytes).expect("length checked")).map_err(|e| Error::format(e.to_string()))
}

pub fn save_input(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, f32s_to_le(t.data()))?;
    Ok(())
}
