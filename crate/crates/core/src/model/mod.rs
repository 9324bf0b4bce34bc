//! Sequential model description, FLOPs/output-size accounting and the binary
//! weight and dataset formats.

pub(crate) mod bytes;
pub mod descriptor;
pub mod graph;
pub mod input;
pub mod swmf;
pub mod valset;

pub use bytes::{f32s_from_le, f32s_to_le};
pub use descriptor::{reference_descriptor, LayerDesc, ModelDescriptor};
pub use input::{load_input, save_input};
pub use graph::{Layer, LayerKind, LayerParams, LayerSpec, ModelGraph};
pub use swmf::{load_model, save_model};
pub use valset::{load_valset, save_valset, Sample, ValidationSet};
