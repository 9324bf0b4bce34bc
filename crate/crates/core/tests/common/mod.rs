#![allow(dead_code)]

use std::path::PathBuf;

use edgesplit::model::{load_input, load_model, load_valset, ModelDescriptor};
use edgesplit::profile::{HostInfo, LayerProfile, LayerTiming};
use edgesplit::{ModelGraph, Tensor, ValidationSet};
use rand::Rng;

pub mod gradcheck;
pub mod plancheck;
pub mod wirecheck;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture_model() -> ModelGraph {
    load_model(fixture("model.swmf")).expect("fixture model")
}

pub fn fixture_valset() -> ValidationSet {
    load_valset(fixture("val.swds")).expect("fixture valset")
}

pub fn fixture_input(graph: &ModelGraph) -> Tensor {
    load_input(fixture("sample.bin"), &graph.input_shape()).expect("fixture input")
}

pub fn manifest() -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(fixture("manifest.json")).unwrap()).unwrap()
}

const TINY: &str = r#"{
  "name": "tiny",
  "input": [3, 12, 12],
  "layers": [
    { "kind": "conv2d", "name": "c1", "out_channels": 6, "kernel": [3, 3], "stride": 1, "pad": 1 },
    { "kind": "relu", "name": "r1" },
    { "kind": "maxpool", "name": "p1", "kernel": [2, 2], "stride": 2 },
    { "kind": "conv2d", "name": "c2", "out_channels": 8, "kernel": [3, 3], "stride": 1, "pad": 1 },
    { "kind": "relu", "name": "r2" },
    { "kind": "conv2d", "name": "c3", "out_channels": 4, "kernel": [3, 3], "stride": 2, "pad": 1 },
    { "kind": "relu", "name": "r3" },
    { "kind": "flatten", "name": "f" },
    { "kind": "linear", "name": "fc", "out_features": 5 },
    { "kind": "softmax", "name": "s" }
  ]
}"#;

/// Ten-layer model small enough for exhaustive tests.
pub fn tiny_model(seed: u64) -> ModelGraph {
    ModelDescriptor::from_json(TINY).unwrap().build(seed).unwrap()
}

pub fn random_input<R: Rng>(graph: &ModelGraph, rng: &mut R) -> Tensor {
    let shape = graph.input_shape();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

pub fn synthetic_profile<R: Rng>(n: usize, rng: &mut R) -> LayerProfile {
    LayerProfile {
        host: HostInfo {
            name: "synthetic".into(),
            os: "n/a".into(),
            arch: "n/a".into(),
            cpus: 1,
        },
        repeats: 3,
        input_bytes: rng.random_range(1..2_000_000),
        model_hash: None,
        layers: (1..=n)
            .map(|l| LayerTiming {
                layer: l,
                kind: "synthetic".into(),
                compute_ms: rng.random_range(0.0..20.0),
                output_bytes: rng.random_range(4..2_000_000),
            })
            .collect(),
    }
}

/// Same layer sizes as `p` with fresh compute times.
pub fn restime<R: Rng>(p: &LayerProfile, scale: f64, rng: &mut R) -> LayerProfile {
    let mut q = p.clone();
    for l in &mut q.layers {
        l.compute_ms = rng.random_range(0.0..20.0) * scale;
    }
    q
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// A predicted plan pinned at split `c`.
pub fn plan_at(graph: &ModelGraph, c: usize) -> edgesplit::planner::SplitPlan {
    edgesplit::planner::SplitPlan {
        model_hash: graph.hash_hex(),
        split_point: c,
        strategy_ref: None,
        predicted: edgesplit::profile::LatencyBreakdown::new(c, 0.0, 0.0, 0.0),
        link: edgesplit::profile::LinkModel::new(50.0, 0.0).unwrap(),
        mode: edgesplit::planner::PlanMode::Predicted,
    }
}
