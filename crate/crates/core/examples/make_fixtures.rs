//! Regenerates the checked-in fixtures:
//!
//! ```text
//! cargo run -p edgesplit-core --example make_fixtures -- fixtures
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use edgesplit::model::{reference_descriptor, LayerParams, ModelGraph, save_input, save_model, save_valset, Sample, ValidationSet};
use edgesplit::planner::{LatencyTable, TableEntry};
use edgesplit::profile::{HostInfo, LayerProfile, LayerTiming};
use edgesplit::prune::evaluate_accuracy;
use edgesplit::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const MODEL_SEED: u64 = 7;
const DATA_SEED: u64 = 11;
const SAMPLES: usize = 12;
const CALIBRATION_POOL: usize = 48;
const LOGIT_SCALE: f32 = 3.0;

/// Per-split end-to-end totals (ms) measured over a ~50 Mbps wireless link.
const SPLIT_TOTALS: [f64; 20] = [
    99.91, 166.98, 65.89, 85.03, 31.91, 20.07, 60.88, 40.98, 55.93, 37.96, 57.79, 36.11, 27.96, 26.34, 39.15,
    34.57, 31.75, 36.04, 36.67, 36.59,
];
const DEVICE_ONLY_MS: f64 = 31.36;
const SERVER_ONLY_MS: f64 = 80.78;
const LINK_MBPS: f64 = 50.0;

/// Smooth random image: a few oriented sinusoids per channel plus noise.
fn synthetic_image(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> Tensor {
    let [c, h, w] = shape;
    let mut data = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        let waves: Vec<(f32, f32, f32, f32)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    #[allow(clippy::approx_constant)]
                    rng.random_range(0.0..6.28),
                    rng.random_range(0.3..1.0),
                )
            })
            .collect();
        let offset: f32 = rng.random_range(-0.5..0.5);
        for y in 0..h {
            for x in 0..w {
                let v: f32 = waves
                    .iter()
                    .map(|(fx, fy, ph, a)| a * (fx * x as f32 + fy * y as f32 + ph).sin())
                    .sum();
                data.push(offset + v + rng.random_range(-0.1..0.1));
            }
        }
    }
    Tensor::new(vec![c, h, w], data).expect("shape matches data")
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Re-centres and rescales each classifier row so logits over a pool of
/// inputs have zero mean and a common spread. A freshly initialised deep
/// ReLU chain otherwise maps nearly every input to the same class.
fn calibrate_classifier(graph: &ModelGraph, pool: &[Tensor]) -> Result<ModelGraph> {
    let last = graph
        .layers()
        .iter()
        .rposition(|l| l.params.is_some())
        .expect("model has a classifier");
    let feats: Vec<Tensor> = pool.iter().map(|x| graph.forward_range(x, 0, last)).collect::<Result<_>>()?;
    let params = graph.layers()[last].params.as_ref().expect("parametric");
    let classes = params.bias.len();
    let width = params.weights.len() / classes;
    let mut weights = params.weights.data().to_vec();
    let mut bias = params.bias.clone();
    for k in 0..classes {
        let row = &weights[k * width..(k + 1) * width];
        let logits: Vec<f32> = feats
            .iter()
            .map(|f| row.iter().zip(f.data()).map(|(w, x)| w * x).sum::<f32>() + bias[k])
            .collect();
        let mean = logits.iter().sum::<f32>() / logits.len() as f32;
        let var = logits.iter().map(|z| (z - mean) * (z - mean)).sum::<f32>() / logits.len() as f32;
        let scale = LOGIT_SCALE / var.sqrt().max(1e-6);
        for w in &mut weights[k * width..(k + 1) * width] {
            *w *= scale;
        }
        bias[k] = (bias[k] - mean) * scale;
    }
    let layers = graph
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let p = if i == last {
                Some(LayerParams {
                    weights: Tensor::new(params.weights.shape().to_vec(), weights.clone()).expect("same shape"),
                    bias: bias.clone(),
                })
            } else {
                l.params.clone()
            };
            (l.spec.name.clone(), l.spec.kind, p)
        })
        .collect();
    ModelGraph::new(graph.input_shape(), layers)
}

fn table_profile(bytes_per_ms: f64) -> LayerProfile {
    LayerProfile {
        host: HostInfo {
            name: "split-latency-table".into(),
            os: "n/a".into(),
            arch: "n/a".into(),
            cpus: 0,
        },
        repeats: 10,
        input_bytes: (SERVER_ONLY_MS * bytes_per_ms).round() as u64,
        model_hash: None,
        layers: SPLIT_TOTALS
            .iter()
            .enumerate()
            .map(|(i, t)| LayerTiming {
                layer: i + 1,
                kind: "table".into(),
                compute_ms: 0.0,
                output_bytes: (t * bytes_per_ms).round() as u64,
            })
            .collect(),
    }
}

fn main() -> Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()).into();
    fs::create_dir_all(&out)?;
    let path = |name: &str| -> PathBuf { Path::new(&out).join(name) };

    let raw = reference_descriptor().build(MODEL_SEED)?;
    let shape = raw.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(DATA_SEED);
    let pool: Vec<Tensor> = (0..CALIBRATION_POOL).map(|_| synthetic_image(&mut rng, shape)).collect();
    let graph = calibrate_classifier(&raw, &pool)?;
    save_model(&graph, path("model.swmf"))?;

    let mut samples = Vec::with_capacity(SAMPLES);
    for _ in 0..SAMPLES {
        let input = synthetic_image(&mut rng, shape);
        let label = argmax(graph.forward(&input)?.data());
        samples.push(Sample { input, label });
    }
    let valset = ValidationSet::new(shape, graph.num_classes(), samples)?;
    save_valset(&valset, path("val.swds"))?;
    let report = evaluate_accuracy(&graph, &valset, &[1, 3, 5])?;

    let sample = synthetic_image(&mut rng, shape);
    let sample_probs = graph.forward(&sample)?;
    save_input(&sample, path("sample.bin"))?;

    let manifest = json!({
        "model": "model.swmf",
        "model_hash": graph.hash_hex(),
        "model_seed": MODEL_SEED,
        "valset": "val.swds",
        "data_seed": DATA_SEED,
        "samples": valset.len(),
        "top1": report.top(1),
        "top3": report.top(3),
        "top5": report.top(5),
        "predictions": valset.samples().iter().map(|s| s.label).collect::<Vec<_>>(),
        "sample_input": "sample.bin",
        "sample_prediction": argmax(sample_probs.data()),
    });
    fs::write(path("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;

    let table = LatencyTable {
        unit: "ms".into(),
        bandwidth_mbps: Some(LINK_MBPS),
        entries: SPLIT_TOTALS
            .iter()
            .enumerate()
            .map(|(i, &total_ms)| TableEntry { split: i + 1, total_ms })
            .collect(),
        device_only_ms: Some(DEVICE_ONLY_MS),
        server_only_ms: Some(SERVER_ONLY_MS),
    };
    fs::write(path("split_latency_table.json"), serde_json::to_string_pretty(&table)? + "\n")?;

    // Transfer-only profiles reproducing the table at the link rate:
    // bytes(c) = T(c) * bytes-per-ms, zero compute.
    let bytes_per_ms = LINK_MBPS * 1e6 / 8.0 / 1e3;
    let profile = table_profile(bytes_per_ms);
    profile.save(path("table_device_profile.json"))?;
    profile.save(path("table_server_profile.json"))?;
    println!("wrote fixtures to {}", out.display());
    Ok(())
}
