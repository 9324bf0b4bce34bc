mod common;

use std::collections::BTreeMap;

use common::{fixture, fixture_input, fixture_model, fixture_valset, manifest, random_input};
use edgesplit::model::{load_model, reference_descriptor, save_model, LayerKind, ModelDescriptor};
use edgesplit::prune::{apply_action, evaluate_accuracy, prune_with, FlopsLedger};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn reference_table() -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture("reference_layers.json")).unwrap()).unwrap()
}

#[test]
fn layer_table_matches_hand_count() {
    let table = reference_table();
    let graph = fixture_model();
    let specs = reference_descriptor().layer_specs().unwrap();
    let rows = table["layers"].as_array().unwrap();
    assert_eq!(rows.len(), graph.len());
    assert_eq!(graph.input_bytes(), table["input_bytes"].as_u64().unwrap());
    assert_eq!(graph.input_bytes(), 602_112);
    let mut cumulative = 0;
    for ((row, spec), layer) in rows.iter().zip(&specs).zip(graph.layers()) {
        assert_eq!(row["layer"].as_u64().unwrap() as usize, spec.index);
        assert_eq!(row["name"], spec.name.as_str());
        let shape: Vec<usize> = serde_json::from_value(row["output_shape"].clone()).unwrap();
        assert_eq!(shape, spec.output_shape);
        assert_eq!(row["flops"].as_u64().unwrap(), spec.flops(), "{}", spec.name);
        assert_eq!(row["output_bytes"].as_u64().unwrap(), spec.output_bytes(), "{}", spec.name);
        assert_eq!(&layer.spec, spec);
        let next = cumulative + spec.flops();
        assert!(next >= cumulative);
        cumulative = next;
        assert_eq!(row["cumulative_flops"].as_u64().unwrap(), cumulative);
    }
    assert_eq!(graph.total_flops(), table["total_flops"].as_u64().unwrap());
}

#[test]
fn stride_two_pool_quarters_bytes() {
    let d = ModelDescriptor::from_json(
        r#"{"name":"p","input":[2,8,8],"layers":[{"kind":"maxpool","name":"p","kernel":[2,2],"stride":2}]}"#,
    )
    .unwrap();
    let g = d.build(0).unwrap();
    assert_eq!(g.input_bytes(), 4 * g.boundary_bytes(1).unwrap());
}

#[test]
fn fixture_accuracy_reproduces_manifest() {
    let m = manifest();
    let graph = fixture_model();
    let valset = fixture_valset();
    assert_eq!(graph.hash_hex(), m["model_hash"].as_str().unwrap());
    assert_eq!(valset.len() as u64, m["samples"].as_u64().unwrap());
    let report = evaluate_accuracy(&graph, &valset, &[1, 3, 5]).unwrap();
    for k in [1, 3, 5] {
        let want = m[format!("top{k}")].as_f64().unwrap();
        assert!((report.top(k).unwrap() - want).abs() <= 1e-6, "top{k}");
    }
    assert!(report.top(1).unwrap() <= report.top(3).unwrap() && report.top(3).unwrap() <= report.top(5).unwrap());
    let labels: Vec<u64> = valset.samples().iter().map(|s| s.label as u64).collect();
    let recorded: Vec<u64> = serde_json::from_value(m["predictions"].clone()).unwrap();
    assert_eq!(labels, recorded);
    // more than one class is predicted, so pruning can hurt accuracy
    let mut distinct = labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    assert!(distinct.len() > 1);
}

#[test]
fn fixture_sample_prediction() {
    let graph = fixture_model();
    let out = graph.forward(&fixture_input(&graph)).unwrap();
    let argmax = out
        .data()
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > out.data()[best] { i } else { best });
    assert_eq!(argmax as u64, manifest()["sample_prediction"].as_u64().unwrap());
    let sum: f32 = out.data().iter().sum();
    assert!((sum - 1.0).abs() < 1e-5);
}

#[test]
fn fixture_model_roundtrips_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let graph = fixture_model();
    let path = dir.path().join("m.swmf");
    save_model(&graph, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(fixture("model.swmf")).unwrap());
    assert_eq!(load_model(&path).unwrap(), graph);
}

#[test]
fn keep_all_is_bit_identical_on_twenty_inputs() {
    let graph = fixture_model();
    let actions: BTreeMap<usize, f64> = graph.prunable().into_iter().map(|i| (i, 1.0)).collect();
    let (pruned, strategy) = prune_with(&graph, &actions).unwrap();
    assert_eq!(strategy.flops_ratio, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let x = random_input(&graph, &mut rng);
        let a = graph.forward(&x).unwrap();
        let b = pruned.forward(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn seven_of_eight_channels_cut_output_by_an_eighth() {
    let d = ModelDescriptor::from_json(
        r#"{"name":"e","input":[3,10,10],"layers":[
            {"kind":"conv2d","name":"a","out_channels":8,"kernel":[3,3],"stride":1,"pad":1},
            {"kind":"relu","name":"r"},
            {"kind":"conv2d","name":"b","out_channels":4,"kernel":[3,3],"stride":1,"pad":1}]}"#,
    )
    .unwrap();
    let g = d.build(3).unwrap();
    let mut ledger = FlopsLedger::new(&g).unwrap();
    let p = apply_action(&g, &mut ledger, 1, 0.875).unwrap();
    assert!(matches!(p.layer(1).unwrap().spec.kind, LayerKind::Conv2d { out_channels: 7, .. }));
    let before = g.boundary_bytes(1).unwrap() as f64;
    let after = p.boundary_bytes(1).unwrap() as f64;
    assert!(((before - after) / before - 0.125).abs() < 1e-12);
    assert!(matches!(p.layer(3).unwrap().spec.kind, LayerKind::Conv2d { in_channels: 7, .. }));
}
