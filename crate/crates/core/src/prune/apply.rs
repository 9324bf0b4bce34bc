use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ledger::{kept_channels, FlopsLedger};
use crate::error::{Error, Result};
use crate::model::{LayerKind, ModelGraph};
use crate::tensor::Tensor;

/// Per-layer keep ratios and what they realized on a concrete model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningStrategy {
    /// 1-based graph index -> fraction of output channels preserved.
    pub actions: BTreeMap<usize, f64>,
    pub kept_channels: BTreeMap<usize, usize>,
    pub original_channels: BTreeMap<usize, usize>,
    /// Retained fraction of the original prunable FLOPs.
    pub flops_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_flops_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
}

impl PruningStrategy {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Short content hash used to reference a strategy from a plan.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("strategy serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Indices of the `keep` output filters with the largest L2 norm, returned in
/// ascending channel order. Ties prefer the lower index.
pub fn select_channels(weights: &Tensor, keep: usize) -> Vec<usize> {
    let n = weights.shape()[0];
    let per = weights.len() / n;
    let norms: Vec<f64> = weights
        .data()
        .chunks_exact(per)
        .map(|f| f.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let mut kept = order[..keep.min(n)].to_vec();
    kept.sort_unstable();
    kept
}

fn gather_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let per = t.len() / t.shape()[0];
    let data = rows
        .iter()
        .flat_map(|&r| t.data()[r * per..(r + 1) * per].iter().copied())
        .collect();
    let mut shape = t.shape().to_vec();
    shape[0] = rows.len();
    Tensor::new(shape, data).expect("row gather keeps shape consistent")
}

/// Keeps `groups` (each `group` wide) along axis 1 of a `[n, c*group...]` view.
fn gather_inputs(t: &Tensor, channels: &[usize], old_c: usize) -> Tensor {
    let n = t.shape()[0];
    let per_out = t.len() / n;
    let group = per_out / old_c;
    let mut data = Vec::with_capacity(n * channels.len() * group);
    for o in 0..n {
        let row = &t.data()[o * per_out..(o + 1) * per_out];
        for &c in channels {
            data.extend_from_slice(&row[c * group..(c + 1) * group]);
        }
    }
    let mut shape = t.shape().to_vec();
    shape[1] = shape[1] / old_c * channels.len();
    Tensor::new(shape, data).expect("input gather keeps shape consistent")
}

/// Prunes output channels of the convolution at `layer_index` and the
/// matching input slice of the next parametric layer, then re-chains shapes.
/// The ledger advances by one prunable layer.
pub fn apply_action(
    graph: &ModelGraph,
    ledger: &mut FlopsLedger,
    layer_index: usize,
    keep_ratio: f64,
) -> Result<ModelGraph> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::arg(format!("keep ratio {keep_ratio} outside (0, 1]")));
    }
    let pos = ledger.position(layer_index)?;
    if pos != ledger.visited() {
        return Err(Error::arg(format!(
            "layer {layer_index} acted on out of order (next is position {})",
            ledger.visited()
        )));
    }
    let layer = graph.layer(layer_index)?;
    let n = match layer.spec.kind {
        LayerKind::Conv2d { out_channels, .. } => out_channels,
        _ => return Err(Error::arg(format!("layer {layer_index} is not a convolution"))),
    };
    let params = layer.params.as_ref().expect("conv carries weights");
    let keep = kept_channels(keep_ratio, n);
    let channels = select_channels(&params.weights, keep);

    let next_param = graph
        .specs()
        .skip(layer_index)
        .find(|s| s.kind.is_parametric())
        .map(|s| s.index);

    let mut rebuilt = Vec::with_capacity(graph.len());
    for l in graph.layers() {
        let mut kind = l.spec.kind;
        let mut params = l.params.clone();
        if l.spec.index == layer_index {
            if let LayerKind::Conv2d { out_channels, .. } = &mut kind {
                *out_channels = keep;
            }
            let p = params.as_mut().expect("conv carries weights");
            p.weights = gather_rows(&p.weights, &channels);
            p.bias = channels.iter().map(|&c| p.bias[c]).collect();
        } else if Some(l.spec.index) == next_param {
            let p = params.as_mut().expect("parametric layer carries weights");
            match &mut kind {
                LayerKind::Conv2d { in_channels, .. } => {
                    p.weights = gather_inputs(&p.weights, &channels, *in_channels);
                    *in_channels = keep;
                }
                LayerKind::Linear {
                    in_features,
                    out_features,
                } => {
                    if *in_features % n != 0 {
                        return Err(Error::model(format!(
                            "linear layer {} input {} is not a multiple of {n} channels",
                            l.spec.index, in_features
                        )));
                    }
                    let block = *in_features / n;
                    p.weights = gather_inputs(&p.weights, &channels, n);
                    ledger.add_linear_reduction(2 * (*out_features * (n - keep) * block) as u64);
                    *in_features = keep * block;
                }
                _ => unreachable!("is_parametric"),
            }
        }
        rebuilt.push((l.spec.name.clone(), kind, params));
    }
    let pruned = ModelGraph::new(graph.input_shape(), rebuilt)?;
    ledger.record(pos, keep)?;
    Ok(pruned)
}

/// Applies a whole strategy in layer order. Layers without an entry keep 1.0.
pub fn apply_strategy(graph: &ModelGraph, actions: &BTreeMap<usize, f64>) -> Result<(ModelGraph, FlopsLedger)> {
    let mut ledger = FlopsLedger::new(graph)?;
    for key in actions.keys() {
        ledger.position(*key)?;
    }
    let mut current = graph.clone();
    let indices: Vec<usize> = ledger.layers().iter().map(|l| l.index).collect();
    for index in indices {
        let a = actions.get(&index).copied().unwrap_or(1.0);
        current = apply_action(&current, &mut ledger, index, a)?;
    }
    Ok((current, ledger))
}

/// Describes the realized result of `actions` on `graph`.
pub fn describe_strategy(
    ledger: &FlopsLedger,
    actions: &BTreeMap<usize, f64>,
    target: Option<f64>,
    reward: Option<f64>,
) -> PruningStrategy {
    let mut kept = BTreeMap::new();
    let mut original = BTreeMap::new();
    for (pos, l) in ledger.layers().iter().enumerate() {
        kept.insert(l.index, ledger.kept(pos));
        original.insert(l.index, l.out_channels);
    }
    PruningStrategy {
        actions: actions.clone(),
        kept_channels: kept,
        original_channels: original,
        flops_ratio: ledger.retained_ratio(),
        target_flops_ratio: target,
        reward,
    }
}

/// Convenience used by tests and the CLI: prune, returning graph + strategy.
pub fn prune_with(graph: &ModelGraph, actions: &BTreeMap<usize, f64>) -> Result<(ModelGraph, PruningStrategy)> {
    let (pruned, ledger) = apply_strategy(graph, actions)?;
    Ok((pruned, describe_strategy(&ledger, actions, None, None)))
}
