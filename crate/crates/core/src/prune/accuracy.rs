use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelGraph, ValidationSet};

/// Top-k accuracies over a validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub samples: usize,
    /// k -> fraction of samples whose label ranks within the top k outputs.
    pub top_k: BTreeMap<usize, f64>,
}

impl AccuracyReport {
    pub fn top(&self, k: usize) -> Option<f64> {
        self.top_k.get(&k).copied()
    }

    pub fn top1(&self) -> f64 {
        self.top(1).unwrap_or(0.0)
    }
}

/// Zero-based rank of `label` among `scores`; ties rank lower class indices
/// first.
pub fn label_rank(scores: &[f32], label: usize) -> usize {
    let target = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > target || (s == target && j < label))
        .count()
}

pub fn evaluate_accuracy(graph: &ModelGraph, valset: &ValidationSet, ks: &[usize]) -> Result<AccuracyReport> {
    if valset.input_shape() != graph.input_shape() {
        return Err(Error::arg(format!(
            "validation inputs are {:?}, model expects {:?}",
            valset.input_shape(),
            graph.input_shape()
        )));
    }
    if valset.class_count() != graph.num_classes() {
        return Err(Error::arg(format!(
            "validation set has {} classes, model outputs {}",
            valset.class_count(),
            graph.num_classes()
        )));
    }
    if ks.contains(&0) {
        return Err(Error::arg("k must be >= 1"));
    }
    let mut hits = vec![0usize; ks.len()];
    for sample in valset.samples() {
        let out = graph.forward(&sample.input)?;
        let rank = label_rank(out.data(), sample.label);
        for (h, &k) in hits.iter_mut().zip(ks) {
            if rank < k {
                *h += 1;
            }
        }
    }
    let n = valset.len();
    let top_k = ks
        .iter()
        .zip(hits)
        .map(|(&k, h)| (k, if n == 0 { 0.0 } else { h as f64 / n as f64 }))
        .collect();
    Ok(AccuracyReport { samples: n, top_k })
}
