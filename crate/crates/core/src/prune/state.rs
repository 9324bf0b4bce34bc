use serde::{Deserialize, Serialize};

use super::ledger::FlopsLedger;
use crate::error::Result;

/// Width of the agent's observation vector.
pub const STATE_DIM: usize = 11;

/// Observation for one prunable layer: position, geometry, FLOPs ledger
/// entries and the previous action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub index: usize,
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub stride: usize,
    pub k: usize,
    pub flops: u64,
    pub flops_reduced: u64,
    pub flops_rest: u64,
    pub prev_action: f64,
    /// Every feature mapped into `[0, 1]`.
    pub normalized: [f64; STATE_DIM],
}

/// Per-feature min/max of the static features over the prunable layers of
/// the unpruned model.
#[derive(Debug, Clone, PartialEq)]
pub struct StateNormalizer {
    min: [f64; 7],
    max: [f64; 7],
}

fn static_features(ledger: &FlopsLedger, pos: usize) -> [f64; 7] {
    let l = &ledger.layers()[pos];
    [
        l.index as f64,
        l.out_channels as f64,
        l.in_channels as f64,
        l.in_hw.0 as f64,
        l.in_hw.1 as f64,
        l.stride as f64,
        l.kernel.0 as f64,
    ]
}

impl StateNormalizer {
    pub fn new(ledger: &FlopsLedger) -> Self {
        let mut min = [f64::INFINITY; 7];
        let mut max = [f64::NEG_INFINITY; 7];
        for pos in 0..ledger.len() {
            for (j, v) in static_features(ledger, pos).into_iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Self { min, max }
    }

    fn scale(&self, j: usize, v: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span > 0.0 {
            ((v - self.min[j]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Builds the observation for prunable layer `layer_index` (1-based graph
/// index). Static features use the unpruned geometry; FLOPs features are
/// fractions of the total prunable FLOPs.
pub fn build_state(
    ledger: &FlopsLedger,
    norm: &StateNormalizer,
    layer_index: usize,
    prev_action: f64,
) -> Result<LayerState> {
    let pos = ledger.position(layer_index)?;
    let l = &ledger.layers()[pos];
    let total = ledger.total() as f64;
    let flops = ledger.current_flops(pos);
    let flops_reduced = ledger.reduced();
    let flops_rest: u64 = (pos + 1..ledger.len()).map(|p| ledger.current_flops(p)).sum();
    let raw = static_features(ledger, pos);
    let mut normalized = [0.0; STATE_DIM];
    for (j, v) in raw.into_iter().enumerate() {
        normalized[j] = norm.scale(j, v);
    }
    normalized[7] = flops as f64 / total;
    normalized[8] = flops_reduced as f64 / total;
    normalized[9] = flops_rest as f64 / total;
    normalized[10] = prev_action.clamp(0.0, 1.0);
    Ok(LayerState {
        index: l.index,
        n: l.out_channels,
        c: l.in_channels,
        h: l.in_hw.0,
        w: l.in_hw.1,
        stride: l.stride,
        k: l.kernel.0,
        flops,
        flops_reduced,
        flops_rest,
        prev_action,
        normalized,
    })
}
