//! Exact integer FLOPs bookkeeping over the prunable (convolution) layers.
//!
//! At any point `reduced() + rest() + retained_visited() + current(layer being
//! decided) == total()`. Once a layer is acted on it becomes visited.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerKind, ModelGraph};

/// Geometry of one prunable convolution in the original model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunableLayer {
    /// 1-based graph index.
    pub index: usize,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub in_hw: (usize, usize),
    pub out_spatial: usize,
    /// Whether this layer's input channels are the previous prunable layer's
    /// output channels.
    pub fed_by_previous: bool,
}

impl PrunableLayer {
    fn flops(&self, kept: usize, in_channels: usize) -> u64 {
        2 * (kept * in_channels * self.kernel.0 * self.kernel.1 * self.out_spatial) as u64
    }
}

/// Channels kept for a keep ratio: round half up, floor at one.
pub fn kept_channels(keep_ratio: f64, channels: usize) -> usize {
    ((keep_ratio * channels as f64 + 0.5).floor() as usize).clamp(1, channels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsLedger {
    layers: Vec<PrunableLayer>,
    original: Vec<u64>,
    kept: Vec<usize>,
    in_channels: Vec<usize>,
    visited: usize,
    /// FLOPs removed from non-prunable (linear) layers by input slicing.
    dependent_linear_reduced: u64,
}

impl FlopsLedger {
    pub fn new(graph: &ModelGraph) -> Result<Self> {
        let mut layers = Vec::new();
        let mut last_parametric_was_conv = false;
        for spec in graph.specs() {
            match spec.kind {
                LayerKind::Conv2d {
                    out_channels,
                    in_channels,
                    kernel,
                    stride,
                    ..
                } => {
                    layers.push(PrunableLayer {
                        index: spec.index,
                        out_channels,
                        in_channels,
                        kernel,
                        stride,
                        in_hw: (spec.input_shape[1], spec.input_shape[2]),
                        out_spatial: spec.output_shape[1..].iter().product(),
                        fed_by_previous: last_parametric_was_conv,
                    });
                    last_parametric_was_conv = true;
                }
                LayerKind::Linear { .. } => last_parametric_was_conv = false,
                _ => {}
            }
        }
        if layers.is_empty() {
            return Err(Error::arg("model has no prunable layers"));
        }
        let original: Vec<u64> = layers
            .iter()
            .map(|l| l.flops(l.out_channels, l.in_channels))
            .collect();
        Ok(Self {
            kept: layers.iter().map(|l| l.out_channels).collect(),
            in_channels: layers.iter().map(|l| l.in_channels).collect(),
            layers,
            original,
            visited: 0,
            dependent_linear_reduced: 0,
        })
    }

    pub fn layers(&self) -> &[PrunableLayer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Position within the prunable set of a 1-based graph index.
    pub fn position(&self, layer_index: usize) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.index == layer_index)
            .ok_or_else(|| Error::arg(format!("layer {layer_index} is not prunable")))
    }

    /// Number of prunable layers already acted on.
    pub fn visited(&self) -> usize {
        self.visited
    }

    pub fn total(&self) -> u64 {
        self.original.iter().sum()
    }

    pub fn original_flops(&self, pos: usize) -> u64 {
        self.original[pos]
    }

    pub fn current_flops(&self, pos: usize) -> u64 {
        self.layers[pos].flops(self.kept[pos], self.in_channels[pos])
    }

    pub fn kept(&self, pos: usize) -> usize {
        self.kept[pos]
    }

    pub fn in_channels(&self, pos: usize) -> usize {
        self.in_channels[pos]
    }

    /// `F_rdc`: FLOPs removed so far across the prunable set.
    pub fn reduced(&self) -> u64 {
        self.total() - (0..self.len()).map(|p| self.current_flops(p)).sum::<u64>()
    }

    /// `F_rest`: current FLOPs of prunable layers after the one being decided.
    pub fn rest(&self) -> u64 {
        (self.visited + 1..self.len()).map(|p| self.current_flops(p)).sum()
    }

    /// Current FLOPs of every layer not yet acted on, including the one
    /// being decided.
    pub fn unvisited(&self) -> u64 {
        (self.visited..self.len()).map(|p| self.current_flops(p)).sum()
    }

    pub fn retained_visited(&self) -> u64 {
        (0..self.visited).map(|p| self.current_flops(p)).sum()
    }

    pub fn retained(&self) -> u64 {
        (0..self.len()).map(|p| self.current_flops(p)).sum()
    }

    /// Retained fraction of the original prunable FLOPs.
    pub fn retained_ratio(&self) -> f64 {
        self.retained() as f64 / self.total() as f64
    }

    pub fn dependent_linear_reduced(&self) -> u64 {
        self.dependent_linear_reduced
    }

    pub(crate) fn add_linear_reduction(&mut self, flops: u64) {
        self.dependent_linear_reduced += flops;
    }

    /// Records that the prunable layer at `pos` keeps `kept` output channels.
    /// Layers must be visited in order.
    pub fn record(&mut self, pos: usize, kept: usize) -> Result<()> {
        if pos != self.visited {
            return Err(Error::arg(format!(
                "prunable layers must be visited in order: expected position {}, got {pos}",
                self.visited
            )));
        }
        if kept == 0 || kept > self.layers[pos].out_channels {
            return Err(Error::arg(format!("cannot keep {kept} channels of layer {}", self.layers[pos].index)));
        }
        self.kept[pos] = kept;
        if pos + 1 < self.len() && self.layers[pos + 1].fed_by_previous {
            self.in_channels[pos + 1] = kept;
        }
        self.visited += 1;
        Ok(())
    }

    /// Lowest achievable retained FLOPs if the layer at `pos` keeps `kept`
    /// channels and every later layer drops to `a_min`.
    fn min_retained_with(&self, pos: usize, kept: usize, a_min: f64) -> u64 {
        let mut total = self.retained_visited();
        let mut prev_kept = kept;
        total += self.layers[pos].flops(kept, self.in_channels[pos]);
        for p in pos + 1..self.len() {
            let l = &self.layers[p];
            let k = kept_channels(a_min, l.out_channels);
            let cin = if l.fed_by_previous { prev_kept } else { self.in_channels[p] };
            total += l.flops(k, cin);
            prev_kept = k;
        }
        total
    }

    /// Fails when even all-`a_min` pruning cannot reach the budget.
    pub fn check_feasible(&self, budget: f64, a_min: f64) -> Result<()> {
        if !(budget > 0.0 && budget <= 1.0) {
            return Err(Error::arg(format!("target FLOPs ratio {budget} outside (0, 1]")));
        }
        let first = self.visited;
        if first >= self.len() {
            return Ok(());
        }
        let k = kept_channels(a_min, self.layers[first].out_channels);
        let floor = self.min_retained_with(first, k, a_min);
        if !within(floor, budget, self.total()) {
            return Err(Error::BudgetInfeasible(format!(
                "retaining {budget} of {} FLOPs is impossible; all-{a_min} pruning keeps {floor}",
                self.total()
            )));
        }
        Ok(())
    }

    /// Largest action `<= raw` for the current layer such that the remaining
    /// layers at `a_min` can still meet `budget` (retained-FLOPs fraction).
    pub fn clamp_action(&self, raw: f64, budget: f64, a_min: f64) -> Result<f64> {
        let pos = self.visited;
        let layer = self
            .layers
            .get(pos)
            .ok_or_else(|| Error::arg("no prunable layer left to decide"))?;
        if budget >= 1.0 {
            return Ok(raw.max(a_min));
        }
        let n = layer.out_channels;
        let total = self.total();
        let max_kept = (1..=n)
            .rev()
            .find(|&k| within(self.min_retained_with(pos, k, a_min), budget, total))
            .ok_or_else(|| {
                Error::BudgetInfeasible(format!(
                    "layer {} cannot meet budget {budget} even with one channel",
                    layer.index
                ))
            })?;
        Ok(raw.min(max_kept as f64 / n as f64).max(a_min))
    }
}

fn within(flops: u64, budget: f64, total: u64) -> bool {
    flops as f64 <= budget * total as f64 * (1.0 + 1e-12)
}
