//! Per-layer compute profiles, the link model and the latency
//! decomposition `total = t_device + t_tx + t_server` for a split point.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostInfo {
    pub name: String,
    pub os: String,
    pub arch: String,
    pub cpus: usize,
}

impl HostInfo {
    pub fn current() -> Self {
        let name = std::env::var("HOSTNAME")
            .ok()
            .or_else(|| fs::read_to_string("/etc/hostname").ok())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| "unknown".into());
        Self {
            name,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTiming {
    /// 1-based layer index.
    pub layer: usize,
    pub kind: String,
    pub compute_ms: f64,
    pub output_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub host: HostInfo,
    pub repeats: usize,
    /// Size of the raw model input, transmitted when nothing runs on the
    /// device.
    pub input_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_hash: Option<String>,
    pub layers: Vec<LayerTiming>,
}

impl LayerProfile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.layer != i + 1 {
                return Err(Error::format(format!("profile entry {i} has layer {}, expected {}", l.layer, i + 1)));
            }
            if !(l.compute_ms >= 0.0 && l.compute_ms.is_finite()) {
                return Err(Error::format(format!("layer {} latency {} is not a finite >= 0 value", l.layer, l.compute_ms)));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Bytes crossing the link when layers `1..=c` run on the device.
    pub fn boundary_bytes(&self, c: usize) -> Result<u64> {
        match c {
            0 => Ok(self.input_bytes),
            c => self
                .layers
                .get(c - 1)
                .map(|l| l.output_bytes)
                .ok_or_else(|| Error::arg(format!("split {c} beyond {} layers", self.layers.len()))),
        }
    }

    /// Sum of compute latency over 1-based layers `from+1..=to`.
    pub fn span_ms(&self, from: usize, to: usize) -> f64 {
        self.layers[from..to].iter().map(|l| l.compute_ms).sum()
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times every layer of `graph` on this host: one warmup pass, then the
/// median of `repeats` timed passes.
pub fn profile_layers(graph: &ModelGraph, input: &Tensor, repeats: usize) -> Result<LayerProfile> {
    if repeats < 3 {
        return Err(Error::arg(format!("repeats must be >= 3, got {repeats}")));
    }
    if input.shape() != graph.input_shape().as_slice() {
        return Err(Error::arg(format!(
            "input shape {:?} does not match model input {:?}",
            input.shape(),
            graph.input_shape()
        )));
    }
    let n = graph.len();
    let mut samples = vec![Vec::with_capacity(repeats); n];
    for pass in 0..=repeats {
        let mut x = input.clone();
        for i in 0..n {
            let start = Instant::now();
            x = graph.forward_layer(i + 1, &x)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            if pass > 0 {
                samples[i].push(ms);
            }
        }
    }
    let layers = graph
        .specs()
        .zip(samples.iter_mut())
        .map(|(spec, s)| LayerTiming {
            layer: spec.index,
            kind: spec.kind.name().to_string(),
            compute_ms: median(s),
            output_bytes: spec.output_bytes(),
        })
        .collect();
    Ok(LayerProfile {
        host: HostInfo::current(),
        repeats,
        input_bytes: graph.input_bytes(),
        model_hash: Some(graph.hash_hex()),
        layers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    /// Megabits (10⁶ bits) per second.
    pub bandwidth_mbps: f64,
    #[serde(default)]
    pub overhead_ms: f64,
}

impl LinkModel {
    pub fn new(bandwidth_mbps: f64, overhead_ms: f64) -> Result<Self> {
        let link = Self {
            bandwidth_mbps,
            overhead_ms,
        };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_mbps > 0.0) {
            return Err(Error::arg(format!("bandwidth {} Mbps must be > 0", self.bandwidth_mbps)));
        }
        if !(self.overhead_ms >= 0.0 && self.overhead_ms.is_finite()) {
            return Err(Error::arg(format!("overhead {} ms must be finite and >= 0", self.overhead_ms)));
        }
        Ok(())
    }

    /// Milliseconds to move `bytes` across the link, overhead included.
    pub fn transfer_ms(&self, bytes: u64) -> f64 {
        8.0 * bytes as f64 / (self.bandwidth_mbps * 1e6) * 1e3 + self.overhead_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    /// Split point: layers `1..=c` on the device.
    pub c: usize,
    pub t_device_ms: f64,
    pub t_tx_ms: f64,
    pub t_server_ms: f64,
    pub total_ms: f64,
}

impl LatencyBreakdown {
    pub fn new(c: usize, t_device_ms: f64, t_tx_ms: f64, t_server_ms: f64) -> Self {
        Self {
            c,
            t_device_ms,
            t_tx_ms,
            t_server_ms,
            total_ms: t_device_ms + t_tx_ms + t_server_ms,
        }
    }

    /// Median-total element of `runs` (the lower middle for even counts).
    pub fn median_of(runs: &[LatencyBreakdown]) -> Option<LatencyBreakdown> {
        let mut sorted = runs.to_vec();
        sorted.sort_by(|a, b| a.total_ms.total_cmp(&b.total_ms));
        sorted.get(sorted.len().saturating_sub(1) / 2).copied()
    }
}

fn check_pair(device: &LayerProfile, server: &LayerProfile) -> Result<()> {
    if device.num_layers() != server.num_layers() || device.input_bytes != server.input_bytes {
        return Err(Error::arg(format!(
            "device profile ({} layers, {} input bytes) and server profile ({} layers, {} input bytes) describe different models",
            device.num_layers(),
            device.input_bytes,
            server.num_layers(),
            server.input_bytes
        )));
    }
    for (d, s) in device.layers.iter().zip(&server.layers) {
        if d.output_bytes != s.output_bytes {
            return Err(Error::arg(format!("profiles disagree on layer {} output size", d.layer)));
        }
    }
    if let (Some(a), Some(b)) = (&device.model_hash, &server.model_hash) {
        if a != b {
            return Err(Error::arg("profiles were taken on different models"));
        }
    }
    Ok(())
}

/// Predicted latency when layers `1..=c` run on the device and the rest on
/// the server, transferring the layer-`c` output (the raw input for `c = 0`).
pub fn predict_latency(
    device: &LayerProfile,
    server: &LayerProfile,
    link: &LinkModel,
    c: usize,
) -> Result<LatencyBreakdown> {
    check_pair(device, server)?;
    link.validate()?;
    let n = device.num_layers();
    if c > n {
        return Err(Error::arg(format!("split {c} outside 0..={n}")));
    }
    Ok(LatencyBreakdown::new(
        c,
        device.span_ms(0, c),
        link.transfer_ms(device.boundary_bytes(c)?),
        server.span_ms(c, n),
    ))
}
