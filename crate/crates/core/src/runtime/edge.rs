//! Edge client: runs layers `1..=c`, ships the boundary tensor and waits
//! for the server's logits.

use std::net::TcpStream;
use std::str::FromStr;
use std::time::Instant;

use super::link::paced_write;
use super::wire::{encode_frame, read_message, AckStatus, FeatureFrame, Message};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::planner::{LatencyOracle, SplitPlan};
use crate::profile::LatencyBreakdown;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferMode {
    /// Split at the plan's point.
    Co,
    /// Whole model locally, no network.
    Device,
    /// Raw input to the server.
    Server,
}

impl FromStr for InferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "co" => Ok(InferMode::Co),
            "device" => Ok(InferMode::Device),
            "server" => Ok(InferMode::Server),
            other => Err(Error::arg(format!("unknown mode {other:?} (expected co, device or server)"))),
        }
    }
}

impl InferMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InferMode::Co => "co",
            InferMode::Device => "device",
            InferMode::Server => "server",
        }
    }
}

/// A handshaken connection to a cloud daemon at a fixed split.
pub struct EdgeSession<'g> {
    stream: TcpStream,
    graph: &'g ModelGraph,
    split: usize,
    next_id: u64,
    uplink_mbps: Option<f64>,
}

impl<'g> EdgeSession<'g> {
    /// Connects and performs the HELLO exchange. `uplink_mbps` throttles
    /// feature uploads.
    pub fn connect(addr: &str, graph: &'g ModelGraph, split: usize, uplink_mbps: Option<f64>) -> Result<Self> {
        if split > graph.len() {
            return Err(Error::arg(format!("split {split} outside 0..={}", graph.len())));
        }
        let mut stream =
            TcpStream::connect(addr).map_err(|e| Error::Transport(format!("cannot connect to {addr}: {e}")))?;
        stream.set_nodelay(true)?;
        let hello = Message::Hello {
            model_hash: graph.hash(),
            split: split as u16,
        };
        paced_write(&mut stream, &encode_frame(&hello), None).map_err(|e| Error::Transport(e.to_string()))?;
        match read_message(&mut stream)? {
            Message::HelloAck { status: AckStatus::Ok } => Ok(Self {
                stream,
                graph,
                split,
                next_id: 1,
                uplink_mbps,
            }),
            Message::HelloAck {
                status: AckStatus::HashMismatch,
            } => Err(Error::Handshake("server runs a different model (hash mismatch)".into())),
            Message::HelloAck {
                status: AckStatus::BadSplit,
            } => Err(Error::Handshake(format!(
                "server rejected split {split}; fetch the active plan and reconnect"
            ))),
            Message::Error { code, message } => Err(Error::Remote { code, message }),
            other => Err(Error::Handshake(format!(
                "expected HELLO_ACK, got message type {:#04x}",
                other.type_code()
            ))),
        }
    }

    pub fn split(&self) -> usize {
        self.split
    }

    /// One request: local layers, upload, remote layers.
    pub fn infer(&mut self, input: &Tensor) -> Result<(Tensor, LatencyBreakdown)> {
        let start = Instant::now();
        let feature = self.graph.forward_range(input, 0, self.split)?;
        let t_device = start.elapsed().as_secs_f64() * 1e3;

        let request_id = self.next_id;
        self.next_id += 1;
        let frame = encode_frame(&Message::Feature(FeatureFrame {
            request_id,
            dims: feature.shape().iter().map(|&d| d as u32).collect(),
            data: feature.into_data(),
        }));
        let sent = Instant::now();
        paced_write(&mut self.stream, &frame, self.uplink_mbps).map_err(|e| Error::Transport(e.to_string()))?;
        let reply = read_message(&mut self.stream)?;
        let round_trip = sent.elapsed().as_secs_f64() * 1e3;
        match reply {
            Message::Result(r) => {
                if r.request_id != request_id {
                    return Err(Error::Protocol(super::wire::DecodeError::Framing(format!(
                        "result for request {} while waiting for {request_id}",
                        r.request_id
                    ))));
                }
                let t_server = r.server_compute_ns as f64 / 1e6;
                let logits = Tensor::new(self.graph.output_shape().to_vec(), r.logits)
                    .map_err(|e| Error::Transport(format!("server returned malformed logits: {e}")))?;
                let t_tx = (round_trip - t_server).max(0.0);
                Ok((logits, LatencyBreakdown::new(self.split, t_device, t_tx, t_server)))
            }
            Message::Error { code, message } => Err(Error::Remote { code, message }),
            other => Err(Error::Protocol(super::wire::DecodeError::Framing(format!(
                "expected RESULT, got message type {:#04x}",
                other.type_code()
            )))),
        }
    }
}

/// Local-only inference, timed.
pub fn device_inference(graph: &ModelGraph, input: &Tensor) -> Result<(Tensor, LatencyBreakdown)> {
    let start = Instant::now();
    let logits = graph.forward(input)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((logits, LatencyBreakdown::new(graph.len(), ms, 0.0, 0.0)))
}

/// Split for a mode under `plan`.
pub fn mode_split(mode: InferMode, graph: &ModelGraph, plan: &SplitPlan) -> usize {
    match mode {
        InferMode::Co => plan.split_point,
        InferMode::Device => graph.len(),
        InferMode::Server => 0,
    }
}

/// Single inference in the given mode.
pub fn run_edge_inference(
    addr: &str,
    graph: &ModelGraph,
    plan: &SplitPlan,
    input: &Tensor,
    mode: InferMode,
    uplink_mbps: Option<f64>,
) -> Result<(Tensor, LatencyBreakdown)> {
    plan.check_model(graph)?;
    if mode == InferMode::Device {
        return device_inference(graph, input);
    }
    EdgeSession::connect(addr, graph, mode_split(mode, graph, plan), uplink_mbps)?.infer(input)
}

/// `runs` sequential requests over one session.
pub fn measure_end_to_end(session: &mut EdgeSession<'_>, input: &Tensor, runs: usize) -> Result<Vec<LatencyBreakdown>> {
    (0..runs)
        .map(|i| {
            session.infer(input).map(|(_, b)| b).map_err(|e| match e {
                Error::Transport(m) => Error::Transport(format!("run {i}: {m}")),
                other => other,
            })
        })
        .collect()
}

/// Measured latency per split against a live daemon (which must accept
/// every requested split, e.g. in profiling mode). Each evaluation reports
/// the median-total run.
pub struct MeasuredOracle<'g> {
    pub addr: String,
    pub graph: &'g ModelGraph,
    pub input: Tensor,
    pub runs: usize,
    pub uplink_mbps: Option<f64>,
}

impl LatencyOracle for MeasuredOracle<'_> {
    fn num_layers(&self) -> usize {
        self.graph.len()
    }

    fn evaluate(&mut self, c: usize) -> Result<LatencyBreakdown> {
        let mut session = EdgeSession::connect(&self.addr, self.graph, c, self.uplink_mbps)?;
        // one unmeasured request to settle connection and caches
        session.infer(&self.input)?;
        let runs = measure_end_to_end(&mut session, &self.input, self.runs.max(1))?;
        Ok(LatencyBreakdown::median_of(&runs).expect("at least one run"))
    }

    fn device_only(&mut self) -> Result<LatencyBreakdown> {
        device_inference(self.graph, &self.input)?;
        let runs = (0..self.runs.max(1))
            .map(|_| device_inference(self.graph, &self.input).map(|(_, b)| b))
            .collect::<Result<Vec<_>>>()?;
        Ok(LatencyBreakdown::median_of(&runs).expect("at least one run"))
    }
}
