//! Cloud daemon: runs layers `c+1..=N` for edge clients.

use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use super::control::{self, ControlHandle};
use super::link::paced_write;
use super::wire::{
    encode_frame, error_code, read_message_timed, AckStatus, FeatureFrame, Message, ReadError, ResultFrame,
};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::planner::SplitPlan;
use crate::profile::LayerProfile;
use crate::tensor::Tensor;

/// One served request as observed by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveEvent {
    pub request_id: u64,
    pub split: usize,
    pub feature_bytes: u64,
    /// Time from the feature header to its last payload byte.
    pub receive_ms: f64,
    pub t_server_ms: f64,
    /// Plan prediction when the request used the active split.
    pub predicted_total_ms: Option<f64>,
    pub unix_ms: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Accept any split and serialize inference globally for clean timing.
    pub profiling: bool,
    /// Throttle responses to this rate.
    pub response_mbps: Option<f64>,
    /// Address for the HTTP control API.
    pub http: Option<String>,
    /// Where activated plans are persisted.
    pub plan_path: Option<PathBuf>,
    pub device_profile: Option<LayerProfile>,
    pub server_profile: Option<LayerProfile>,
}

/// Shared daemon state.
pub struct CloudState {
    graph: ModelGraph,
    hash: [u8; 32],
    plan: RwLock<Arc<SplitPlan>>,
    plan_path: Option<PathBuf>,
    profiles: RwLock<(Option<LayerProfile>, Option<LayerProfile>)>,
    profiling: bool,
    compute_lock: Mutex<()>,
    response_mbps: Option<f64>,
    live: broadcast::Sender<LiveEvent>,
}

impl CloudState {
    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    pub fn model_hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn plan(&self) -> Arc<SplitPlan> {
        self.plan.read().expect("plan lock").clone()
    }

    pub fn profiles(&self) -> (Option<LayerProfile>, Option<LayerProfile>) {
        self.profiles.read().expect("profile lock").clone()
    }

    pub fn profiling(&self) -> bool {
        self.profiling
    }

    /// Validates, persists and atomically swaps in a new plan. Sessions
    /// opened afterwards must use its split.
    pub fn activate_plan(&self, plan: SplitPlan) -> Result<()> {
        plan.check_model(&self.graph)?;
        if let Some(path) = &self.plan_path {
            plan.save(path)?;
        }
        *self.plan.write().expect("plan lock") = Arc::new(plan);
        Ok(())
    }

    /// Splits a HELLO may request: the active one and server-only, or any
    /// valid split in profiling mode.
    pub fn split_allowed(&self, split: usize) -> bool {
        if self.profiling {
            split <= self.graph.len()
        } else {
            split == 0 || split == self.plan().split_point
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<LiveEvent> {
        self.live.subscribe()
    }

    fn run(&self, split: usize, f: FeatureFrame) -> std::result::Result<ResultFrame, (u16, String)> {
        let expect = self.graph.boundary_shape(split).map_err(|e| (error_code::INTERNAL, e.to_string()))?;
        let dims: Vec<usize> = f.dims.iter().map(|&d| d as usize).collect();
        if dims != expect {
            return Err((
                error_code::SHAPE,
                format!("feature shape {dims:?} does not match layer {} input {expect:?}", split + 1),
            ));
        }
        let input = Tensor::new(dims, f.data).map_err(|e| (error_code::SHAPE, e.to_string()))?;
        let _serial = self.profiling.then(|| self.compute_lock.lock().expect("compute lock"));
        let start = Instant::now();
        let out = self
            .graph
            .forward_range(&input, split, self.graph.len())
            .map_err(|e| (error_code::INTERNAL, e.to_string()))?;
        let ns = start.elapsed().as_nanos() as u64;
        Ok(ResultFrame {
            request_id: f.request_id,
            logits: out.into_data(),
            server_compute_ns: ns,
        })
    }
}

/// A running daemon. Dropping it stops accepting connections.
pub struct CloudServer {
    state: Arc<CloudState>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    control: Option<ControlHandle>,
}

impl CloudServer {
    pub fn start(listen: &str, graph: ModelGraph, plan: SplitPlan, opts: ServeOptions) -> Result<Self> {
        plan.check_model(&graph)?;
        let listener =
            TcpListener::bind(listen).map_err(|e| Error::Transport(format!("cannot listen on {listen}: {e}")))?;
        let addr = listener.local_addr()?;
        let (live, _) = broadcast::channel(256);
        let state = Arc::new(CloudState {
            hash: graph.hash(),
            graph,
            plan: RwLock::new(Arc::new(plan)),
            plan_path: opts.plan_path,
            profiles: RwLock::new((opts.device_profile, opts.server_profile)),
            profiling: opts.profiling,
            compute_lock: Mutex::new(()),
            response_mbps: opts.response_mbps,
            live,
        });
        let control = match &opts.http {
            Some(http) => Some(control::start(http, state.clone())?),
            None => None,
        };
        let stop = Arc::new(AtomicBool::new(false));
        let conns = Arc::new(Mutex::new(Vec::new()));
        let accept = {
            let (state, stop, conns) = (state.clone(), stop.clone(), conns.clone());
            thread::Builder::new()
                .name("cloud-accept".into())
                .spawn(move || accept_loop(listener, state, stop, conns))?
        };
        Ok(Self {
            state,
            addr,
            stop,
            accept: Some(accept),
            conns,
            control,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn http_addr(&self) -> Option<SocketAddr> {
        self.control.as_ref().map(|c| c.addr())
    }

    pub fn state(&self) -> &Arc<CloudState> {
        &self.state
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_all();
    }

    fn stop_all(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for c in self.conns.lock().expect("conn list").drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        if let Some(c) = self.control.take() {
            c.stop();
        }
    }
}

impl Drop for CloudServer {
    fn drop(&mut self) {
        if self.accept.is_some() || self.control.is_some() {
            self.stop_all();
        }
    }
}

/// Runs the daemon until the process is stopped.
pub fn serve_cloud(listen: &str, graph: ModelGraph, plan: SplitPlan, opts: ServeOptions) -> Result<()> {
    CloudServer::start(listen, graph, plan, opts)?.wait();
    Ok(())
}

fn accept_loop(listener: TcpListener, state: Arc<CloudState>, stop: Arc<AtomicBool>, conns: Arc<Mutex<Vec<TcpStream>>>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        if let Ok(clone) = stream.try_clone() {
            let mut list = conns.lock().expect("conn list");
            list.retain(|s| s.peer_addr().is_ok());
            list.push(clone);
        }
        let state = state.clone();
        let _ = thread::Builder::new()
            .name("cloud-conn".into())
            .spawn(move || handle_connection(&state, stream));
    }
}

fn send(stream: &mut TcpStream, msg: &Message, mbps: Option<f64>) -> bool {
    paced_write(stream, &encode_frame(msg), mbps).is_ok()
}

fn fail(stream: &mut TcpStream, code: u16, message: String) {
    send(stream, &Message::Error { code, message }, None);
    let _ = stream.shutdown(Shutdown::Both);
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn handle_connection(state: &CloudState, mut stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let mut split: Option<usize> = None;
    loop {
        let (msg, receive) = match read_message_timed(&mut stream) {
            Ok(v) => v,
            Err(ReadError::Closed) | Err(ReadError::Io(_)) => return,
            Err(ReadError::Decode(e)) => return fail(&mut stream, e.code(), e.to_string()),
        };
        match msg {
            Message::Hello { model_hash, split: s } => {
                let status = if model_hash != state.hash {
                    AckStatus::HashMismatch
                } else if !state.split_allowed(s as usize) {
                    AckStatus::BadSplit
                } else {
                    AckStatus::Ok
                };
                if !send(&mut stream, &Message::HelloAck { status }, None) {
                    return;
                }
                if status != AckStatus::Ok {
                    let _ = stream.shutdown(Shutdown::Both);
                    return;
                }
                split = Some(s as usize);
            }
            Message::Feature(f) => {
                let Some(c) = split else {
                    return fail(&mut stream, error_code::PROTOCOL, "feature before handshake".into());
                };
                let bytes = 4 * f.data.len() as u64;
                match state.run(c, f) {
                    Ok(result) => {
                        let plan = state.plan();
                        let event = LiveEvent {
                            request_id: result.request_id,
                            split: c,
                            feature_bytes: bytes,
                            receive_ms: receive.as_secs_f64() * 1e3,
                            t_server_ms: result.server_compute_ns as f64 / 1e6,
                            predicted_total_ms: (plan.split_point == c).then_some(plan.predicted.total_ms),
                            unix_ms: unix_ms(),
                        };
                        if !send(&mut stream, &Message::Result(result), state.response_mbps) {
                            return;
                        }
                        let _ = state.live.send(event);
                    }
                    Err((code, message)) => return fail(&mut stream, code, message),
                }
            }
            Message::Ping => {
                if !send(&mut stream, &Message::Pong, None) {
                    return;
                }
            }
            other => {
                return fail(
                    &mut stream,
                    error_code::PROTOCOL,
                    format!("unexpected message type {:#04x} from client", other.type_code()),
                )
            }
        }
    }
}
