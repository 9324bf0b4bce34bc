//! HTTP control plane served next to the cloud daemon.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

use super::server::CloudState;
use crate::error::{Error, Result};
use crate::planner::{default_candidates, greedy_split, PlanMode, SplitChoice, SplitPlan};
use crate::profile::{predict_latency, LinkModel};

pub(crate) struct ControlHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ControlHandle {
    pub(crate) fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub(crate) fn stop(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub(crate) fn start(listen: &str, state: Arc<CloudState>) -> Result<ControlHandle> {
    let std_listener = std::net::TcpListener::bind(listen)
        .map_err(|e| Error::Transport(format!("cannot listen on {listen}: {e}")))?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    let thread = thread::Builder::new().name("control-api".into()).spawn(move || {
        runtime.block_on(async move {
            let Ok(listener) = tokio::net::TcpListener::from_std(std_listener) else {
                return;
            };
            let _ = axum::serve(listener, router(state))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    })?;
    Ok(ControlHandle {
        addr,
        stop: Some(tx),
        thread: Some(thread),
    })
}

fn router(state: Arc<CloudState>) -> Router {
    Router::new()
        .route("/api/model", get(model))
        .route("/api/profiles", get(profiles))
        .route("/api/whatif", post(whatif))
        .route("/api/plan", get(active_plan).post(activate_plan))
        .route("/api/live", get(live))
        .with_state(state)
}

fn error(status: StatusCode, msg: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": msg.to_string() }))).into_response()
}

async fn model(State(state): State<Arc<CloudState>>) -> Response {
    let g = state.graph();
    let layers: Vec<_> = g
        .specs()
        .map(|s| {
            json!({
                "index": s.index,
                "name": s.name,
                "kind": s.kind.name(),
                "input_shape": s.input_shape,
                "output_shape": s.output_shape,
                "flops": s.flops(),
                "output_bytes": s.output_bytes(),
            })
        })
        .collect();
    Json(json!({
        "model_hash": g.hash_hex(),
        "input_shape": g.input_shape(),
        "input_bytes": g.input_bytes(),
        "num_layers": g.len(),
        "total_flops": g.total_flops(),
        "split_point": state.plan().split_point,
        "layers": layers,
    }))
    .into_response()
}

async fn profiles(State(state): State<Arc<CloudState>>) -> Response {
    let (device, server) = state.profiles();
    Json(json!({ "device": device, "server": server })).into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanRequest {
    bandwidth_mbps: f64,
    #[serde(default)]
    overhead_ms: f64,
    #[serde(default)]
    split_point: Option<usize>,
    #[serde(default)]
    include_endpoints: bool,
}

#[derive(Debug, Serialize)]
struct WhatIf {
    link: LinkModel,
    argmin: usize,
    best: crate::profile::LatencyBreakdown,
    candidates: Vec<crate::profile::LatencyBreakdown>,
}

fn parse_request(body: &[u8]) -> std::result::Result<(PlanRequest, LinkModel), Response> {
    let req: PlanRequest =
        serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, format!("invalid body: {e}")))?;
    let link = LinkModel::new(req.bandwidth_mbps, req.overhead_ms)
        .map_err(|e| error(StatusCode::BAD_REQUEST, e))?;
    Ok((req, link))
}

/// Greedy choice over the stored profiles; a forced split restricts the
/// candidates to that one.
fn plan_choice(state: &CloudState, req: &PlanRequest, link: &LinkModel) -> std::result::Result<SplitChoice, Response> {
    let (Some(device), Some(server)) = state.profiles() else {
        return Err(error(
            StatusCode::UNPROCESSABLE_ENTITY,
            "no device/server profiles loaded on this server",
        ));
    };
    let candidates = match req.split_point {
        Some(c) => vec![c],
        None => default_candidates(device.num_layers(), req.include_endpoints),
    };
    if let Some(c) = req.split_point {
        predict_latency(&device, &server, link, c).map_err(|e| error(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    }
    greedy_split(&device, &server, link, &candidates).map_err(|e| error(StatusCode::UNPROCESSABLE_ENTITY, e))
}

async fn whatif(State(state): State<Arc<CloudState>>, body: Bytes) -> Response {
    let (req, link) = match parse_request(&body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    match plan_choice(&state, &req, &link) {
        Ok(choice) => Json(WhatIf {
            link,
            argmin: choice.best.c,
            best: choice.best,
            candidates: choice.candidates,
        })
        .into_response(),
        Err(r) => r,
    }
}

async fn active_plan(State(state): State<Arc<CloudState>>) -> Response {
    Json(state.plan().as_ref().clone()).into_response()
}

async fn activate_plan(State(state): State<Arc<CloudState>>, body: Bytes) -> Response {
    let (req, link) = match parse_request(&body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let choice = match plan_choice(&state, &req, &link) {
        Ok(c) => c,
        Err(r) => return r,
    };
    let mut plan = SplitPlan::new(state.graph().hash_hex(), &choice, link, PlanMode::Predicted);
    plan.strategy_ref = state.plan().strategy_ref.clone();
    match state.activate_plan(plan.clone()) {
        Ok(()) => Json(plan).into_response(),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e),
    }
}

async fn live(State(state): State<Arc<CloudState>>) -> Sse<impl Stream<Item = std::result::Result<Event, Infallible>>> {
    let rx = state.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let event = Event::default()
                        .event("breakdown")
                        .json_data(&ev)
                        .unwrap_or_else(|_| Event::default().comment("unserializable event"));
                    return Some((Ok(event), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
