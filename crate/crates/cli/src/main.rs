use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edgesplit::agent::{search_pruning, write_trace_csv, AgentConfig};
use edgesplit::model::{load_input, load_model, load_valset, save_input, save_model};
use edgesplit::planner::{
    compare_baselines, default_candidates, greedy_split_with, LatencyOracle, LatencyTable, PlanMode, ProfilePredictor,
    SplitPlan,
};
use edgesplit::profile::{predict_latency, profile_layers, LatencyBreakdown, LayerProfile, LinkModel};
use edgesplit::prune::{evaluate_accuracy, prune_with};
use edgesplit::runtime::{
    device_inference, mode_split, EdgeSession, InferMode, MeasuredOracle, ServeOptions,
};
use edgesplit::{Error, ModelGraph, Result, Tensor};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "edgesplit", version, about = "Prune, profile, plan and run split edge/server inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time every layer of a model on this host.
    Profile(ProfileArgs),
    /// Search a channel-pruning strategy under a FLOPs budget.
    Prune(PruneArgs),
    /// Choose the split point and write a plan.
    Plan(PlanArgs),
    /// Run the server daemon (and optionally its HTTP control API).
    Serve(ServeArgs),
    /// Classify one input.
    Infer(InferArgs),
    /// Compare co-inference, device-only and server-only latency.
    Bench(BenchArgs),
    /// Per-split latency table for a plan.
    Report(ReportArgs),
}

#[derive(Args)]
struct ProfileArgs {
    /// Model file (.swmf).
    #[arg(long)]
    model: PathBuf,
    /// Output profile (.json).
    #[arg(long)]
    out: PathBuf,
    /// Timed passes per layer; the median is kept.
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Raw input tensor (.bin, little-endian f32 in the model's input shape).
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    /// Model file (.swmf).
    #[arg(long)]
    model: PathBuf,
    /// Validation set (.swds) used as the reward signal.
    #[arg(long)]
    valset: PathBuf,
    /// Fraction of prunable FLOPs the pruned model may keep, in (0, 1].
    #[arg(long)]
    target_flops_ratio: f64,
    /// Search episodes.
    #[arg(long, default_value_t = 400)]
    episodes: usize,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pruned model output (.swmf).
    #[arg(long)]
    out: PathBuf,
    /// Strategy output (.json).
    #[arg(long)]
    strategy: PathBuf,
    /// Per-episode trace (episode, reward, sigma, baseline) as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Episodes of constant exploration noise [default: min(100, episodes / 4)].
    #[arg(long)]
    warmup: Option<usize>,
}

#[derive(Args)]
struct PlanArgs {
    /// Model file (.swmf) the plan targets.
    #[arg(long)]
    model: PathBuf,
    /// Device profile (.json).
    #[arg(long, required_unless_present_any = ["measured", "latency_table"])]
    device_profile: Option<PathBuf>,
    /// Server profile (.json).
    #[arg(long, required_unless_present_any = ["measured", "latency_table"])]
    server_profile: Option<PathBuf>,
    /// Uplink bandwidth in Mbit/s.
    #[arg(long)]
    bandwidth_mbps: f64,
    /// Fixed per-transfer overhead in ms.
    #[arg(long, default_value_t = 0.0)]
    overhead_ms: f64,
    /// Output plan (.json).
    #[arg(long)]
    out: PathBuf,
    /// Measure each split against a live daemon in profiling mode instead of predicting.
    #[arg(long, requires = "connect")]
    measured: bool,
    /// Daemon address for --measured.
    #[arg(long)]
    connect: Option<String>,
    /// Requests per split for --measured.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Also consider device-only and server-only execution.
    #[arg(long)]
    include_endpoints: bool,
    /// Choose from measured end-to-end totals per split (.json) instead of profiles.
    #[arg(long, conflicts_with_all = ["measured", "device_profile", "server_profile"])]
    latency_table: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Address for edge connections.
    #[arg(long)]
    listen: String,
    /// Model file (.swmf).
    #[arg(long)]
    model: PathBuf,
    /// Active plan (.json); plans posted to the control API are written back here.
    #[arg(long)]
    plan: PathBuf,
    /// Address for the HTTP control API.
    #[arg(long)]
    http: Option<String>,
    /// Accept every split and serialize requests (for measured planning).
    #[arg(long)]
    profiling: bool,
    /// Device profile exposed to the control API.
    #[arg(long)]
    device_profile: Option<PathBuf>,
    /// Server profile exposed to the control API.
    #[arg(long)]
    server_profile: Option<PathBuf>,
    /// Throttle responses to this rate.
    #[arg(long)]
    link_mbps: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    /// Daemon address (unused with --mode device).
    #[arg(long)]
    connect: Option<String>,
    /// Model file (.swmf).
    #[arg(long)]
    model: PathBuf,
    /// Plan (.json).
    #[arg(long)]
    plan: PathBuf,
    /// Raw input tensor (.bin).
    #[arg(long)]
    input: PathBuf,
    /// co (split at the plan), device (all local) or server (all remote).
    #[arg(long, default_value = "co")]
    mode: InferMode,
    /// Write the logits here (.bin).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Throttle feature uploads to this rate.
    #[arg(long)]
    link_mbps: Option<f64>,
    /// Control API address; when the daemon rejects the split, fetch its plan and reconnect.
    #[arg(long)]
    http: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// Daemon address.
    #[arg(long)]
    connect: String,
    /// Model file (.swmf).
    #[arg(long)]
    model: PathBuf,
    /// Plan (.json).
    #[arg(long)]
    plan: PathBuf,
    /// Raw input tensor (.bin).
    #[arg(long)]
    input: PathBuf,
    /// Requests per mode.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Output CSV, one row per request.
    #[arg(long)]
    csv: PathBuf,
    /// Throttle feature uploads to this rate.
    #[arg(long)]
    link_mbps: Option<f64>,
    /// Control API address; when the daemon rejects the split, fetch its plan and reconnect.
    #[arg(long)]
    http: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Plan (.json).
    #[arg(long)]
    plan: PathBuf,
    /// Device profile (.json).
    #[arg(long)]
    device_profile: PathBuf,
    /// Server profile (.json).
    #[arg(long)]
    server_profile: PathBuf,
    /// Output CSV, one row per split point.
    #[arg(long)]
    csv: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::Format(_) | Error::Json(_) | Error::Csv(_) | Error::InvalidModel(_) | Error::InvalidShape(_) => 3,
        Error::Transport(_) | Error::Protocol(_) | Error::Handshake(_) | Error::Remote { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid usage");
            eprintln!("error[usage]: {}", line.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Profile(a) => profile(a),
        Command::Prune(a) => prune(a),
        Command::Plan(a) => plan(a),
        Command::Serve(a) => serve(a),
        Command::Infer(a) => infer(a),
        Command::Bench(a) => bench(a),
        Command::Report(a) => report(a),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn model_input(graph: &ModelGraph, path: &Path) -> Result<Tensor> {
    load_input(path, &graph.input_shape())
}

fn profile(a: ProfileArgs) -> Result<()> {
    let graph = load_model(&a.model)?;
    let input = model_input(&graph, &a.input)?;
    let p = profile_layers(&graph, &input, a.repeats)?;
    p.save(&a.out)?;
    let total: f64 = p.layers.iter().map(|l| l.compute_ms).sum();
    print_json(&serde_json::json!({ "layers": p.layers.len(), "total_ms": total }))
}

fn prune(a: PruneArgs) -> Result<()> {
    let graph = load_model(&a.model)?;
    let valset = load_valset(&a.valset)?;
    let config = AgentConfig {
        episodes: a.episodes,
        warmup_episodes: a.warmup.unwrap_or_else(|| (a.episodes / 4).min(100)),
        seed: a.seed,
        ..AgentConfig::default()
    };
    let (strategy, trace) = search_pruning(&graph, &valset, &config, a.target_flops_ratio)?;
    let (pruned, _) = prune_with(&graph, &strategy.actions)?;
    save_model(&pruned, &a.out)?;
    strategy.save(&a.strategy)?;
    if let Some(t) = &a.trace {
        write_trace_csv(&trace, t)?;
    }
    let acc = evaluate_accuracy(&pruned, &valset, &[1])?;
    print_json(&serde_json::json!({
        "flops_ratio": strategy.flops_ratio,
        "reward": strategy.reward,
        "top1": acc.top1(),
        "model_hash": pruned.hash_hex(),
        "strategy_ref": strategy.digest(),
    }))
}

fn load_profile_for(path: &Path, graph: &ModelGraph) -> Result<LayerProfile> {
    let p = LayerProfile::load(path)?;
    if p.num_layers() != graph.len() {
        return Err(Error::Format(format!(
            "{} has {} layers but the model has {}",
            path.display(),
            p.num_layers(),
            graph.len()
        )));
    }
    if let Some(h) = &p.model_hash {
        if *h != graph.hash_hex() {
            return Err(Error::InvalidArgument(format!("{} was taken on a different model", path.display())));
        }
    }
    Ok(p)
}

fn plan(a: PlanArgs) -> Result<()> {
    let graph = load_model(&a.model)?;
    let link = LinkModel::new(a.bandwidth_mbps, a.overhead_ms)?;
    let candidates = default_candidates(graph.len(), a.include_endpoints);
    let (choice, mode) = if let Some(t) = &a.latency_table {
        let mut table = LatencyTable::load(t)?;
        if table.num_layers() != graph.len() {
            return Err(Error::Format(format!(
                "latency table covers {} layers but the model has {}",
                table.num_layers(),
                graph.len()
            )));
        }
        let candidates: Vec<usize> = candidates.into_iter().filter(|c| table.splits().contains(c)).collect();
        (greedy_split_with(&mut table, &candidates)?, PlanMode::Measured)
    } else if a.measured {
        let input = Tensor::zeros(graph.input_shape().to_vec())?;
        let mut oracle = MeasuredOracle {
            addr: a.connect.clone().unwrap_or_default(),
            graph: &graph,
            input,
            runs: a.runs,
            uplink_mbps: Some(a.bandwidth_mbps),
        };
        (greedy_split_with(&mut oracle, &candidates)?, PlanMode::Measured)
    } else {
        let device = load_profile_for(a.device_profile.as_deref().expect("required by clap"), &graph)?;
        let server = load_profile_for(a.server_profile.as_deref().expect("required by clap"), &graph)?;
        let mut oracle = ProfilePredictor {
            device: &device,
            server: &server,
            link,
        };
        (greedy_split_with(&mut oracle, &candidates)?, PlanMode::Predicted)
    };
    let plan = SplitPlan::new(graph.hash_hex(), &choice, link, mode);
    plan.save(&a.out)?;
    print_json(&plan)
}

fn serve(a: ServeArgs) -> Result<()> {
    let graph = load_model(&a.model)?;
    let plan = SplitPlan::load(&a.plan)?;
    let device_profile = a.device_profile.as_deref().map(|p| load_profile_for(p, &graph)).transpose()?;
    let server_profile = a.server_profile.as_deref().map(|p| load_profile_for(p, &graph)).transpose()?;
    let opts = ServeOptions {
        profiling: a.profiling,
        response_mbps: a.link_mbps,
        http: a.http,
        plan_path: Some(a.plan),
        device_profile,
        server_profile,
    };
    let server = edgesplit::runtime::CloudServer::start(&a.listen, graph, plan, opts)?;
    let http = server.http_addr().map(|h| h.to_string());
    print_json(&serde_json::json!({ "listen": server.local_addr().to_string(), "http": http }))?;
    server.wait();
    Ok(())
}

/// Fetches the daemon's active plan over its control API.
fn fetch_plan(http: &str) -> Result<SplitPlan> {
    let url = format!("http://{http}/api/plan");
    let body = ureq::get(&url)
        .call()
        .map_err(|e| Error::Transport(format!("GET {url}: {e}")))?
        .body_mut()
        .read_to_string()
        .map_err(|e| Error::Transport(format!("GET {url}: {e}")))?;
    Ok(serde_json::from_str(&body)?)
}

/// Opens a session at the plan's split for `mode`; a rejected split is
/// retried once at the daemon's current plan when `http` is known.
fn open_session<'g>(
    addr: &str,
    graph: &'g ModelGraph,
    plan: &SplitPlan,
    mode: InferMode,
    link_mbps: Option<f64>,
    http: Option<&str>,
) -> Result<EdgeSession<'g>> {
    match EdgeSession::connect(addr, graph, mode_split(mode, graph, plan), link_mbps) {
        Err(Error::Handshake(msg)) if mode == InferMode::Co && http.is_some() => {
            let fresh = fetch_plan(http.expect("checked"))?;
            fresh.check_model(graph)?;
            if fresh.split_point == plan.split_point {
                return Err(Error::Handshake(msg));
            }
            EdgeSession::connect(addr, graph, fresh.split_point, link_mbps)
        }
        other => other,
    }
}

fn argmax(v: &[f32]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn infer(a: InferArgs) -> Result<()> {
    let graph = load_model(&a.model)?;
    let plan = SplitPlan::load(&a.plan)?;
    plan.check_model(&graph)?;
    let input = model_input(&graph, &a.input)?;
    let (logits, breakdown) = if a.mode == InferMode::Device {
        device_inference(&graph, &input)?
    } else {
        let addr = a
            .connect
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("--connect is required for --mode {}", a.mode.as_str())))?;
        open_session(addr, &graph, &plan, a.mode, a.link_mbps, a.http.as_deref())?.infer(&input)?
    };
    if let Some(out) = &a.out {
        save_input(&logits, out)?;
    }
    print_json(&serde_json::json!({
        "mode": a.mode.as_str(),
        "prediction": argmax(logits.data()),
        "breakdown": breakdown,
    }))
}

#[derive(Serialize)]
struct BenchRow {
    mode: &'static str,
    run: usize,
    c: usize,
    t_device_ms: f64,
    t_tx_ms: f64,
    t_server_ms: f64,
    total_ms: f64,
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.runs == 0 {
        return Err(Error::InvalidArgument("--runs must be positive".into()));
    }
    let graph = load_model(&a.model)?;
    let plan = SplitPlan::load(&a.plan)?;
    plan.check_model(&graph)?;
    let input = model_input(&graph, &a.input)?;
    let http = a.http.as_deref();
    let mut co = open_session(&a.connect, &graph, &plan, InferMode::Co, a.link_mbps, http)?;
    let mut remote = open_session(&a.connect, &graph, &plan, InferMode::Server, a.link_mbps, http)?;
    co.infer(&input)?;
    remote.infer(&input)?;
    device_inference(&graph, &input)?;

    let mut rows: Vec<BenchRow> = Vec::with_capacity(3 * a.runs);
    let mut per_mode: BTreeMap<&'static str, Vec<LatencyBreakdown>> = BTreeMap::new();
    for run in 0..a.runs {
        for mode in [InferMode::Co, InferMode::Device, InferMode::Server] {
            let b = match mode {
                InferMode::Co => co.infer(&input)?.1,
                InferMode::Device => device_inference(&graph, &input)?.1,
                InferMode::Server => remote.infer(&input)?.1,
            };
            per_mode.entry(mode.as_str()).or_default().push(b);
            rows.push(BenchRow {
                mode: mode.as_str(),
                run,
                c: b.c,
                t_device_ms: b.t_device_ms,
                t_tx_ms: b.t_tx_ms,
                t_server_ms: b.t_server_ms,
                total_ms: b.total_ms,
            });
        }
    }
    let mut w = csv::Writer::from_path(&a.csv)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let medians: BTreeMap<_, _> = per_mode
        .iter()
        .map(|(m, runs)| (*m, LatencyBreakdown::median_of(runs).expect("runs > 0")))
        .collect();
    print_json(&medians)
}

#[derive(Serialize)]
struct ReportRow {
    c: usize,
    kind: String,
    output_bytes: u64,
    device_layer_ms: f64,
    server_layer_ms: f64,
    t_device_ms: f64,
    t_tx_ms: f64,
    t_server_ms: f64,
    total_ms: f64,
    chosen: bool,
}

fn report(a: ReportArgs) -> Result<()> {
    let plan = SplitPlan::load(&a.plan)?;
    let device = LayerProfile::load(&a.device_profile)?;
    let server = LayerProfile::load(&a.server_profile)?;
    if plan.split_point > device.num_layers() {
        return Err(Error::InvalidArgument(format!(
            "plan split {} outside the profiles' 0..={}",
            plan.split_point,
            device.num_layers()
        )));
    }
    let mut w = csv::Writer::from_path(&a.csv)?;
    for c in 0..=device.num_layers() {
        let b = predict_latency(&device, &server, &plan.link, c)?;
        let (kind, device_layer_ms, server_layer_ms) = match c {
            0 => ("input".to_string(), 0.0, 0.0),
            _ => (
                device.layers[c - 1].kind.clone(),
                device.layers[c - 1].compute_ms,
                server.layers[c - 1].compute_ms,
            ),
        };
        w.serialize(ReportRow {
            c,
            kind,
            output_bytes: device.boundary_bytes(c)?,
            device_layer_ms,
            server_layer_ms,
            t_device_ms: b.t_device_ms,
            t_tx_ms: b.t_tx_ms,
            t_server_ms: b.t_server_ms,
            total_ms: b.total_ms,
            chosen: c == plan.split_point,
        })?;
    }
    w.flush()?;
    let mut oracle = ProfilePredictor {
        device: &device,
        server: &server,
        link: plan.link,
    };
    print_json(&compare_baselines(&mut oracle, plan.split_point)?)
}
