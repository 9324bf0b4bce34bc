//! Greedy split-point selection, the prune-then-split optimizer and
//! baseline comparisons.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{search_pruning, AgentConfig, EpisodeRecord};
use crate::error::{Error, Result};
use crate::model::{ModelGraph, ValidationSet};
use crate::profile::{predict_latency, LatencyBreakdown, LayerProfile, LinkModel};
use crate::prune::{apply_strategy, PruningStrategy};

/// Something that can report the end-to-end latency of a split point.
pub trait LatencyOracle {
    /// Number of model layers `N`; valid splits are `0..=N`.
    fn num_layers(&self) -> usize;
    fn evaluate(&mut self, c: usize) -> Result<LatencyBreakdown>;

    /// Whole model on the device.
    fn device_only(&mut self) -> Result<LatencyBreakdown> {
        self.evaluate(self.num_layers())
    }

    /// Raw input shipped to the server.
    fn server_only(&mut self) -> Result<LatencyBreakdown> {
        self.evaluate(0)
    }
}

/// Prediction from a device and a server profile plus a link model.
#[derive(Debug, Clone)]
pub struct ProfilePredictor<'a> {
    pub device: &'a LayerProfile,
    pub server: &'a LayerProfile,
    pub link: LinkModel,
}

impl LatencyOracle for ProfilePredictor<'_> {
    fn num_layers(&self) -> usize {
        self.device.num_layers()
    }

    fn evaluate(&mut self, c: usize) -> Result<LatencyBreakdown> {
        predict_latency(self.device, self.server, &self.link, c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub split: usize,
    pub total_ms: f64,
}

/// Measured end-to-end totals per split point. Only totals are known, so
/// each breakdown attributes the whole total to `t_tx_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_mbps: Option<f64>,
    pub entries: Vec<TableEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_only_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_only_ms: Option<f64>,
}

impl LatencyTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let t: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.unit != "ms" {
            return Err(Error::format(format!("latency table unit {:?}, expected \"ms\"", self.unit)));
        }
        if self.entries.is_empty() {
            return Err(Error::format("latency table has no entries"));
        }
        let mut seen = BTreeMap::new();
        for e in &self.entries {
            if !(e.total_ms >= 0.0 && e.total_ms.is_finite()) {
                return Err(Error::format(format!("split {} has invalid total {}", e.split, e.total_ms)));
            }
            if seen.insert(e.split, ()).is_some() {
                return Err(Error::format(format!("split {} listed twice", e.split)));
            }
        }
        Ok(())
    }

    /// Splits present in the table, ascending.
    pub fn splits(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.entries.iter().map(|e| e.split).collect();
        s.sort_unstable();
        s
    }
}

fn unattributed(c: usize, total: f64) -> LatencyBreakdown {
    LatencyBreakdown::new(c, 0.0, total, 0.0)
}

impl LatencyOracle for LatencyTable {
    fn num_layers(&self) -> usize {
        self.entries.iter().map(|e| e.split).max().unwrap_or(0)
    }

    fn evaluate(&mut self, c: usize) -> Result<LatencyBreakdown> {
        self.entries
            .iter()
            .find(|e| e.split == c)
            .map(|e| unattributed(c, e.total_ms))
            .ok_or_else(|| Error::arg(format!("latency table has no entry for split {c}")))
    }

    fn device_only(&mut self) -> Result<LatencyBreakdown> {
        match self.device_only_ms {
            Some(ms) => Ok(unattributed(self.num_layers(), ms)),
            None => self.evaluate(self.num_layers()),
        }
    }

    fn server_only(&mut self) -> Result<LatencyBreakdown> {
        match self.server_only_ms {
            Some(ms) => Ok(unattributed(0, ms)),
            None => self.evaluate(0),
        }
    }
}

/// `1..=n`, or `0..=n` with endpoints.
pub fn default_candidates(n: usize, include_endpoints: bool) -> Vec<usize> {
    let start = if include_endpoints { 0 } else { 1 };
    (start..=n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitChoice {
    pub best: LatencyBreakdown,
    /// Every evaluated candidate in the order given.
    pub candidates: Vec<LatencyBreakdown>,
}

/// Evaluates every candidate and returns the minimum-total one; ties go to
/// the smaller split.
pub fn greedy_split_with(oracle: &mut dyn LatencyOracle, candidates: &[usize]) -> Result<SplitChoice> {
    if candidates.is_empty() {
        return Err(Error::arg("candidate range is empty"));
    }
    let n = oracle.num_layers();
    if let Some(c) = candidates.iter().find(|&&c| c > n) {
        return Err(Error::arg(format!("candidate split {c} outside 0..={n}")));
    }
    let evaluated = candidates
        .iter()
        .map(|&c| oracle.evaluate(c))
        .collect::<Result<Vec<_>>>()?;
    let best = *evaluated
        .iter()
        .min_by(|a, b| a.total_ms.total_cmp(&b.total_ms).then(a.c.cmp(&b.c)))
        .expect("non-empty");
    Ok(SplitChoice {
        best,
        candidates: evaluated,
    })
}

/// [`greedy_split_with`] over profile predictions.
pub fn greedy_split(
    device: &LayerProfile,
    server: &LayerProfile,
    link: &LinkModel,
    candidates: &[usize],
) -> Result<SplitChoice> {
    greedy_split_with(
        &mut ProfilePredictor {
            device,
            server,
            link: *link,
        },
        candidates,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    Predicted,
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub model_hash: String,
    pub split_point: usize,
    #[serde(default)]
    pub strategy_ref: Option<String>,
    pub predicted: LatencyBreakdown,
    pub link: LinkModel,
    pub mode: PlanMode,
}

impl SplitPlan {
    pub fn new(model_hash: String, choice: &SplitChoice, link: LinkModel, mode: PlanMode) -> Self {
        Self {
            model_hash,
            split_point: choice.best.c,
            strategy_ref: None,
            predicted: choice.best,
            link,
            mode,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Fails unless the plan targets `graph`.
    pub fn check_model(&self, graph: &ModelGraph) -> Result<()> {
        if self.model_hash != graph.hash_hex() {
            return Err(Error::arg(format!(
                "plan targets model {} but the loaded model is {}",
                self.model_hash,
                graph.hash_hex()
            )));
        }
        if self.split_point > graph.len() {
            return Err(Error::arg(format!("plan split {} outside 0..={}", self.split_point, graph.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub device_only: LatencyBreakdown,
    pub server_only: LatencyBreakdown,
    pub co_inference: LatencyBreakdown,
    /// `device_only.total / co_inference.total`.
    pub speedup_vs_device: f64,
    pub speedup_vs_server: f64,
}

pub fn compare_baselines(oracle: &mut dyn LatencyOracle, split: usize) -> Result<BaselineReport> {
    let device_only = oracle.device_only()?;
    let server_only = oracle.server_only()?;
    let co_inference = oracle.evaluate(split)?;
    Ok(BaselineReport {
        speedup_vs_device: device_only.total_ms / co_inference.total_ms,
        speedup_vs_server: server_only.total_ms / co_inference.total_ms,
        device_only,
        server_only,
        co_inference,
    })
}

/// Inputs of a two-stage run, kept with its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub agent: AgentConfig,
    pub budget: f64,
    pub link: LinkModel,
    pub candidates: Vec<usize>,
    pub original_model_hash: String,
    pub pruned_model_hash: String,
}

#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub strategy: PruningStrategy,
    pub pruned: ModelGraph,
    pub plan: SplitPlan,
    pub choice: SplitChoice,
    pub trace: Vec<EpisodeRecord>,
    pub provenance: Provenance,
}

/// Stage 1 searches a pruning strategy under `budget`; stage 2 profiles
/// the pruned model with `profiler` (returning device and server
/// profiles) and picks its split point.
pub fn two_stage_optimize<F>(
    graph: &ModelGraph,
    valset: &ValidationSet,
    agent: &AgentConfig,
    budget: f64,
    link: LinkModel,
    include_endpoints: bool,
    mut profiler: F,
) -> Result<TwoStageResult>
where
    F: FnMut(&ModelGraph) -> Result<(LayerProfile, LayerProfile)>,
{
    link.validate()?;
    let (strategy, trace) = search_pruning(graph, valset, agent, budget)?;
    let (pruned, _) = apply_strategy(graph, &strategy.actions)?;
    let (device, server) = profiler(&pruned)?;
    let candidates = default_candidates(pruned.len(), include_endpoints);
    let choice = greedy_split(&device, &server, &link, &candidates)?;
    let mut plan = SplitPlan::new(pruned.hash_hex(), &choice, link, PlanMode::Predicted);
    plan.strategy_ref = Some(strategy.digest());
    let provenance = Provenance {
        agent: agent.clone(),
        budget,
        link,
        candidates,
        original_model_hash: graph.hash_hex(),
        pruned_model_hash: pruned.hash_hex(),
    };
    Ok(TwoStageResult {
        strategy,
        pruned,
        plan,
        choice,
        trace,
        provenance,
    })
}
