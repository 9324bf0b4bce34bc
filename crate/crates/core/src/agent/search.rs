use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ddpg::{actor_step, critic_step, select_action, soft_update, AgentNets};
use super::env::{Environment, PruningEnv};
use super::replay::{ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::mlp::Optimizer;
use crate::model::{ModelGraph, ValidationSet};
use crate::prune::{apply_strategy, describe_strategy, PruningStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub buffer_capacity: usize,
    pub episodes: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub sigma_init: f64,
    pub warmup_episodes: usize,
    pub sigma_decay: f64,
    pub baseline_decay: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    /// Use Adam instead of plain SGD for both networks.
    pub adam: bool,
    pub hidden: Vec<usize>,
    pub min_action: f64,
    /// Add exploration noise to the policy.
    pub explore: bool,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            buffer_capacity: 500,
            episodes: 400,
            batch_size: 64,
            gamma: 1.0,
            sigma_init: 0.5,
            warmup_episodes: 100,
            sigma_decay: 0.99,
            baseline_decay: 0.95,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            tau: 0.01,
            adam: true,
            hidden: vec![300, 300],
            min_action: crate::prune::DEFAULT_MIN_ACTION,
            explore: true,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::arg(format!("agent config: {what}")));
        if self.buffer_capacity == 0 || self.batch_size == 0 || self.episodes == 0 {
            return bad("buffer capacity, batch size and episodes must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return bad("gamma and tau must lie in [0, 1]");
        }
        if !(self.sigma_init >= 0.0 && self.sigma_decay > 0.0 && self.sigma_decay <= 1.0) {
            return bad("sigma must be >= 0 and its decay in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("baseline decay must lie in [0, 1)");
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return bad("learning rates must be >= 0");
        }
        if !(self.min_action > 0.0 && self.min_action <= 1.0) {
            return bad("minimum action must lie in (0, 1]");
        }
        Ok(())
    }

    /// Exploration noise for 0-based episode `e`: constant through warmup,
    /// then decaying geometrically.
    pub fn sigma_at(&self, e: usize) -> f64 {
        if e < self.warmup_episodes {
            self.sigma_init
        } else {
            self.sigma_init * self.sigma_decay.powi((e - self.warmup_episodes + 1) as i32)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub reward: f64,
    pub sigma: f64,
    /// Baseline after folding in this episode's reward.
    pub baseline: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Applied actions of the best episode, keyed by layer index.
    pub best_actions: BTreeMap<usize, f64>,
    pub best_reward: f64,
    pub best_episode: usize,
    pub trace: Vec<EpisodeRecord>,
    pub nets: AgentNets,
}

/// Runs the DDPG episode loop on any environment.
pub fn run_search<E: Environment>(env: &mut E, config: &AgentConfig) -> Result<SearchOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut nets = AgentNets::new(env.state_dim(), &config.hidden, &mut rng)?;
    let (mut actor_opt, mut critic_opt) = if config.adam {
        (
            Optimizer::adam(&nets.actor, config.actor_lr),
            Optimizer::adam(&nets.critic, config.critic_lr),
        )
    } else {
        (Optimizer::sgd(config.actor_lr), Optimizer::sgd(config.critic_lr))
    };
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let a_min = config.min_action.max(env.min_action());
    let mut baseline: Option<f64> = None;
    let mut trace = Vec::with_capacity(config.episodes);
    let mut best: Option<(f64, usize, BTreeMap<usize, f64>)> = None;

    for episode in 0..config.episodes {
        let sigma = config.sigma_at(episode);
        let mut state = env.reset()?;
        let mut actions = BTreeMap::new();
        let reward = loop {
            let a = select_action(&nets, &state, sigma, config.explore, a_min, &mut rng)?;
            let out = env.step(a)?;
            actions.insert(out.layer, out.action);
            buffer.push(Transition {
                state: std::mem::take(&mut state),
                action: out.action,
                reward: out.reward,
                next_state: out.next_state.clone(),
                terminal: out.done,
            });
            if buffer.len() >= config.batch_size {
                let batch = buffer.sample(config.batch_size, &mut rng);
                critic_step(&mut nets, &batch, baseline.unwrap_or(0.0), config.gamma, &mut critic_opt)?;
                actor_step(&mut nets, &batch, &mut actor_opt)?;
                soft_update(&mut nets, config.tau)?;
            }
            if out.done {
                break out.reward;
            }
            state = out.next_state;
        };
        let b = match baseline {
            None => reward,
            Some(b) => config.baseline_decay * b + (1.0 - config.baseline_decay) * reward,
        };
        baseline = Some(b);
        trace.push(EpisodeRecord {
            episode,
            reward,
            sigma,
            baseline: b,
        });
        if best.as_ref().is_none_or(|(r, _, _)| reward > *r) {
            best = Some((reward, episode, actions));
        }
    }
    let (best_reward, best_episode, best_actions) = best.expect("at least one episode");
    Ok(SearchOutcome {
        best_actions,
        best_reward,
        best_episode,
        trace,
        nets,
    })
}

/// Runs one noise-free episode with the given policy and returns its
/// reward and applied actions.
pub fn greedy_episode<E: Environment>(env: &mut E, nets: &AgentNets, min_action: f64) -> Result<(f64, Vec<f64>)> {
    let a_min = min_action.max(env.min_action());
    let mut state = env.reset()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut actions = Vec::new();
    loop {
        let a = select_action(nets, &state, 0.0, false, a_min, &mut rng)?;
        let out = env.step(a)?;
        actions.push(out.action);
        if out.done {
            return Ok((out.reward, actions));
        }
        state = out.next_state;
    }
}

/// Searches for a layer-wise pruning strategy of `graph` that retains at
/// most `budget` of its prunable FLOPs, maximizing top-1 accuracy.
pub fn search_pruning(
    graph: &ModelGraph,
    valset: &ValidationSet,
    config: &AgentConfig,
    budget: f64,
) -> Result<(PruningStrategy, Vec<EpisodeRecord>)> {
    let mut env = PruningEnv::new(graph, valset, budget, config.min_action)?;
    let outcome = run_search(&mut env, config)?;
    let (_, ledger) = apply_strategy(graph, &outcome.best_actions)?;
    let strategy = describe_strategy(&ledger, &outcome.best_actions, Some(budget), Some(outcome.best_reward));
    Ok((strategy, outcome.trace))
}

pub fn write_trace_csv(trace: &[EpisodeRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
