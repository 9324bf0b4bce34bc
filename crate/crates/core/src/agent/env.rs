use crate::error::{Error, Result};
use crate::model::{ModelGraph, ValidationSet};
use crate::prune::{apply_action, build_state, evaluate_accuracy, FlopsLedger, StateNormalizer, STATE_DIM};

/// Result of acting on the current layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// 1-based layer index the action was applied to.
    pub layer: usize,
    /// The action actually applied (after any budget clamp).
    pub action: f64,
    pub next_state: Vec<f64>,
    /// Episode reward on the terminal step, 0 otherwise.
    pub reward: f64,
    pub done: bool,
}

/// A fixed-length sequential decision problem over keep ratios.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn min_action(&self) -> f64;
    /// Layer indices in decision order.
    fn layer_indices(&self) -> Vec<usize>;
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: f64) -> Result<StepOutcome>;
}

/// Channel pruning of a model with top-1 validation accuracy as the reward.
pub struct PruningEnv<'a> {
    graph: &'a ModelGraph,
    valset: &'a ValidationSet,
    budget: f64,
    a_min: f64,
    indices: Vec<usize>,
    norm: StateNormalizer,
    ledger: FlopsLedger,
    current: ModelGraph,
    prev_action: f64,
}

impl<'a> PruningEnv<'a> {
    /// `budget` is the retained fraction of prunable FLOPs (1.0 disables
    /// the constraint).
    pub fn new(graph: &'a ModelGraph, valset: &'a ValidationSet, budget: f64, a_min: f64) -> Result<Self> {
        if !(a_min > 0.0 && a_min <= 1.0) {
            return Err(Error::arg(format!("minimum action {a_min} outside (0, 1]")));
        }
        let ledger = FlopsLedger::new(graph)?;
        if ledger.is_empty() {
            return Err(Error::model("model has no prunable convolution"));
        }
        ledger.check_feasible(budget, a_min)?;
        Ok(Self {
            graph,
            valset,
            budget,
            a_min,
            indices: ledger.layers().iter().map(|l| l.index).collect(),
            norm: StateNormalizer::new(&ledger),
            ledger,
            current: graph.clone(),
            prev_action: 1.0,
        })
    }

    pub fn ledger(&self) -> &FlopsLedger {
        &self.ledger
    }

    /// The model as pruned so far in this episode.
    pub fn current(&self) -> &ModelGraph {
        &self.current
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    fn observe(&self) -> Result<Vec<f64>> {
        let index = self.indices[self.ledger.visited()];
        Ok(build_state(&self.ledger, &self.norm, index, self.prev_action)?.normalized.to_vec())
    }
}

impl Environment for PruningEnv<'_> {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn min_action(&self) -> f64 {
        self.a_min
    }

    fn layer_indices(&self) -> Vec<usize> {
        self.indices.clone()
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        self.ledger = FlopsLedger::new(self.graph)?;
        self.norm = StateNormalizer::new(&self.ledger);
        self.current = self.graph.clone();
        self.prev_action = 1.0;
        self.observe()
    }

    fn step(&mut self, action: f64) -> Result<StepOutcome> {
        let pos = self.ledger.visited();
        let layer = *self
            .indices
            .get(pos)
            .ok_or_else(|| Error::arg("episode already finished; call reset"))?;
        let a = self.ledger.clamp_action(action.clamp(self.a_min, 1.0), self.budget, self.a_min)?;
        self.current = apply_action(&self.current, &mut self.ledger, layer, a)?;
        self.prev_action = a;
        let done = self.ledger.visited() == self.indices.len();
        if done {
            let reward = evaluate_accuracy(&self.current, self.valset, &[1])?.top1();
            Ok(StepOutcome {
                layer,
                action: a,
                next_state: vec![0.0; STATE_DIM],
                reward,
                done,
            })
        } else {
            Ok(StepOutcome {
                layer,
                action: a,
                next_state: self.observe()?,
                reward: 0.0,
                done,
            })
        }
    }
}

/// Analytic test problem: reward `1 − Σ w_l (a_l − a*_l)²` at the end of
/// the episode.
#[derive(Debug, Clone)]
pub struct QuadraticEnv {
    targets: Vec<f64>,
    weights: Vec<f64>,
    a_min: f64,
    step: usize,
    actions: Vec<f64>,
}

impl QuadraticEnv {
    pub fn new(targets: Vec<f64>, weights: Vec<f64>, a_min: f64) -> Result<Self> {
        if targets.is_empty() || targets.len() != weights.len() {
            return Err(Error::arg("targets and weights must be non-empty and equally long"));
        }
        if targets.iter().any(|t| !(a_min..=1.0).contains(t)) {
            return Err(Error::arg("targets must lie in [a_min, 1]"));
        }
        Ok(Self {
            targets,
            weights,
            a_min,
            step: 0,
            actions: Vec::new(),
        })
    }

    pub fn reward_of(&self, actions: &[f64]) -> f64 {
        1.0 - actions
            .iter()
            .zip(&self.targets)
            .zip(&self.weights)
            .map(|((a, t), w)| w * (a - t) * (a - t))
            .sum::<f64>()
    }

    /// Reward of the best possible episode.
    pub fn optimum(&self) -> f64 {
        1.0
    }

    fn observe(&self) -> Vec<f64> {
        let n = self.targets.len();
        let mut s = vec![0.0; STATE_DIM];
        s[0] = if n > 1 { self.step as f64 / (n - 1) as f64 } else { 0.0 };
        s[9] = (n - 1 - self.step.min(n - 1)) as f64 / n as f64;
        s[10] = self.actions.last().copied().unwrap_or(1.0);
        s
    }
}

impl Environment for QuadraticEnv {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn min_action(&self) -> f64 {
        self.a_min
    }

    fn layer_indices(&self) -> Vec<usize> {
        (1..=self.targets.len()).collect()
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        self.step = 0;
        self.actions.clear();
        Ok(self.observe())
    }

    fn step(&mut self, action: f64) -> Result<StepOutcome> {
        if self.step >= self.targets.len() {
            return Err(Error::arg("episode already finished; call reset"));
        }
        let a = action.clamp(self.a_min, 1.0);
        self.actions.push(a);
        self.step += 1;
        let done = self.step == self.targets.len();
        Ok(StepOutcome {
            layer: self.step,
            action: a,
            next_state: self.observe(),
            reward: if done { self.reward_of(&self.actions) } else { 0.0 },
            done,
        })
    }
}
