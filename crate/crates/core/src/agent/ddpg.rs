//! Actor/critic networks and the DDPG update rules.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::replay::Transition;
use crate::error::{Error, Result};
use crate::mlp::{Gradients, MlpNet, Optimizer, OutputActivation};

/// Actor `μ` (state -> action in (0,1)), critic `Q` (state ++ action ->
/// value) and their target copies.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub actor: MlpNet,
    pub critic: MlpNet,
    pub actor_target: MlpNet,
    pub critic_target: MlpNet,
}

/// Initial range of the output layers.
const FINAL_INIT: f64 = 3e-3;

impl AgentNets {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut actor_dims = vec![state_dim];
        actor_dims.extend_from_slice(hidden);
        actor_dims.push(1);
        let mut critic_dims = vec![state_dim + 1];
        critic_dims.extend_from_slice(hidden);
        critic_dims.push(1);
        let actor = MlpNet::new(&actor_dims, OutputActivation::Sigmoid, FINAL_INIT, rng)?;
        let critic = MlpNet::new(&critic_dims, OutputActivation::Identity, FINAL_INIT, rng)?;
        Ok(Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn policy(&self, state: &[f64]) -> Result<f64> {
        Ok(self.actor.predict(state)?[0])
    }

    pub fn q_value(&self, state: &[f64], action: f64) -> Result<f64> {
        Ok(self.critic.predict(&critic_input(state, action))?[0])
    }

    pub fn target_q_value(&self, state: &[f64], action: f64) -> Result<f64> {
        Ok(self.critic_target.predict(&critic_input(state, action))?[0])
    }
}

fn critic_input(state: &[f64], action: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(state.len() + 1);
    x.extend_from_slice(state);
    x.push(action);
    x
}

/// Policy action, optionally perturbed by truncated-normal noise.
///
/// Truncation to `[a_min, 1]` is by rejection; after 100 rejected draws the
/// last draw is clamped.
pub fn select_action<R: Rng + ?Sized>(
    nets: &AgentNets,
    state: &[f64],
    sigma: f64,
    explore: bool,
    a_min: f64,
    rng: &mut R,
) -> Result<f64> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::arg(format!("exploration sigma {sigma} must be finite and >= 0")));
    }
    let mean = nets.policy(state)?;
    if !explore || sigma == 0.0 {
        return Ok(mean.clamp(a_min, 1.0));
    }
    let normal = Normal::new(mean, sigma).map_err(|e| Error::arg(e.to_string()))?;
    let mut draw = mean;
    for _ in 0..100 {
        draw = normal.sample(rng);
        if (a_min..=1.0).contains(&draw) {
            return Ok(draw);
        }
    }
    Ok(draw.clamp(a_min, 1.0))
}

/// Bellman target with baseline: `r − b + γ·Q'(s', μ'(s'))`, or `r − b` for
/// terminal transitions.
pub fn compute_target(t: &Transition, nets: &AgentNets, baseline: f64, gamma: f64) -> Result<f64> {
    let mut y = t.reward - baseline;
    if !t.terminal {
        let next_action = nets.actor_target.predict(&t.next_state)?[0];
        y += gamma * nets.target_q_value(&t.next_state, next_action)?;
    }
    Ok(y)
}

/// [`compute_target`] for a whole batch, evaluating the target networks
/// once over all non-terminal next states.
pub fn batch_targets(batch: &[Transition], nets: &AgentNets, baseline: f64, gamma: f64) -> Result<Vec<f64>> {
    let mut y: Vec<f64> = batch.iter().map(|t| t.reward - baseline).collect();
    let open: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
    if open.is_empty() {
        return Ok(y);
    }
    let next: Vec<f64> = open.iter().flat_map(|&i| batch[i].next_state.iter().copied()).collect();
    let (mu, _) = nets.actor_target.forward_batch(&next, open.len())?;
    let (q, _) = nets.critic_target.forward_batch(&critic_rows(&next, &mu, open.len()), open.len())?;
    for (k, &i) in open.iter().enumerate() {
        y[i] += gamma * q[k];
    }
    Ok(y)
}

fn critic_rows(states: &[f64], actions: &[f64], batch: usize) -> Vec<f64> {
    let dim = states.len() / batch;
    let mut x = Vec::with_capacity(states.len() + batch);
    for (row, a) in states.chunks_exact(dim).zip(actions) {
        x.extend_from_slice(row);
        x.push(*a);
    }
    x
}

/// Mean squared Bellman residual over `batch` and its gradient with respect
/// to the critic parameters.
pub fn critic_gradient(
    nets: &AgentNets,
    batch: &[Transition],
    baseline: f64,
    gamma: f64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::arg("critic update needs a non-empty batch"));
    }
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let y = batch_targets(batch, nets, baseline, gamma)?;
    let states: Vec<f64> = batch.iter().flat_map(|t| t.state.iter().copied()).collect();
    let actions: Vec<f64> = batch.iter().map(|t| t.action).collect();
    let (q, cache) = nets.critic.forward_batch(&critic_rows(&states, &actions, n), n)?;
    let mut loss = 0.0;
    let grad_out: Vec<f64> = q
        .iter()
        .zip(&y)
        .map(|(q, y)| {
            let r = q - y;
            loss += r * r * scale;
            2.0 * r * scale
        })
        .collect();
    let mut grads = Gradients::zeros_like(&nets.critic);
    nets.critic.backward_accumulate(&cache, &grad_out, &mut grads)?;
    grads.input.clear();
    Ok((loss, grads))
}

/// One SGD step on the critic. Returns the loss before the step.
pub fn critic_update(
    nets: &mut AgentNets,
    batch: &[Transition],
    baseline: f64,
    gamma: f64,
    lr: f64,
) -> Result<f64> {
    critic_step(nets, batch, baseline, gamma, &mut Optimizer::sgd(lr))
}

/// [`critic_update`] with an arbitrary optimizer.
pub fn critic_step(
    nets: &mut AgentNets,
    batch: &[Transition],
    baseline: f64,
    gamma: f64,
    opt: &mut Optimizer,
) -> Result<f64> {
    let (loss, grads) = critic_gradient(nets, batch, baseline, gamma)?;
    opt.step(&mut nets.critic, &grads)?;
    Ok(loss)
}

/// Mean `Q(s, μ(s))` over `states` and the gradient of its negation with
/// respect to the actor parameters (chain rule through the critic's action
/// input).
pub fn actor_gradient(nets: &AgentNets, states: &[Vec<f64>]) -> Result<(f64, Gradients)> {
    if states.is_empty() {
        return Err(Error::arg("actor update needs a non-empty batch"));
    }
    let n = states.len();
    let scale = 1.0 / n as f64;
    let width = nets.state_dim() + 1;
    let flat: Vec<f64> = states.iter().flat_map(|s| s.iter().copied()).collect();
    let (a, actor_cache) = nets.actor.forward_batch(&flat, n)?;
    let (q, critic_cache) = nets.critic.forward_batch(&critic_rows(&flat, &a, n), n)?;
    let objective = q.iter().sum::<f64>() * scale;
    let dq = nets.critic.input_gradient(&critic_cache, &vec![1.0; n])?;
    let grad_out: Vec<f64> = dq.chunks_exact(width).map(|row| -row[width - 1] * scale).collect();
    let mut grads = Gradients::zeros_like(&nets.actor);
    nets.actor.backward_accumulate(&actor_cache, &grad_out, &mut grads)?;
    grads.input.clear();
    Ok((objective, grads))
}

/// One policy-gradient ascent step on the actor. Returns the objective
/// before the step.
pub fn actor_update(nets: &mut AgentNets, batch: &[Transition], lr: f64) -> Result<f64> {
    actor_step(nets, batch, &mut Optimizer::sgd(lr))
}

/// [`actor_update`] with an arbitrary optimizer.
pub fn actor_step(nets: &mut AgentNets, batch: &[Transition], opt: &mut Optimizer) -> Result<f64> {
    let states: Vec<Vec<f64>> = batch.iter().map(|t| t.state.clone()).collect();
    let (objective, grads) = actor_gradient(nets, &states)?;
    opt.step(&mut nets.actor, &grads)?;
    Ok(objective)
}

/// `target ← τ·main + (1−τ)·target` for both networks.
pub fn soft_update(nets: &mut AgentNets, tau: f64) -> Result<()> {
    nets.actor_target.blend_from(&nets.actor, tau)?;
    nets.critic_target.blend_from(&nets.critic, tau)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::DenseLayer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_nets(seed: u64) -> AgentNets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AgentNets::new(3, &[8, 8], &mut rng).unwrap()
    }

    fn transition(rng: &mut ChaCha8Rng, terminal: bool) -> Transition {
        Transition {
            state: (0..3).map(|_| rng.random_range(0.0..1.0)).collect(),
            action: rng.random_range(0.1..1.0),
            reward: if terminal { rng.random_range(0.0..1.0) } else { 0.0 },
            next_state: (0..3).map(|_| rng.random_range(0.0..1.0)).collect(),
            terminal,
        }
    }

    #[test]
    fn zero_sigma_returns_policy() {
        let nets = small_nets(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [0.2, 0.4, 0.6];
        let a = select_action(&nets, &s, 0.0, true, 0.1, &mut rng).unwrap();
        assert_eq!(a, nets.policy(&s).unwrap().clamp(0.1, 1.0));
    }

    #[test]
    fn actions_stay_in_bounds_and_repeat() {
        let nets = small_nets(2);
        let s = [0.9, 0.1, 0.5];
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..500)
                .map(|i| select_action(&nets, &s, [0.05, 0.5, 5.0][i % 3], true, 0.1, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        let a = run(7);
        assert!(a.iter().all(|v| (0.1..=1.0).contains(v)));
        assert_eq!(a, run(7));
    }

    #[test]
    fn terminal_target() {
        let nets = small_nets(3);
        let t = Transition {
            state: vec![0.0; 3],
            action: 0.5,
            reward: 0.9,
            next_state: vec![0.0; 3],
            terminal: true,
        };
        assert!((compute_target(&t, &nets, 0.8, 1.0).unwrap() - 0.1).abs() < 1e-12);
        let t = Transition { terminal: false, reward: 0.3, ..t };
        assert_eq!(compute_target(&t, &nets, 0.1, 0.0).unwrap(), 0.3 - 0.1);
    }

    #[test]
    fn target_with_zero_critic_is_reward_minus_baseline() {
        let mut nets = small_nets(4);
        for l in nets.critic_target.layers_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = transition(&mut rng, false);
        assert_eq!(compute_target(&t, &nets, 0.25, 1.0).unwrap(), t.reward - 0.25);
    }

    #[test]
    fn target_matches_manual_evaluation() {
        let nets = small_nets(6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let t = transition(&mut rng, false);
            // evaluate the target networks by hand, layer by layer
            let eval = |net: &MlpNet, x: &[f64]| {
                let mut a = x.to_vec();
                let last = net.layers().len() - 1;
                for (i, l) in net.layers().iter().enumerate() {
                    let z: Vec<f64> = (0..l.out_dim)
                        .map(|o| l.biases[o] + (0..l.in_dim).map(|j| l.weights[o * l.in_dim + j] * a[j]).sum::<f64>())
                        .collect();
                    a = if i < last {
                        z.iter().map(|v| v.max(0.0)).collect()
                    } else if net.output_activation() == OutputActivation::Sigmoid {
                        z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
                    } else {
                        z
                    };
                }
                a[0]
            };
            let mu = eval(&nets.actor_target, &t.next_state);
            let mut x = t.next_state.clone();
            x.push(mu);
            let expect = t.reward - 0.3 + 0.9 * eval(&nets.critic_target, &x);
            assert!((compute_target(&t, &nets, 0.3, 0.9).unwrap() - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn batched_targets_match_single() {
        let nets = small_nets(13);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let batch: Vec<Transition> = (0..9).map(|i| transition(&mut rng, i % 3 == 0)).collect();
        let y = batch_targets(&batch, &nets, 0.4, 0.7).unwrap();
        for (t, y) in batch.iter().zip(y) {
            assert!((compute_target(t, &nets, 0.4, 0.7).unwrap() - y).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_loss_cases() {
        let mut nets = small_nets(8);
        assert!(critic_update(&mut nets, &[], 0.0, 1.0, 0.1).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = transition(&mut rng, true);
        let q = nets.q_value(&t.state, t.action).unwrap();
        let y = compute_target(&t, &nets, 0.2, 1.0).unwrap();
        let loss = critic_update(&mut nets.clone(), std::slice::from_ref(&t), 0.2, 1.0, 0.1).unwrap();
        assert!((loss - (y - q).powi(2)).abs() < 1e-12);

        // rewards equal to current Q -> zero loss, no movement
        let t = Transition { reward: q, ..t };
        let before = nets.clone();
        let loss = critic_update(&mut nets, &[t], 0.0, 1.0, 0.5).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(nets.critic, before.critic);
    }

    #[test]
    fn critic_loss_decreases_on_frozen_batch() {
        let mut nets = small_nets(9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch: Vec<Transition> = (0..16).map(|i| transition(&mut rng, i % 2 == 0)).collect();
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let loss = critic_update(&mut nets, &batch, 0.1, 1.0, 1e-2).unwrap();
            assert!(loss < last, "{loss} !< {last}");
            last = loss;
        }
    }

    #[test]
    fn actor_climbs_identity_critic() {
        let mut nets = small_nets(10);
        // Q(s, a) = a
        let mut weights = vec![0.0; 4];
        weights[3] = 1.0;
        nets.critic = MlpNet::from_layers(
            vec![DenseLayer {
                in_dim: 4,
                out_dim: 1,
                weights,
                biases: vec![0.0],
            }],
            OutputActivation::Identity,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let batch: Vec<Transition> = (0..8).map(|_| transition(&mut rng, false)).collect();
        let start: f64 = batch.iter().map(|t| nets.policy(&t.state).unwrap()).sum();
        let frozen = nets.clone();
        actor_update(&mut nets.clone(), &batch, 0.0).unwrap();
        let mut same = frozen.clone();
        actor_update(&mut same, &batch, 0.0).unwrap();
        assert_eq!(same.actor, frozen.actor);
        for _ in 0..200 {
            actor_update(&mut nets, &batch, 0.5).unwrap();
        }
        let end: f64 = batch.iter().map(|t| nets.policy(&t.state).unwrap()).sum();
        assert!(end > start);
        assert!(end / 8.0 > 0.9, "{}", end / 8.0);
    }

    #[test]
    fn soft_update_extremes() {
        let mut nets = small_nets(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        nets.actor = MlpNet::new(&[3, 8, 8, 1], OutputActivation::Sigmoid, 0.5, &mut rng).unwrap();
        let untouched = nets.clone();
        soft_update(&mut nets, 0.0).unwrap();
        assert_eq!(nets, untouched);
        soft_update(&mut nets, 1.0).unwrap();
        assert_eq!(nets.actor_target, nets.actor);
        assert_eq!(nets.critic_target, nets.critic);
    }
}
