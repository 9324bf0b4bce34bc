//! Central finite-difference checks of the hand-written backward passes.

use edgesplit::agent::{actor_gradient, critic_gradient, AgentNets, Transition};
use edgesplit::mlp::{Gradients, MlpNet, OutputActivation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-7;
/// Gradients below this magnitude on both sides count as agreeing.
const FLOOR: f64 = 1e-9;

#[derive(Debug, Default, Clone, Copy)]
pub struct CheckStats {
    pub instances: usize,
    pub entries: usize,
    pub max_rel: f64,
}

impl CheckStats {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.entries += 1;
        let diff = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale < FLOOR && diff < FLOOR { 0.0 } else { diff / scale };
        self.max_rel = self.max_rel.max(rel);
    }

    fn merge(&mut self, other: CheckStats) {
        self.instances += other.instances;
        self.entries += other.entries;
        self.max_rel = self.max_rel.max(other.max_rel);
    }
}

fn random_net<R: Rng>(input: usize, output: usize, act: OutputActivation, rng: &mut R) -> MlpNet {
    let dims = [input, rng.random_range(8..48), rng.random_range(8..48), output];
    let mut net = MlpNet::new(&dims, act, 0.5, rng).unwrap();
    for l in net.layers_mut() {
        for b in &mut l.biases {
            *b = rng.random_range(-0.2..0.2);
        }
    }
    net
}

fn random_agent<R: Rng>(rng: &mut R) -> AgentNets {
    let state_dim = 11;
    let mut nets = AgentNets::new(state_dim, &[8, 8], rng).unwrap();
    nets.actor = random_net(state_dim, 1, OutputActivation::Sigmoid, rng);
    nets.critic = random_net(state_dim + 1, 1, OutputActivation::Identity, rng);
    nets.actor_target = random_net(state_dim, 1, OutputActivation::Sigmoid, rng);
    nets.critic_target = random_net(state_dim + 1, 1, OutputActivation::Identity, rng);
    nets
}

fn random_batch<R: Rng>(rng: &mut R, state_dim: usize) -> Vec<Transition> {
    let n = rng.random_range(1..9);
    (0..n)
        .map(|_| Transition {
            state: (0..state_dim).map(|_| rng.random_range(0.0..1.0)).collect(),
            action: rng.random_range(0.1..1.0),
            reward: rng.random_range(0.0..1.0),
            next_state: (0..state_dim).map(|_| rng.random_range(0.0..1.0)).collect(),
            terminal: rng.random_bool(0.3),
        })
        .collect()
}

/// Perturbs a handful of random parameters of `pick(nets)` and compares the
/// analytic gradient against central differences of `loss`.
fn probe<T, R: Rng>(
    target: &mut T,
    pick: fn(&mut T) -> &mut MlpNet,
    grads: &Gradients,
    loss: &dyn Fn(&T) -> f64,
    rng: &mut R,
    stats: &mut CheckStats,
) {
    let depth = pick(target).layers().len();
    for _ in 0..12 {
        let l = rng.random_range(0..depth);
        let bias = rng.random_bool(0.3);
        let len = {
            let layer = &pick(target).layers()[l];
            if bias { layer.biases.len() } else { layer.weights.len() }
        };
        let i = rng.random_range(0..len);
        fn slot<T>(t: &mut T, pick: fn(&mut T) -> &mut MlpNet, l: usize, bias: bool, i: usize) -> &mut f64 {
            let layer = &mut pick(t).layers_mut()[l];
            if bias { &mut layer.biases[i] } else { &mut layer.weights[i] }
        }
        let orig = *slot(target, pick, l, bias, i);
        *slot(target, pick, l, bias, i) = orig + EPS;
        let up = loss(target);
        *slot(target, pick, l, bias, i) = orig - EPS;
        let down = loss(target);
        *slot(target, pick, l, bias, i) = orig;
        let numeric = (up - down) / (2.0 * EPS);
        let analytic = if bias { grads.biases[l][i] } else { grads.weights[l][i] };
        stats.record(analytic, numeric);
    }
}

/// Raw network backward pass against a random linear functional of the
/// output, both output activations, parameters and inputs.
pub fn check_mlp(instances: usize, seed: u64) -> CheckStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = CheckStats::default();
    for k in 0..instances {
        let act = if k % 2 == 0 { OutputActivation::Identity } else { OutputActivation::Sigmoid };
        let (din, dout) = (rng.random_range(1..12), rng.random_range(1..4));
        let mut net = random_net(din, dout, act, &mut rng);
        let batch = rng.random_range(1..5);
        let x: Vec<f64> = (0..din * batch).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..dout * batch).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |n: &MlpNet| -> f64 {
            let (y, _) = n.forward_batch(&x, batch).unwrap();
            y.iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = net.forward_batch(&x, batch).unwrap();
        let grads = net.backward(&cache, &c).unwrap();
        probe(&mut net, |n| n, &grads, &loss, &mut rng, &mut stats);
        for i in 0..x.len().min(4) {
            let mut xp = x.clone();
            xp[i] += EPS;
            let up: f64 = net.forward_batch(&xp, batch).unwrap().0.iter().zip(&c).map(|(a, b)| a * b).sum();
            xp[i] -= 2.0 * EPS;
            let down: f64 = net.forward_batch(&xp, batch).unwrap().0.iter().zip(&c).map(|(a, b)| a * b).sum();
            stats.record(grads.input[i], (up - down) / (2.0 * EPS));
        }
        stats.instances += 1;
    }
    stats
}

/// Critic Bellman-loss gradient with targets held fixed.
pub fn check_critic(instances: usize, seed: u64) -> CheckStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = CheckStats::default();
    for _ in 0..instances {
        let mut nets = random_agent(&mut rng);
        let batch = random_batch(&mut rng, 11);
        let baseline = rng.random_range(0.0..1.0);
        let gamma = rng.random_range(0.0..1.0);
        let loss = |n: &AgentNets| critic_gradient(n, &batch, baseline, gamma).unwrap().0;
        let (_, grads) = critic_gradient(&nets, &batch, baseline, gamma).unwrap();
        probe(&mut nets, |n| &mut n.critic, &grads, &loss, &mut rng, &mut stats);
        stats.instances += 1;
    }
    stats
}

/// Actor gradient of `-mean Q(s, μ(s))` through the critic's action input.
pub fn check_actor(instances: usize, seed: u64) -> CheckStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = CheckStats::default();
    for _ in 0..instances {
        let mut nets = random_agent(&mut rng);
        let states: Vec<Vec<f64>> = random_batch(&mut rng, 11).into_iter().map(|t| t.state).collect();
        let loss = |n: &AgentNets| -actor_gradient(n, &states).unwrap().0;
        let (_, grads) = actor_gradient(&nets, &states).unwrap();
        probe(&mut nets, |n| &mut n.actor, &grads, &loss, &mut rng, &mut stats);
        stats.instances += 1;
    }
    stats
}

pub fn check_all(instances: usize, seed: u64) -> [(&'static str, CheckStats); 3] {
    let mut total = CheckStats::default();
    let parts = [
        ("mlp", check_mlp(instances, seed)),
        ("critic", check_critic(instances, seed + 1)),
        ("actor", check_actor(instances, seed + 2)),
    ];
    for (_, s) in &parts {
        total.merge(*s);
    }
    parts
}
