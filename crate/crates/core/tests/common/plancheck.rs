//! Randomized planner checks against an independent brute-force loop.

use edgesplit::planner::{default_candidates, greedy_split};
use edgesplit::profile::{LayerProfile, LinkModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{restime, synthetic_profile};

/// Totals for every split, by direct summation.
pub fn brute_totals(device: &LayerProfile, server: &LayerProfile, mbps: f64, overhead: f64) -> Vec<f64> {
    let n = device.layers.len();
    (0..=n)
        .map(|c| {
            let mut t = 0.0;
            for l in &device.layers[..c] {
                t += l.compute_ms;
            }
            let bytes = if c == 0 { device.input_bytes } else { device.layers[c - 1].output_bytes };
            t += bytes as f64 * 8.0 / (mbps * 1e6) * 1e3 + overhead;
            for l in &server.layers[c..] {
                t += l.compute_ms;
            }
            t
        })
        .collect()
}

pub fn random_pair<R: Rng>(rng: &mut R) -> (LayerProfile, LayerProfile, LinkModel) {
    let n = rng.random_range(1..25);
    let device = synthetic_profile(n, rng);
    let speed = rng.random_range(0.05..1.0);
    let server = restime(&device, speed, rng);
    let link = LinkModel::new(rng.random_range(0.5..500.0), rng.random_range(0.0..5.0)).unwrap();
    (device, server, link)
}

/// Cases where the greedy choice over `1..=N` differs from the brute-force
/// minimum (value or index, ties to the smaller split).
pub fn brute_force_mismatches(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let (device, server, link) = random_pair(&mut rng);
        let n = device.layers.len();
        let totals = brute_totals(&device, &server, link.bandwidth_mbps, link.overhead_ms);
        let mut best = 1;
        for c in 2..=n {
            if totals[c] < totals[best] {
                best = c;
            }
        }
        let choice = greedy_split(&device, &server, &link, &default_candidates(n, false)).unwrap();
        if choice.best.c != best || (choice.best.total_ms - totals[best]).abs() > 1e-9 * totals[best].max(1.0) {
            bad += 1;
        }
    }
    bad
}

/// Cases where the endpoint-inclusive choice exceeds either endpoint.
pub fn superset_violations(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let (device, server, link) = random_pair(&mut rng);
        let n = device.layers.len();
        let choice = greedy_split(&device, &server, &link, &default_candidates(n, true)).unwrap();
        let device_only = choice.candidates.iter().find(|b| b.c == n).unwrap().total_ms;
        let server_only = choice.candidates.iter().find(|b| b.c == 0).unwrap().total_ms;
        if choice.best.total_ms > device_only.min(server_only) {
            bad += 1;
        }
    }
    bad
}
