mod common;

use common::plancheck::{brute_force_mismatches, brute_totals, random_pair, superset_violations};
use common::{fixture, restime, synthetic_profile};
use edgesplit::planner::{
    compare_baselines, default_candidates, greedy_split, greedy_split_with, LatencyTable, ProfilePredictor,
};
use edgesplit::profile::{predict_latency, LayerProfile, LinkModel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn table() -> LatencyTable {
    LatencyTable::load(fixture("split_latency_table.json")).unwrap()
}

#[test]
fn measured_table_minimum_is_split_six() {
    let mut t = table();
    assert_eq!(t.splits(), (1..=20).collect::<Vec<_>>());
    let choice = greedy_split_with(&mut t, &default_candidates(20, false)).unwrap();
    assert_eq!(choice.best.c, 6);
    assert_eq!(choice.best.total_ms, 20.07);
    assert_eq!(choice.candidates.len(), 20);
}

#[test]
fn measured_table_baselines() {
    let mut t = table();
    let r = compare_baselines(&mut t, 6).unwrap();
    assert_eq!(r.device_only.total_ms, 31.36);
    assert_eq!(r.server_only.total_ms, 80.78);
    assert!((r.speedup_vs_device - 31.36 / 20.07).abs() < 1e-12);
    assert!((r.speedup_vs_server - 80.78 / 20.07).abs() < 1e-12);
    assert!((r.speedup_vs_device - 1.56).abs() < 0.005);
    assert!((r.speedup_vs_server - 4.02).abs() < 0.005);
}

#[test]
fn transfer_only_profiles_reproduce_table() {
    let device = LayerProfile::load(fixture("table_device_profile.json")).unwrap();
    let server = LayerProfile::load(fixture("table_server_profile.json")).unwrap();
    let link = LinkModel::new(50.0, 0.0).unwrap();
    let choice = greedy_split(&device, &server, &link, &default_candidates(20, false)).unwrap();
    assert_eq!(choice.best.c, 6);
    for (b, e) in choice.candidates.iter().zip(&table().entries) {
        assert!((b.total_ms - e.total_ms).abs() < 1e-3, "{b:?} vs {e:?}");
    }
}

#[test]
fn single_and_empty_candidate_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (device, server, link) = random_pair(&mut rng);
    assert_eq!(greedy_split(&device, &server, &link, &[0]).unwrap().best.c, 0);
    let n = device.layers.len();
    assert_eq!(greedy_split(&device, &server, &link, &[n]).unwrap().best.c, n);
    assert!(greedy_split(&device, &server, &link, &[]).is_err());
    assert!(greedy_split(&device, &server, &link, &[n + 1]).is_err());
}

#[test]
fn greedy_matches_brute_force_on_200_cases() {
    assert_eq!(brute_force_mismatches(200, 17), 0);
}

#[test]
fn endpoints_bound_the_choice_on_50_cases() {
    assert_eq!(superset_violations(50, 23), 0);
}

#[test]
fn prediction_equals_hand_prefix_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (device, server, link) = random_pair(&mut rng);
        let n = device.layers.len();
        let totals = brute_totals(&device, &server, link.bandwidth_mbps, link.overhead_ms);
        for c in 0..=n {
            let b = predict_latency(&device, &server, &link, c).unwrap();
            assert_eq!(b.c, c);
            assert_eq!(b.total_ms, b.t_device_ms + b.t_tx_ms + b.t_server_ms);
            assert!((b.total_ms - totals[c]).abs() <= 1e-9 * totals[c].max(1.0));
        }
        let last = predict_latency(&device, &server, &link, n).unwrap();
        assert_eq!(last.t_server_ms, 0.0);
        assert_eq!(predict_latency(&device, &server, &link, 0).unwrap().t_device_ms, 0.0);
    }
}

#[test]
fn doubling_bandwidth_halves_transfer() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let device = synthetic_profile(12, &mut rng);
    let server = restime(&device, 0.3, &mut rng);
    let slow = LinkModel::new(20.0, 0.0).unwrap();
    let fast = LinkModel::new(40.0, 0.0).unwrap();
    for c in 0..=12 {
        let a = predict_latency(&device, &server, &slow, c).unwrap();
        let b = predict_latency(&device, &server, &fast, c).unwrap();
        assert!((a.t_tx_ms - 2.0 * b.t_tx_ms).abs() < 1e-12 * a.t_tx_ms.max(1.0));
        assert_eq!((a.t_device_ms, a.t_server_ms), (b.t_device_ms, b.t_server_ms));
    }
}

#[test]
fn near_infinite_bandwidth_favours_faster_server() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut device = synthetic_profile(10, &mut rng);
    device.input_bytes = 602_112;
    device.layers[9].output_bytes = 152;
    let server = restime(&device, 0.1, &mut rng);
    let link = LinkModel::new(1e12, 0.0).unwrap();
    let mut p = ProfilePredictor {
        device: &device,
        server: &server,
        link,
    };
    let r = compare_baselines(&mut p, 5).unwrap();
    let server_compute: f64 = server.layers.iter().map(|l| l.compute_ms).sum();
    assert!((r.server_only.total_ms - server_compute).abs() < 1e-6);
    // a 10x faster server beats the device outright once transfer is free
    assert!(r.server_only.total_ms < r.device_only.total_ms);
    // and at a crawl the ordering flips
    let mut slow = ProfilePredictor {
        device: &device,
        server: &server,
        link: LinkModel::new(0.1, 0.0).unwrap(),
    };
    let r = compare_baselines(&mut slow, 5).unwrap();
    assert!(r.server_only.total_ms > r.device_only.total_ms);
}

#[test]
fn mismatched_profiles_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = synthetic_profile(5, &mut rng);
    let b = synthetic_profile(6, &mut rng);
    let link = LinkModel::new(10.0, 0.0).unwrap();
    assert!(predict_latency(&a, &b, &link, 2).is_err());
    assert!(predict_latency(&a, &a, &link, 6).is_err());
    assert!(LinkModel::new(0.0, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn total_is_monotone(seed in any::<u64>(), layer in 0usize..30, bump in 0.0f64..50.0, shrink in 1.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (device, server, link) = random_pair(&mut rng);
        let n = device.layers.len();
        let layer = layer % n;
        for c in 0..=n {
            let base = predict_latency(&device, &server, &link, c).unwrap().total_ms;
            let mut d2 = device.clone();
            d2.layers[layer].compute_ms += bump;
            prop_assert!(predict_latency(&d2, &server, &link, c).unwrap().total_ms >= base);
            let mut s2 = server.clone();
            s2.layers[layer].compute_ms += bump;
            prop_assert!(predict_latency(&device, &s2, &link, c).unwrap().total_ms >= base);
            let narrow = LinkModel::new(link.bandwidth_mbps / shrink, link.overhead_ms).unwrap();
            prop_assert!(predict_latency(&device, &server, &narrow, c).unwrap().total_ms >= base);
        }
    }

    #[test]
    fn argmin_is_scale_invariant(seed in any::<u64>(), k in 1u32..8) {
        // scaling every compute time by k and the bandwidth by 1/k scales every total by k
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (device, server, link) = random_pair(&mut rng);
        let k = k as f64;
        let scale = |p: &LayerProfile| {
            let mut q = p.clone();
            for l in &mut q.layers {
                l.compute_ms *= k;
            }
            q
        };
        let link2 = LinkModel::new(link.bandwidth_mbps / k, link.overhead_ms * k).unwrap();
        let n = device.layers.len();
        let a = greedy_split(&device, &server, &link, &default_candidates(n, true)).unwrap();
        let b = greedy_split(&scale(&device), &scale(&server), &link2, &default_candidates(n, true)).unwrap();
        for (x, y) in a.candidates.iter().zip(&b.candidates) {
            prop_assert!((x.total_ms * k - y.total_ms).abs() <= 1e-9 * y.total_ms.max(1.0));
        }
        let best_a = a.candidates.iter().map(|b| b.total_ms).fold(f64::INFINITY, f64::min);
        prop_assert!((b.best.total_ms - best_a * k).abs() <= 1e-9 * b.best.total_ms.max(1.0));
    }
}
