mod common;

use common::gradcheck::{check_actor, check_critic, check_mlp};

const TOL: f64 = 1e-3;

#[test]
fn mlp_backward_matches_finite_differences() {
    let s = check_mlp(100, 1);
    assert_eq!(s.instances, 100);
    assert!(s.max_rel < TOL, "{s:?}");
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let s = check_critic(100, 2);
    assert!(s.max_rel < TOL, "{s:?}");
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let s = check_actor(100, 3);
    assert!(s.max_rel < TOL, "{s:?}");
}
