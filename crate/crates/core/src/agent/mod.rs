//! Deep deterministic policy gradient search over layer-wise keep ratios.

pub mod ddpg;
pub mod env;
pub mod replay;
pub mod search;

pub use ddpg::{
    actor_gradient, actor_step, actor_update, batch_targets, compute_target, critic_gradient, critic_step, critic_update, select_action, soft_update,
    AgentNets,
};
pub use env::{Environment, PruningEnv, QuadraticEnv, StepOutcome};
pub use replay::{ReplayBuffer, Transition};
pub use search::{
    greedy_episode, run_search, search_pruning, write_trace_csv, AgentConfig, EpisodeRecord, SearchOutcome,
};
