//! Channel-level structured pruning: FLOPs ledger, budget clamping, agent
//! observations, magnitude-based channel selection and accuracy scoring.

pub mod accuracy;
pub mod apply;
pub mod ledger;
pub mod state;

pub use accuracy::{evaluate_accuracy, label_rank, AccuracyReport};
pub use apply::{apply_action, apply_strategy, describe_strategy, prune_with, select_channels, PruningStrategy};
pub use ledger::{kept_channels, FlopsLedger, PrunableLayer};
pub use state::{build_state, LayerState, StateNormalizer, STATE_DIM};

/// Lower bound on any keep ratio.
pub const DEFAULT_MIN_ACTION: f64 = 0.1;
