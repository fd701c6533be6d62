//! Pruned-selector active learning with weight fusion.
//!
//! A dense network is initialized, pruned at init into a small selector,
//! and the selector drives pool-based active learning. Its trained weights
//! are then transplanted into the untrained dense network, which is
//! fine-tuned on the labeled set with optional distillation.

pub mod alcycle;
pub mod data;
pub mod fuse;
pub mod harness;
pub mod nn;
pub mod prune;
pub mod seed;
pub mod select;
pub mod tensor;

pub use alcycle::{make_schedule, run_selection_loop, BudgetSchedule, LoopError, LoopSettings, RoundRecord, SelectionOutcome};
pub use data::{DataError, Dataset, LabelOracle};
pub use fuse::{finetune_fused, fuse, FuseError, FusionReport};
pub use harness::{run_experiment, ExperimentConfig, HarnessError, MetricsRecord, Mode};
pub use nn::{init_network, KdConfig, LayerSpec, Network, NetworkSpec, NnError, TrainConfig};
pub use prune::{prune, ChannelMask, PruneError, PrunedTopology, SparsityTarget};
pub use select::{PoolState, SelectError, SelectionMetric};
pub use tensor::{Tensor, TensorError};
