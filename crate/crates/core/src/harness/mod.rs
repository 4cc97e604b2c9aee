//! Desk-scale tasks, the training loop, a full-rank Adam baseline and the
//! ablation grid.

pub mod ablation;
pub mod config;
pub mod task;
pub mod train;

pub use ablation::{grid, run_ablation_grid, AblationRow, Arm};
pub use config::{AoOff, BasisInit, Cadence, RunConfig, StrategyName};
pub use task::{Model, Param, Task};
pub use train::{full_adam_oracle, oracle_for, train, HarnessError, MetricsRecord, TrainOutcome};
