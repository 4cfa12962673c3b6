//! The outer training loop: child models trained under adaptive losses while
//! one shared policy learns from their rewards; baselines and transfer runs.

mod child;
mod config;
mod report;
mod run;
pub mod seeds;

pub use child::{evaluate, loss_and_grads, Batch, BatchSampler, ChildModel, EvalSet, Evaluation, Objective, RunContext};
pub use config::{FixedLoss, ReplayConfig, Task, TrainRunConfig};
pub use report::{mean_std, read_csv, write_csv, InvariantLog, PhiRecord, RunReport, StepRecord};
pub use run::{
    load_dataset, new_policy, policy_optimizer, run_baseline, run_training, run_transfer, run_with_driver,
    BaselineMode, Driver, RunOutcome,
};
