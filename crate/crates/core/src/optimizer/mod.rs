//! Adam-based optimization of element sets with periodic pruning and
//! re-seeding, and the task drivers built on it.

mod adam;
mod config;
mod driver;
mod elements;
mod refine;

pub use adam::{adam_step, AdamState, Moments};
pub use config::{Multipliers, OptimizationConfig, Preset, Schedule};
pub use driver::{
    run_task, run_task_with_observer, trace_to_csv, Event, LossParts, Objective, Task, TaskInputs, TaskOutput,
    TraceRow,
};
pub use elements::{discretize, grid_centers, init_elements, prune_elements, reseed_elements, PruneReport};
pub use refine::{refine_discrete, RefineOptions, RefineReport};
