//! Joint soft policy evaluation and improvement for every task from one
//! experience stream, plus the single-task baseline.

mod agents;
mod evaluate;
pub mod losses;
mod run;

pub use agents::{
    algorithms, build_agent, Agent, AgentBuilder, AgentSettings, Algorithm, HiuSac, Sac, TemperatureState, UpdateStats,
};
pub use evaluate::{evaluate, TaskMetrics};
pub use run::{
    checkpoint_path, run_experiment, FinalMetrics, LogRow, RunSummary, Trainer, CHECKPOINT_DIR, CONFIG_SNAPSHOT,
    DIVERGENCE_DUMP, FINAL_METRICS, LOG_HEADER, TRAIN_LOG,
};
