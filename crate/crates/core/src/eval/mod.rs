//! Navigation metrics, evaluation protocol, feature probing and artifacts.

mod agents;
mod artifacts;
mod locate;
mod metrics;
mod probe;
mod run;

pub use agents::{Agent, OracleAgent, PolicyAgent, RandomAgent};
pub use artifacts::{emit_learning_curve, export_trajectory, read_log_column, trajectory_svg};
pub use locate::{fit_locator, LocatorFitConfig, LocatorReport};
pub use metrics::{
    compute_metrics, shortest_path_oracle, summaries_csv, write_results, EpisodeResult, MetricsSummary, SplitLabel,
};
pub use probe::{probe_semantic_leakage, ProbeConfig, ProbeReport};
pub use run::{evaluate, run_episode, EvalReport};
