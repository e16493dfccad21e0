//! Configuration, experiment runners and CSV output.

mod config;
mod emit;
mod experiments;
mod metrics;
mod obstacle;

pub use config::{
    load_config, vehicles_per_meter, ExperimentKind, ExperimentSettings, ExperimentSpec, ObstacleCornerParams,
};
pub use emit::{read_csv, read_metrics, write_csv, write_metrics, write_plot, PlotPoint, PLOT_HEADER};
pub use experiments::{
    aggregate, derive_seed, drive, evaluate, finish, run_density_sweep, run_eval, run_experiment, run_headway_trace,
    run_idm_baseline, run_obstacle_corner, run_ratio_sweep, run_train, train_policy, Aggregate, Controller,
    CornerEvent, EpisodeRow, EvalRun, Report, SummaryRow, TraceRow, TrainRun, CONFIG_ECHO, EPISODE_HEADER,
    EVENT_HEADER, PLOT_FILE, SUMMARY_FILE, SUMMARY_HEADER, TRACE_HEADER,
};
pub use metrics::{MetricsRecord, METRICS_HEADER, MPH_PER_MPS};
pub use obstacle::{obstacle_env, obstacle_scenario, strictly_earlier, CornerLog, OBSTACLE_LANE, TRAILING_CAV};
