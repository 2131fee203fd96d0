//! Experiment orchestration: configuration, the end-to-end pipeline, sweeps
//! and plot data.

mod config;
mod manifest;
mod pipeline;
mod plots;
mod sweep;
mod workload;

pub use config::{
    AaeConfig, BaselineConfig, DatasetConfig, DatasetSource, EnvSection, ExperimentConfig, TopologyKind,
};
pub use manifest::{config_hash, content_hash, rerun, Manifest};
pub use pipeline::{
    build_env, load_dataset, make_baseline, predict_popular_lists, read_metrics_csv, run_experiment, run_seed,
    train_federated, write_metrics_csv, ExperimentOutput, MetricsRecord, SchemeRun, SeedRun, UeWorkload,
    METRICS_HEADER,
};
pub use plots::{
    emit_plots, emit_training_plots, emit_training_series, read_series_csv, render_svg, sweep_series, training_series, training_series_from_csv, write_series_csv,
    Metric, Series,
};
pub use sweep::{aggregate, mean_std, read_sweep_csv, sweep, write_sweep_csv, SweepAxis, SweepOutput, SweepRow};
pub use workload::{Phase, ZipfWorkload};
