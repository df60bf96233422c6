//! Datasets, presets, configuration, experiment orchestration, metrics and
//! checkpoints.

pub mod arch;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod idx;
pub mod metrics;
pub mod synth;

pub use arch::{format_layers, parse_layers, preset, Hyper, Preset, PRESET_NAMES};
pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint};
pub use config::{load_config, parse_dataset, parse_pairs, ArchChoice, ExperimentConfig};
pub use dataset::{DataSource, Dataset, DatasetSpec, Split};
pub use experiment::{
    build_network, comparison_epoch, load_dataset, resume, run_experiment, run_single,
    CompareReport, EpochRecord, RunOutcome,
};
pub use idx::{load_idx, load_idx_dataset, write_idx_images, write_idx_labels};
pub use metrics::{
    emit_metrics, format_real, metrics_csv, parse_metrics, MetricsRow, SplitKind, METRICS_HEADER,
};
pub use synth::{synth_digits, synth_digits_bytes, SplitBytes};
