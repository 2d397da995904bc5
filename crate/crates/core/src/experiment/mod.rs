//! Configured, reproducible experiment runs and their reports.

pub mod config;
pub mod report;
pub mod runner;
pub mod svg;

pub use config::{DatasetConfig, EncoderConfig, ExperimentConfig, PcaSource, Seeds, CONFIG_SCHEMA};
pub use report::{render_summary, without_timing, ExperimentReport, Task, REPORT_SCHEMA};
pub use runner::{load_items, run_forced_choice, run_pca, run_repeat_detection, run_sweep, Embedder, Item, Runner};
