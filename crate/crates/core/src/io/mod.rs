//! Configuration, datasets, checkpoints, metrics and figures.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod figures;
pub mod image;
pub mod metrics;

pub use checkpoint::Checkpoint;
pub use config::{load_config, RunConfig};
pub use dataset::{generate, Dataset};
pub use image::Image;
pub use metrics::{read_metrics, MetricsRow, MetricsWriter};
