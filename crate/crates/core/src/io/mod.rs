//! Datasets, run configuration, checkpoints and activation export.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod export;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::{ConfigError, FreezeSpec, RunConfig};
pub use data::{load_csv, parse_csv, DataError, Dataset};
pub use export::{curve_csv, export_activation, CurvePoint};
