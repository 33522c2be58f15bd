//! Reproducible experiment runs: configs, per-replica reports and archives.

pub mod archive;
pub mod config;
pub mod runs;

pub use archive::{seed_file, verify_archive, Archive, ArchiveCheck, GreenCacheRef, Manifest};
pub use config::{load_model, ExperimentConfig, CONFIG_VERSION};
pub use runs::*;
