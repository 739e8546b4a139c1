//! Experiment runner for softmix: TOML configs, recipes, CSV/PGM/PPM
//! artifacts and checksummed run manifests.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod recipes;
pub mod render;

pub use artifacts::{ArtifactRecord, ArtifactWriter, Manifest, MANIFEST};
pub use config::{ExperimentConfig, ExperimentKind, OUTPUT_ROOT_ENV};
pub use error::{HarnessError, Result};
pub use recipes::{run, run_in, RunSummary};
pub use render::{render_density, render_points, Grid, Overlay};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
