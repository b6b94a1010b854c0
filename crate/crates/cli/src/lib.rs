//! Command-line front end for `coarsegrain`: stage operations, the
//! config-driven pipeline runner and SVG plots.

pub mod ops;
pub mod pipeline;
pub mod plot;

pub use ops::{Format, Op};
pub use pipeline::{
    load_config, parse_config, run_pipeline, verify_manifest, PipelineConfig, PipelineError,
    RunManifest, RunOptions, StageSpec, Status,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
