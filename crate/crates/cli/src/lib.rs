//! Pipeline orchestration for the demonstration-harmonization toolkit:
//! run configuration, the stage-by-stage pipeline, and reproducible run
//! manifests. The `echo-cot` binary is a thin command-line layer over this
//! crate.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;
