//! Command-line front end and file formats for the correlated-photon
//! imaging library in `qcrt-core`.
//!
//! The binary drives four stages over a shared TOML configuration:
//! `simulate` writes time-tagged hit streams for both camera regions,
//! `correlate` turns hits into photon events and matched pairs,
//! `reconstruct` renders refocused images, focal stacks, parallax views,
//! and depth maps from the pairs, and `report` re-checks the bookkeeping
//! of a finished run. Everything here is plumbing; the algorithms live in
//! the core crate.

pub mod config;
pub mod formats;
pub mod pipeline;
pub mod report;

pub use config::{ConfigError, PipelineConfig};
pub use pipeline::CliError;
