//! Command-line entry points, run configuration and the two network
//! services (grounding and annotation).

pub mod annotate;
pub mod commands;
pub mod config;
pub mod service;
pub mod wire;

pub use commands::run;
