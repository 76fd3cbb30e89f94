//! File formats, run configuration and the command-line front end.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod heatmap;
pub mod netpbm;
