//! Library half of the CLI: binary file formats, configuration handling,
//! heatmap export, and the command implementations. The `gocor` binary is a
//! thin argument-parsing wrapper over [`commands`].

pub mod commands;
pub mod config;
pub mod formats;
pub mod heatmap;
