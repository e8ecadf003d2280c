//! The `compactformer` command-line tool: JSON configuration, commands and
//! artifact writers.

pub mod app;
pub mod config;
pub mod output;
pub mod report;
