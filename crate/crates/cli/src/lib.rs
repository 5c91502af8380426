//! Command-line front end: configuration, CSV ingestion, result files and the
//! pipelines behind each subcommand.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod output;
