//! File formats, dataset cache, manifests, sample export and tables for
//! `degan-core`, plus the `degan` command-line tool.

pub mod cache;
pub mod checkpoint;
pub mod dataref;
pub mod error;
pub mod import;
pub mod kv;
pub mod manifest;
pub mod metrics;
pub mod runner;
pub mod samples;
pub mod sweep;
pub mod tables;

pub use error::{Error, Result};
