//! Configuration parsing and result serialization behind the `ucpadp` binary.

pub mod config;
pub mod output;
