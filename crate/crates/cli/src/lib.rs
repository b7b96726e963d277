//! Experiment harness around `p2t-core`: configuration, dataset layout,
//! subcommands and the end-to-end runner.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod pipeline;

pub use config::{GtNormalization, PipelineConfig};

use p2t_core::P2tError;

/// Process exit code for an error: 2 configuration, 3 data/IO/format,
/// 4 numeric failure.
pub fn exit_code(err: &P2tError) -> i32 {
    match err {
        P2tError::Config(_) => 2,
        P2tError::Numeric(_) => 4,
        P2tError::Data(_) | P2tError::Format(_) | P2tError::Shape { .. } | P2tError::Io(_) => 3,
    }
}
