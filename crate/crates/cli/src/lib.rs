//! Command-line front end: configuration resolution, the subcommand
//! pipeline, and the shipped demo scenarios.

pub mod config;
pub mod demo;
pub mod pipeline;

use bifid_core::Error;

/// Exit-code contract: 2 for usage and configuration problems, 3 for bad
/// or inconsistent data, 4 for numerical failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parameter(_)
        | Error::Registry(_)
        | Error::Spec(_)
        | Error::Size(_)
        | Error::UnsupportedNormalization { .. } => 2,
        Error::Parse { .. }
        | Error::Dimension(_)
        | Error::EmptyInput(_)
        | Error::Permutation(_)
        | Error::State(_)
        | Error::Alignment(_)
        | Error::Io { .. }
        | Error::Comparison(_)
        | Error::Degenerate(_)
        | Error::Disconnected { .. } => 3,
        Error::Numeric(_) | Error::OptimizationFailure { .. } => 4,
    }
}
