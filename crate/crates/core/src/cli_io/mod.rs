//! Configuration, orchestration and file output behind the `memdarcy`
//! command line.
//!
//! Exit codes: 0 success, 1 configuration, parse, I/O or provenance error,
//! 2 a property check failed, 3 a numerical failure.

mod commands;
mod config;
pub mod svg;
mod validate;

pub use commands::*;
pub use config::*;
pub use validate::{cmd_validate, Fixture, ValidationReport};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_PROPERTY: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Parse(_)
        | Error::Io(_)
        | Error::ProvenanceMismatch(_)
        | Error::ConfigMismatch(_)
        | Error::InvalidArgument(_)
        | Error::InvalidSpec(_)
        | Error::HoleTouchesBoundary(_)
        | Error::GridMismatch(_)
        | Error::KernelHorizonExceeded { .. }
        | Error::NonSeparableInitialData(_) => EXIT_INPUT,
        _ => EXIT_SOLVER,
    }
}
