//! Library side of the `cgre` command-line tool: run configuration and the
//! commands behind each subcommand.

pub mod commands;
pub mod config;

use cgre::Error;

/// Process exit status for a failed command: 1 for configuration and usage
/// problems, 2 for bad data or schema files, 3 for numeric failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}
