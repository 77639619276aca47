//! Library side of the `pomv` command-line tool, shared with its tests.

pub mod commands;
pub mod config;
pub mod io;

use config::ConfigError;

/// Process exit status for an error: 2 for configuration problems, 3 for
/// numerical failure after retries, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<pomv_core::Error>() {
            return match e {
                pomv_core::Error::Config { .. } | pomv_core::Error::Precondition(_) => 2,
                pomv_core::Error::NumericalOverflow { .. } | pomv_core::Error::RetriesExhausted { .. } => 3,
            };
        }
    }
    1
}
