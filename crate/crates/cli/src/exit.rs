//! Exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | internal error (a solver invariant broke) |
//! | 2 | configuration error, including bad flags |
//! | 3 | data error: missing, corrupt or mismatched files |
//! | 4 | certification failure |

use std::fmt;

use emagpie::Error;

pub const SUCCESS: u8 = 0;
pub const INTERNAL: u8 = 1;
pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const CERTIFICATION: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self { code: CONFIG, message: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self { code: DATA, message: msg.into() }
    }

    pub fn certification(msg: impl Into<String>) -> Self {
        Self { code: CERTIFICATION, message: msg.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Contract(_) | Error::Shape(_) | Error::Index { .. } => CONFIG,
            Error::Calibration(_)
            | Error::Corrupt { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Missing(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Image(_) => DATA,
            Error::Internal(_) => INTERNAL,
        };
        Self { code, message: e.to_string() }
    }
}
