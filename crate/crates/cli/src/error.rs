use std::fmt;

use mhtrack::Error;

pub const EXIT_TRACKING: u8 = 1;
pub const EXIT_BAD_INPUT: u8 = 2;

/// Failure of a subcommand, reported on stderr as one JSON line.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn bad_input(message: impl Into<String>) -> Self {
        Self { code: EXIT_BAD_INPUT, kind: "bad_input", message: message.into() }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        let kind = if e.kind() == std::io::ErrorKind::NotFound { "not_found" } else { "io" };
        Self { code: EXIT_BAD_INPUT, kind, message: format!("{}: {e}", path.display()) }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message, "exit_code": self.code }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn kind_of(e: &Error) -> &'static str {
    match e {
        Error::VolumeNotFound(_) => "volume_not_found",
        Error::InvalidVolume(_) => "invalid_volume",
        Error::MetaImage(_) => "metaimage",
        Error::InvalidParameter(_) => "invalid_parameter",
        Error::EmptyStencil(_) => "empty_stencil",
        Error::Degenerate(_) => "degenerate_fit",
        Error::Tree(_) => "hypothesis_tree",
        Error::SeedNotOnTube => "seed_not_on_tube",
        Error::Centerline(_) => "centerline",
        Error::Phantom(_) => "phantom",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::SeedNotOnTube | Error::EmptyStencil(_) | Error::Degenerate(_) | Error::Tree(_) | Error::Io(_) => {
                EXIT_TRACKING
            }
            _ => EXIT_BAD_INPUT,
        };
        Self { code, kind: kind_of(&e), message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
