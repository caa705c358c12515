use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("volume not found: {0}")]
    VolumeNotFound(PathBuf),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("unsupported MetaImage header: {0}")]
    MetaImage(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty sample stencil: {0}")]
    EmptyStencil(String),

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("hypothesis tree: {0}")]
    Tree(String),

    #[error("seed not on a tubular structure")]
    SeedNotOnTube,

    #[error("invalid centerline: {0}")]
    Centerline(String),

    #[error("phantom: {0}")]
    Phantom(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
