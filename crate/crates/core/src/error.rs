//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("out of field of view: {0}")]
    OutOfFov(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("stream error: {0}")]
    Stream(String),
    #[error("lost leader at t={t:.2} s (gap {gap:.2} m)")]
    LostLeader { t: f64, gap: f64 },
    #[error("ingest error in {path}: {msg}")]
    Ingest { path: String, msg: String },
    #[error("label error: {0}")]
    Label(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training aborted: {0}")]
    TrainAbort(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
