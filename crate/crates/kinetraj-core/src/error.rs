//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("missing required column {column} in {path}")]
    MissingColumn { path: String, column: String },

    #[error("no ego track in scenario {scenario_id}")]
    NoEgoTrack { scenario_id: String },

    #[error("non-uniform timestamps in track {track_id}: step {step} has dt {dt}, expected {expected}")]
    NonUniformTimestamps {
        track_id: String,
        step: usize,
        dt: f64,
        expected: f64,
    },

    #[error("ego track unobserved at the frame anchor step {step}")]
    EgoUnobservedAtAnchor { step: usize },

    #[error("dimension mismatch: {message}")]
    DimensionMismatch { message: String },

    #[error("empty input: {message}")]
    EmptyInput { message: String },

    #[error("invalid config: {message}")]
    InvalidConfig { message: String },

    #[error("map has no drivable pixel; penalty field is degenerate")]
    NoDrivablePixel,

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("training diverged: {message}")]
    Diverged { message: String },

    #[error("checkpoint format error: {message}")]
    CheckpointFormat { message: String },

    #[error("checkpoint fingerprint mismatch: {message}")]
    FingerprintMismatch { message: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    pub fn invalid_config(message: impl Into<String>) -> Self {
        Error::InvalidConfig { message: message.into() }
    }

    pub fn dimension(message: impl Into<String>) -> Self {
        Error::DimensionMismatch { message: message.into() }
    }

    pub fn empty(message: impl Into<String>) -> Self {
        Error::EmptyInput { message: message.into() }
    }
}
