//! Operator tools around the `lcmsec` library: certificate authority,
//! pub/sub demo, echo latency benchmark and the discovery message-count
//! experiment. The binary is a thin clap front end over these modules.

pub mod ca;
pub mod discovery_bench;
pub mod latency;
pub mod node;
pub mod report;

use std::path::PathBuf;

use lcmsec::config::ConfigError;
use lcmsec::identity::IdentityError;
use lcmsec::session::SessionError;
use lcmsec::transport::TransportError;
use lcmsec::wire::WireError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no key for channel {channel:?} after {waited_ms} ms")]
    NoKey { channel: String, waited_ms: u64 },
    #[error("{0}")]
    Usage(String),
    #[error("discovery did not converge: {0}")]
    NotConverged(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

/// Wall-clock milliseconds since the Unix epoch, the time base of
/// certificates and discovery deadlines on a real network.
pub fn wall_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
