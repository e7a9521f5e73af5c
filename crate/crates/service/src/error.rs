use std::net::SocketAddr;

use thiserror::Error;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },

    #[error("cycle {0} has no queries")]
    UnknownCycle(usize),

    #[error("the run has not finished")]
    NotFinished,

    #[error("malformed request: {0}")]
    BadRequest(String),

    #[error("the annotation loop stopped: {0}")]
    Stopped(String),

    #[error("server failure: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] ads_core::Error),
}
