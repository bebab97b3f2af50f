//! Streaming ingest for the phone-to-server path.
//!
//! A client opens a TCP connection and sends newline-delimited JSON: one
//! [`SessionHeader`], any number of samples, then `{"end":true}`. The same
//! framing is accepted as the body of `POST /v1/stream`. Each session
//! becomes one CSV under `recordings/` and one entry in `manifest.json`,
//! both loadable with [`gaitlab_core::data::load_manifest`].

mod frame;
mod http;
mod server;
mod session;
mod store;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use frame::{decode_frame, Frame, ParticipantInfo, Sample, SessionHeader, RATE_RANGE};
pub use server::{RunningServer, Server, ServerConfig, ShutdownHandle};
pub use session::{SessionReply, MAX_LINE_BYTES};
pub use store::{Store, StoredSession, MANIFEST_FILE, RECORDINGS_DIR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("unparseable frame: {0}")]
    Json(String),
    #[error("frame is missing field {0:?}")]
    MissingField(String),
    #[error("unknown activity {0:?}")]
    UnknownActivity(String),
    #[error("invalid frame: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("storage error: {0}")]
    Storage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
