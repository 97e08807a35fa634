//! Cooperative-inference transport for the split classifier: a head client
//! encodes latents on the "edge", a tail server decodes and classifies on
//! the "cloud", and the two exchange checksummed frames over TCP. Links are
//! emulated by client-side pacing, with a closed-form latency model as the
//! measurement companion.

mod client;
mod frame;
mod link;
mod service;

pub use client::{argmax, infer_remote, request_shutdown, HeadModel, RemoteSession, TimingReport};
pub use frame::{read_frame, read_frame_resync, write_frame, Frame, FrameKind, FRAME_VERSION};
pub use link::{latency_model, parse_links, precise_wait, LinkProfile, Pacer};
pub use service::{serve_tail, table_checksum, ServerHandle, TailService};

use hecsb_codec::CodecError;
use hecsb_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad frame magic")]
    BadMagic,
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("frame checksum mismatch")]
    BadCrc,
    #[error("truncated frame: {0}")]
    Truncated(String),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("server reported: {0}")]
    Remote(String),
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}
