//! Lossless entropy coding for quantized latent vectors.
//!
//! A [`CdfTable`] holds one integer cumulative-frequency array per latent
//! dimension (16-bit precision, every symbol at least one count). [`encode`]
//! and [`decode`] run a 32-bit renormalizing range coder over those tables,
//! producing byte-identical [`Bitstream`]s on every platform. Streams longer
//! than the table dimension cycle through the dimensions, so a single-
//! dimension table also serves as a plain i.i.d. symbol coder.

mod bitstream;
mod cdf;
mod coder;

pub use bitstream::Bitstream;
pub use cdf::{read_cdf, write_cdf, CdfTable, FREQ_TOTAL};
pub use coder::{decode, encode};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("dimension {dim}: pmf needs at least 2 entries with positive total mass")]
    InvalidPmf { dim: usize },
    #[error("symbol {symbol} outside support [{min}, {max}] of dimension {dim}")]
    SymbolOutOfSupport {
        symbol: i32,
        min: i32,
        max: i32,
        dim: usize,
    },
    #[error("symbol count mismatch: stream carries {stream}, caller expected {requested}")]
    CountMismatch { stream: u32, requested: u32 },
    #[error("bitstream truncated at byte {offset} of {len}")]
    Truncated { offset: usize, len: usize },
    #[error("corrupt bitstream: {reason}")]
    Corrupt { reason: String },
    #[error("bad cdf file magic (expected \"HECSCDF1\")")]
    BadMagic,
    #[error("corrupt cdf file: {reason}")]
    CorruptTable { reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
