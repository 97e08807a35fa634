use std::io::{ErrorKind, Read, Write};

use crate::RuntimeError;

pub const FRAME_VERSION: u8 = 1;
const MAGIC: [u8; 4] = *b"HSB1";
const MAX_RANK: usize = 8;
const MAX_EXTENT: u32 = 1 << 26;
const MAX_PAYLOAD: usize = 1 << 26;
/// How many junk bytes a reader will scan past looking for the next magic
/// before declaring the stream unrecoverable.
const RESYNC_LIMIT: usize = 1 << 20;

/// What a frame carries. The low two ids are the latent codecs; the rest is
/// session control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    /// Unquantized latent, float32 little-endian.
    RawLatent = 0,
    /// Quantized, entropy-coded latent (bitstream wire layout).
    CodedLatent = 1,
    /// Client hello: table checksum and latent width, both u32 big-endian.
    Hello = 2,
    /// Server acknowledgement, empty payload.
    Ack = 3,
    /// Class logits, float32 little-endian.
    Logits = 4,
    /// UTF-8 error message.
    Error = 5,
    /// Ask the server to stop accepting connections.
    Shutdown = 6,
}

impl FrameKind {
    pub fn from_u8(v: u8) -> Result<Self, RuntimeError> {
        Ok(match v {
            0 => FrameKind::RawLatent,
            1 => FrameKind::CodedLatent,
            2 => FrameKind::Hello,
            3 => FrameKind::Ack,
            4 => FrameKind::Logits,
            5 => FrameKind::Error,
            6 => FrameKind::Shutdown,
            other => return Err(RuntimeError::Malformed(format!("unknown kind {other}"))),
        })
    }
}

/// One wire message. Layout: magic "HSB1", version u8, kind u8, rank u32,
/// extents rank x u32, payload length u32, payload bytes, CRC-32 of
/// everything before it. Multi-byte integers big-endian.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub shape: Vec<u32>,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameKind, shape: Vec<u32>, payload: Vec<u8>) -> Result<Self, RuntimeError> {
        let f = Frame {
            kind,
            shape,
            payload,
        };
        f.validate()?;
        Ok(f)
    }

    /// Control frame with no tensor shape.
    pub fn control(kind: FrameKind, payload: Vec<u8>) -> Result<Self, RuntimeError> {
        Frame::new(kind, Vec::new(), payload)
    }

    pub fn error(message: &str) -> Frame {
        Frame {
            kind: FrameKind::Error,
            shape: Vec::new(),
            payload: message.as_bytes().to_vec(),
        }
    }

    fn validate(&self) -> Result<(), RuntimeError> {
        if self.shape.len() > MAX_RANK {
            return Err(RuntimeError::Malformed(format!(
                "rank {} exceeds {MAX_RANK}",
                self.shape.len()
            )));
        }
        for &e in &self.shape {
            if e > MAX_EXTENT {
                return Err(RuntimeError::Malformed(format!(
                    "extent {e} exceeds {MAX_EXTENT}"
                )));
            }
        }
        if self.payload.len() > MAX_PAYLOAD {
            return Err(RuntimeError::Malformed(format!(
                "payload of {} bytes exceeds {MAX_PAYLOAD}",
                self.payload.len()
            )));
        }
        Ok(())
    }

    /// Serializes to the wire layout, checksum included.
    pub fn encode(&self) -> Result<Vec<u8>, RuntimeError> {
        self.validate()?;
        let mut buf =
            Vec::with_capacity(4 + 1 + 1 + 4 + 4 * self.shape.len() + 4 + self.payload.len() + 4);
        buf.extend_from_slice(&MAGIC);
        buf.push(FRAME_VERSION);
        buf.push(self.kind as u8);
        buf.extend_from_slice(&(self.shape.len() as u32).to_be_bytes());
        for &e in &self.shape {
            buf.extend_from_slice(&e.to_be_bytes());
        }
        buf.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        buf.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_be_bytes());
        Ok(buf)
    }

    /// Parses exactly one frame from `bytes`, rejecting trailing garbage.
    pub fn decode(bytes: &[u8]) -> Result<Frame, RuntimeError> {
        let mut cursor = bytes;
        let frame = read_frame(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(RuntimeError::Malformed(format!(
                "{} trailing byte(s) after frame",
                cursor.len()
            )));
        }
        Ok(frame)
    }
}

fn read_bytes<R: Read>(
    r: &mut R,
    n: usize,
    sink: &mut Vec<u8>,
    what: &str,
) -> Result<(), RuntimeError> {
    let start = sink.len();
    sink.resize(start + n, 0);
    r.read_exact(&mut sink[start..]).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            RuntimeError::Truncated(format!("stream ended inside {what}"))
        } else {
            RuntimeError::Io(e)
        }
    })
}

fn parse_after_magic<R: Read>(r: &mut R, consumed: &mut Vec<u8>) -> Result<Frame, RuntimeError> {
    read_bytes(r, 2, consumed, "version and kind")?;
    let version = consumed[4];
    let kind = consumed[5];
    if version != FRAME_VERSION {
        return Err(RuntimeError::BadVersion(version));
    }
    let kind = FrameKind::from_u8(kind)?;
    read_bytes(r, 4, consumed, "rank")?;
    let rank = u32::from_be_bytes(consumed[6..10].try_into().unwrap()) as usize;
    if rank > MAX_RANK {
        return Err(RuntimeError::Malformed(format!(
            "rank {rank} exceeds {MAX_RANK}"
        )));
    }
    read_bytes(r, 4 * rank, consumed, "extents")?;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let at = 10 + 4 * i;
        let e = u32::from_be_bytes(consumed[at..at + 4].try_into().unwrap());
        if e > MAX_EXTENT {
            return Err(RuntimeError::Malformed(format!(
                "extent {e} exceeds {MAX_EXTENT}"
            )));
        }
        shape.push(e);
    }
    let len_at = 10 + 4 * rank;
    read_bytes(r, 4, consumed, "payload length")?;
    let payload_len = u32::from_be_bytes(consumed[len_at..len_at + 4].try_into().unwrap()) as usize;
    if payload_len > MAX_PAYLOAD {
        return Err(RuntimeError::Malformed(format!(
            "payload of {payload_len} bytes exceeds {MAX_PAYLOAD}"
        )));
    }
    read_bytes(r, payload_len, consumed, "payload")?;
    let mut crc_bytes = [0u8; 4];
    r.read_exact(&mut crc_bytes).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            RuntimeError::Truncated("stream ended inside checksum".into())
        } else {
            RuntimeError::Io(e)
        }
    })?;
    let expected = u32::from_be_bytes(crc_bytes);
    if crc32fast::hash(consumed) != expected {
        return Err(RuntimeError::BadCrc);
    }
    let payload = consumed[len_at + 4..].to_vec();
    Ok(Frame {
        kind,
        shape,
        payload,
    })
}

/// Reads one frame positioned exactly at its magic. A clean close before the
/// first byte maps to [`RuntimeError::Closed`].
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, RuntimeError> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut magic[got..])?;
        if n == 0 {
            return if got == 0 {
                Err(RuntimeError::Closed)
            } else {
                Err(RuntimeError::Truncated("stream ended inside magic".into()))
            };
        }
        got += n;
    }
    if magic != MAGIC {
        return Err(RuntimeError::BadMagic);
    }
    let mut consumed = magic.to_vec();
    parse_after_magic(r, &mut consumed)
}

/// Reads one frame, scanning past any junk before the next magic. Returns
/// the frame and how many bytes were skipped, so a server can answer garbage
/// with an error frame yet keep the connection alive.
pub fn read_frame_resync<R: Read>(r: &mut R) -> Result<(Frame, usize), RuntimeError> {
    let mut window = [0u8; 4];
    let mut got = 0;
    let mut skipped = 0usize;
    loop {
        while got < 4 {
            let n = r.read(&mut window[got..])?;
            if n == 0 {
                return if got == 0 && skipped == 0 {
                    Err(RuntimeError::Closed)
                } else {
                    Err(RuntimeError::Truncated("stream ended inside magic".into()))
                };
            }
            got += n;
        }
        if window == MAGIC {
            break;
        }
        window.rotate_left(1);
        got = 3;
        skipped += 1;
        if skipped > RESYNC_LIMIT {
            return Err(RuntimeError::Malformed(format!(
                "no frame within {RESYNC_LIMIT} bytes"
            )));
        }
    }
    let mut consumed = MAGIC.to_vec();
    let frame = parse_after_magic(r, &mut consumed)?;
    Ok((frame, skipped))
}

/// Writes one encoded frame and flushes it.
pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), RuntimeError> {
    let bytes = frame.encode()?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}
