use std::io::Write;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::time::{Duration, Instant};

use hecsb_codec::{encode, CdfTable};
use hecsb_core::checkpoint;
use hecsb_core::quantize::quantize;
use hecsb_core::{Mlp, Tensor};

use crate::frame::{read_frame, write_frame, Frame, FrameKind};
use crate::link::{precise_wait, LinkProfile, Pacer};
use crate::service::table_checksum;
use crate::RuntimeError;

const IO_TIMEOUT: Duration = Duration::from_secs(30);

/// The device half of the split: the encoder and the frozen coding table.
#[derive(Debug, Clone)]
pub struct HeadModel {
    encoder: Mlp,
    table: CdfTable,
    checksum: u32,
}

impl HeadModel {
    pub fn from_parts(encoder: Mlp, table: CdfTable) -> Result<Self, RuntimeError> {
        if table.dim_count() != encoder.out_dim() {
            return Err(RuntimeError::Handshake(format!(
                "coding table has {} dimensions, encoder emits {}",
                table.dim_count(),
                encoder.out_dim()
            )));
        }
        let checksum = table_checksum(&table)?;
        Ok(HeadModel {
            encoder,
            table,
            checksum,
        })
    }

    /// Loads `head.ckpt` and `prior.cdf` from a split-artifact directory.
    pub fn from_dir(dir: &Path) -> Result<Self, RuntimeError> {
        let map = checkpoint::load_map(&dir.join("head.ckpt"))?;
        let encoder = checkpoint::mlp_from_map("encoder", &map)?;
        let table = hecsb_codec::read_cdf(std::io::BufReader::new(std::fs::File::open(
            dir.join("prior.cdf"),
        )?))?;
        HeadModel::from_parts(encoder, table)
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn checksum(&self) -> u32 {
        self.checksum
    }

    /// Head compute on one input: latent, then the requested codec.
    pub fn encode_latent(&self, x: &Tensor, kind: FrameKind) -> Result<Frame, RuntimeError> {
        let dim = self.encoder.in_dim();
        if x.len() != dim || x.rank() > 2 {
            return Err(RuntimeError::Malformed(format!(
                "expected one input of {dim} features, got shape {:?}",
                x.shape()
            )));
        }
        let row = Tensor::new(vec![1, dim], x.as_slice().to_vec())?;
        let z = self.encoder.forward(&row)?;
        let d = self.latent_dim() as u32;
        match kind {
            FrameKind::RawLatent => {
                let payload: Vec<u8> = z.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
                Frame::new(FrameKind::RawLatent, vec![d], payload)
            }
            FrameKind::CodedLatent => {
                let q = quantize(&z).map_err(RuntimeError::Core)?;
                let bs = encode(&q.symbols, &self.table)?;
                Frame::new(FrameKind::CodedLatent, vec![d], bs.to_wire())
            }
            other => Err(RuntimeError::Malformed(format!(
                "frame kind {other:?} is not a latent codec"
            ))),
        }
    }
}

/// Wall-clock breakdown of one remote inference, all in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub head_ms: f64,
    pub transfer_ms: f64,
    pub tail_ms: f64,
    pub total_ms: f64,
    pub payload_bytes: usize,
}

/// One handshaken connection to a tail server; synchronous request/reply.
#[derive(Debug)]
pub struct RemoteSession {
    writer: TcpStream,
    reader: std::io::BufReader<TcpStream>,
}

impl RemoteSession {
    /// Connects and verifies that both sides hold the same coding table.
    pub fn connect<A: ToSocketAddrs>(addr: A, head: &HeadModel) -> Result<Self, RuntimeError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(IO_TIMEOUT))?;
        stream.set_write_timeout(Some(IO_TIMEOUT))?;
        stream.set_nodelay(true)?;
        let mut session = RemoteSession {
            reader: std::io::BufReader::new(stream.try_clone()?),
            writer: stream,
        };
        let mut payload = Vec::with_capacity(8);
        payload.extend_from_slice(&head.checksum.to_be_bytes());
        payload.extend_from_slice(&(head.latent_dim() as u32).to_be_bytes());
        write_frame(&mut session.writer, &Frame::control(FrameKind::Hello, payload)?)?;
        let reply = read_frame(&mut session.reader)?;
        match reply.kind {
            FrameKind::Ack => Ok(session),
            FrameKind::Error => Err(RuntimeError::Handshake(
                String::from_utf8_lossy(&reply.payload).into_owned(),
            )),
            other => Err(RuntimeError::Malformed(format!(
                "expected ack, got {other:?}"
            ))),
        }
    }

    /// Runs one input through the split pipeline: head compute here, paced
    /// transfer at the link's rate (if any), tail compute on the server.
    pub fn infer(
        &mut self,
        head: &HeadModel,
        x: &Tensor,
        kind: FrameKind,
        link: Option<&LinkProfile>,
    ) -> Result<(Vec<f32>, TimingReport), RuntimeError> {
        let t0 = Instant::now();
        let frame = head.encode_latent(x, kind)?;
        let payload_bytes = frame.payload.len();
        let bytes = frame.encode()?;
        let head_ms = ms_since(t0);

        let t1 = Instant::now();
        match link {
            None => self.writer.write_all(&bytes)?,
            Some(l) => {
                let mut pacer = Pacer::new(l);
                for chunk in bytes.chunks(Pacer::CHUNK) {
                    self.writer.write_all(chunk)?;
                    pacer.consume(chunk.len());
                }
            }
        }
        self.writer.flush()?;
        let send_ms = ms_since(t1);
        let rtt_ms = link.map_or(0.0, |l| l.rtt_ms);
        if rtt_ms > 0.0 {
            precise_wait(Instant::now() + Duration::from_secs_f64(rtt_ms / 2.0 * 1e-3));
        }

        let t2 = Instant::now();
        let reply = read_frame(&mut self.reader)?;
        let logits = match reply.kind {
            FrameKind::Logits => {
                if reply.payload.len() % 4 != 0 {
                    return Err(RuntimeError::Malformed(
                        "logits payload is not float-aligned".into(),
                    ));
                }
                reply
                    .payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect::<Vec<f32>>()
            }
            FrameKind::Error => {
                return Err(RuntimeError::Remote(
                    String::from_utf8_lossy(&reply.payload).into_owned(),
                ))
            }
            other => {
                return Err(RuntimeError::Malformed(format!(
                    "expected logits, got {other:?}"
                )))
            }
        };
        let tail_ms = ms_since(t2);
        if rtt_ms > 0.0 {
            precise_wait(Instant::now() + Duration::from_secs_f64(rtt_ms / 2.0 * 1e-3));
        }
        Ok((
            logits,
            TimingReport {
                head_ms,
                transfer_ms: send_ms + rtt_ms,
                tail_ms,
                total_ms: ms_since(t0),
                payload_bytes,
            },
        ))
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One-shot remote inference: connect, handshake, classify, disconnect.
pub fn infer_remote<A: ToSocketAddrs>(
    head: &HeadModel,
    addr: A,
    x: &Tensor,
    kind: FrameKind,
    link: Option<&LinkProfile>,
) -> Result<(usize, Vec<f32>, TimingReport), RuntimeError> {
    let mut session = RemoteSession::connect(addr, head)?;
    let (logits, timing) = session.infer(head, x, kind, link)?;
    Ok((argmax(&logits), logits, timing))
}

/// Asks the server at `addr` to stop accepting connections.
pub fn request_shutdown<A: ToSocketAddrs>(addr: A) -> Result<(), RuntimeError> {
    let stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    let mut reader = std::io::BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    write_frame(&mut writer, &Frame::control(FrameKind::Shutdown, Vec::new())?)?;
    match read_frame(&mut reader)?.kind {
        FrameKind::Ack => Ok(()),
        other => Err(RuntimeError::Malformed(format!(
            "expected ack, got {other:?}"
        ))),
    }
}
