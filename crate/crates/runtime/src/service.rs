use std::io::Write;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use hecsb_codec::{decode, write_cdf, Bitstream, CdfTable};
use hecsb_core::checkpoint;
use hecsb_core::distill::SplitModelBase;
use hecsb_core::quantize::{dequantize, QuantizedLatent};
use hecsb_core::{Mlp, Tensor};

use crate::frame::{read_frame_resync, write_frame, Frame, FrameKind};
use crate::RuntimeError;

const READ_TIMEOUT: Duration = Duration::from_secs(30);
const ACCEPT_POLL: Duration = Duration::from_millis(5);

/// CRC-32 of the coding table's serialized form; both sides of the split
/// compare it during the handshake so a stale artifact fails loudly instead
/// of decoding garbage.
pub fn table_checksum(table: &CdfTable) -> Result<u32, RuntimeError> {
    let mut bytes = Vec::new();
    write_cdf(table, &mut bytes)?;
    Ok(crc32fast::hash(&bytes))
}

/// The server half of the split: decoder, classifier tail, and the frozen
/// coding table. Loads from the tail-side artifacts only; the encoder stays
/// on the device.
pub struct TailService {
    decoder: Mlp,
    tail: Mlp,
    table: CdfTable,
    checksum: u32,
    latent_dim: usize,
}

impl TailService {
    pub fn from_parts(decoder: Mlp, tail: Mlp, table: CdfTable) -> Result<Self, RuntimeError> {
        let latent_dim = decoder.in_dim();
        if table.dim_count() != latent_dim {
            return Err(RuntimeError::Handshake(format!(
                "coding table has {} dimensions, decoder expects {latent_dim}",
                table.dim_count()
            )));
        }
        let checksum = table_checksum(&table)?;
        Ok(TailService {
            decoder,
            tail,
            table,
            checksum,
            latent_dim,
        })
    }

    /// Loads `tail.ckpt` and `prior.cdf` from a split-artifact directory.
    pub fn from_dir(dir: &Path) -> Result<Self, RuntimeError> {
        let map = checkpoint::load_map(&dir.join("tail.ckpt"))?;
        let decoder = checkpoint::mlp_from_map("decoder", &map)?;
        let tail = checkpoint::mlp_from_map("tail", &map)?;
        let table = hecsb_codec::read_cdf(std::io::BufReader::new(std::fs::File::open(
            dir.join("prior.cdf"),
        )?))?;
        TailService::from_parts(decoder, tail, table)
    }

    /// The split model's tail-side computation on one latent row.
    pub fn logits_from_latent(&self, z: &Tensor) -> Result<Vec<f32>, RuntimeError> {
        let row = Tensor::new(vec![1, self.latent_dim], z.as_slice().to_vec())?;
        let logits = self.tail.forward(&self.decoder.forward(&row)?)?;
        Ok(logits.as_slice().to_vec())
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn checksum(&self) -> u32 {
        self.checksum
    }

    fn answer(&self, frame: &Frame) -> Result<Vec<f32>, RuntimeError> {
        let count: usize = frame.shape.iter().map(|&e| e as usize).product();
        if frame.shape.len() != 1 || count != self.latent_dim {
            return Err(RuntimeError::Malformed(format!(
                "latent shape {:?} does not match width {}",
                frame.shape, self.latent_dim
            )));
        }
        let z = match frame.kind {
            FrameKind::RawLatent => {
                if frame.payload.len() != 4 * count {
                    return Err(RuntimeError::Malformed(format!(
                        "raw latent payload of {} bytes for {count} floats",
                        frame.payload.len()
                    )));
                }
                let values: Vec<f32> = frame
                    .payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                // Rejects non-finite floats smuggled over the wire.
                Tensor::new(vec![count], values)?
            }
            FrameKind::CodedLatent => {
                let bs = Bitstream::from_wire(&frame.payload)?;
                let symbols = decode(&bs, &self.table, count)?;
                dequantize::<f32>(&QuantizedLatent {
                    symbols,
                    shape: vec![count],
                })
            }
            other => {
                return Err(RuntimeError::Malformed(format!(
                    "frame kind {other:?} is not a latent"
                )))
            }
        };
        self.logits_from_latent(&z)
    }
}

/// A running tail server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Signals the accept loop and waits for it to finish.
    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }

    /// Blocks until the server stops on its own (via a shutdown frame).
    pub fn wait(&mut self) {
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` and serves split-inference requests until stopped, one
/// thread per connection over the shared immutable model. Malformed input is
/// answered with error frames; a client cannot take the server down.
pub fn serve_tail<A: ToSocketAddrs>(
    service: TailService,
    addr: A,
) -> Result<ServerHandle, RuntimeError> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let service = Arc::new(service);
    // Live connections, so shutdown can unblock workers parked in reads.
    let conns: Arc<Mutex<Vec<(u64, TcpStream)>>> = Arc::new(Mutex::new(Vec::new()));
    let next_id = AtomicU64::new(0);
    let loop_stop = Arc::clone(&stop);
    let loop_conns = Arc::clone(&conns);
    let join = std::thread::spawn(move || {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        while !loop_stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let id = next_id.fetch_add(1, Ordering::SeqCst);
                    if let Ok(clone) = stream.try_clone() {
                        loop_conns.lock().unwrap().push((id, clone));
                    }
                    let service = Arc::clone(&service);
                    let stop = Arc::clone(&loop_stop);
                    let conns = Arc::clone(&loop_conns);
                    workers.push(std::thread::spawn(move || {
                        let _ = handle_connection(stream, &service, &stop);
                        conns.lock().unwrap().retain(|(other, _)| *other != id);
                    }));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(ACCEPT_POLL);
                }
                Err(_) => break,
            }
            workers.retain(|w| !w.is_finished());
        }
        for (_, conn) in loop_conns.lock().unwrap().iter() {
            let _ = conn.shutdown(Shutdown::Both);
        }
        for w in workers {
            let _ = w.join();
        }
    });
    Ok(ServerHandle {
        addr,
        stop,
        join: Some(join),
    })
}

fn handle_connection(
    stream: TcpStream,
    service: &TailService,
    stop: &AtomicBool,
) -> Result<(), RuntimeError> {
    stream.set_read_timeout(Some(READ_TIMEOUT))?;
    stream.set_nodelay(true)?;
    let mut reader = std::io::BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let mut handshaken = false;
    loop {
        let frame = match read_frame_resync(&mut reader) {
            Ok((frame, skipped)) => {
                if skipped > 0 {
                    write_frame(
                        &mut writer,
                        &Frame::error(&format!("skipped {skipped} junk byte(s)")),
                    )?;
                }
                frame
            }
            Err(RuntimeError::Closed) => return Ok(()),
            Err(RuntimeError::Truncated(_)) => return Ok(()),
            Err(RuntimeError::Io(e)) => return Err(RuntimeError::Io(e)),
            // Recoverable per-frame corruption: the reader consumed exactly
            // one frame, so answer and keep the connection.
            Err(e @ (RuntimeError::BadCrc | RuntimeError::BadVersion(_))) => {
                write_frame(&mut writer, &Frame::error(&e.to_string()))?;
                continue;
            }
            Err(e) => {
                let _ = write_frame(&mut writer, &Frame::error(&e.to_string()));
                return Err(e);
            }
        };
        match frame.kind {
            FrameKind::Hello => {
                if frame.payload.len() != 8 {
                    write_frame(&mut writer, &Frame::error("hello payload must be 8 bytes"))?;
                    continue;
                }
                let crc = u32::from_be_bytes(frame.payload[0..4].try_into().unwrap());
                let dim = u32::from_be_bytes(frame.payload[4..8].try_into().unwrap());
                if crc != service.checksum || dim as usize != service.latent_dim {
                    write_frame(
                        &mut writer,
                        &Frame::error(&format!(
                            "model mismatch: table crc {crc:08x}/width {dim} vs {:08x}/{}",
                            service.checksum, service.latent_dim
                        )),
                    )?;
                    return Ok(());
                }
                handshaken = true;
                write_frame(&mut writer, &Frame::control(FrameKind::Ack, Vec::new())?)?;
            }
            FrameKind::Shutdown => {
                write_frame(&mut writer, &Frame::control(FrameKind::Ack, Vec::new())?)?;
                stop.store(true, Ordering::SeqCst);
                return Ok(());
            }
            FrameKind::RawLatent | FrameKind::CodedLatent => {
                if !handshaken {
                    write_frame(&mut writer, &Frame::error("handshake required"))?;
                    continue;
                }
                match service.answer(&frame) {
                    Ok(logits) => {
                        let payload: Vec<u8> =
                            logits.iter().flat_map(|v| v.to_le_bytes()).collect();
                        let reply =
                            Frame::new(FrameKind::Logits, vec![logits.len() as u32], payload)?;
                        write_frame(&mut writer, &reply)?;
                    }
                    Err(e) => {
                        write_frame(&mut writer, &Frame::error(&e.to_string()))?;
                    }
                }
            }
            other => {
                write_frame(
                    &mut writer,
                    &Frame::error(&format!("unexpected frame kind {other:?}")),
                )?;
            }
        }
        writer.flush()?;
    }
}

/// Convenience for building a [`TailService`] out of an in-memory model.
impl TryFrom<&SplitModelBase<f32>> for TailService {
    type Error = RuntimeError;

    fn try_from(model: &SplitModelBase<f32>) -> Result<Self, RuntimeError> {
        TailService::from_parts(
            model.decoder.clone(),
            model.tail.clone(),
            model.prior.build_cdf()?,
        )
    }
}
