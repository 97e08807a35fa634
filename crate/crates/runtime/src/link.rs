use std::time::{Duration, Instant};

use crate::RuntimeError;

/// An emulated network link: a data rate in bits per second and a fixed
/// round-trip time in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkProfile {
    pub name: String,
    pub rate_bps: f64,
    pub rtt_ms: f64,
}

impl LinkProfile {
    pub fn new(name: &str, rate_bps: f64, rtt_ms: f64) -> Result<Self, RuntimeError> {
        if !(rate_bps > 0.0) || !rate_bps.is_finite() {
            return Err(RuntimeError::Malformed(format!(
                "link `{name}`: rate must be positive, got {rate_bps}"
            )));
        }
        if !(rtt_ms >= 0.0) || !rtt_ms.is_finite() {
            return Err(RuntimeError::Malformed(format!(
                "link `{name}`: rtt must be non-negative, got {rtt_ms}"
            )));
        }
        Ok(LinkProfile {
            name: name.to_string(),
            rate_bps,
            rtt_ms,
        })
    }

    pub fn from_mbps(name: &str, rate_mbps: f64, rtt_ms: f64) -> Result<Self, RuntimeError> {
        LinkProfile::new(name, rate_mbps * 1e6, rtt_ms)
    }
}

/// Predicted transfer time in milliseconds: serialization delay at the link
/// rate plus the fixed round trip.
pub fn latency_model(payload_bytes: usize, link: &LinkProfile) -> f64 {
    payload_bytes as f64 * 8.0 / link.rate_bps * 1000.0 + link.rtt_ms
}

/// Parses a link config: one `name=rate_mbps,rtt_ms` per line, `#` comments
/// and blank lines ignored. Order is preserved.
pub fn parse_links(text: &str) -> Result<Vec<LinkProfile>, RuntimeError> {
    let mut links = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, spec) = line.split_once('=').ok_or_else(|| {
            RuntimeError::Malformed(format!("line {}: expected name=rate,rtt", lineno + 1))
        })?;
        let (rate, rtt) = spec.split_once(',').ok_or_else(|| {
            RuntimeError::Malformed(format!("line {}: expected rate_mbps,rtt_ms", lineno + 1))
        })?;
        let rate: f64 = rate.trim().parse().map_err(|_| {
            RuntimeError::Malformed(format!("line {}: bad rate `{}`", lineno + 1, rate.trim()))
        })?;
        let rtt: f64 = rtt.trim().parse().map_err(|_| {
            RuntimeError::Malformed(format!("line {}: bad rtt `{}`", lineno + 1, rtt.trim()))
        })?;
        links.push(LinkProfile::from_mbps(name.trim(), rate, rtt)?);
    }
    if links.is_empty() {
        return Err(RuntimeError::Malformed("no links in config".into()));
    }
    Ok(links)
}

/// Sleeps until `deadline` with sub-millisecond accuracy: coarse sleep up to
/// 1.5 ms short of the deadline, then a spin for the remainder.
pub fn precise_wait(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let remaining = deadline - now;
        if remaining > Duration::from_micros(2000) {
            std::thread::sleep(remaining - Duration::from_micros(1500));
        } else {
            std::hint::spin_loop();
        }
    }
}

/// Deadline-based token bucket: bytes drain at exactly the link rate with no
/// burst allowance, so transmitting n bytes occupies n*8/rate seconds of
/// wall time.
#[derive(Debug)]
pub struct Pacer {
    rate_bps: f64,
    deadline: Instant,
}

impl Pacer {
    pub fn new(link: &LinkProfile) -> Pacer {
        Pacer {
            rate_bps: link.rate_bps,
            deadline: Instant::now(),
        }
    }

    /// Chunk size for paced writes: small enough for smooth pacing, large
    /// enough that per-chunk overhead stays negligible.
    pub const CHUNK: usize = 4096;

    /// Accounts for `bytes` just sent and waits until the link would have
    /// drained them.
    pub fn consume(&mut self, bytes: usize) {
        let now = Instant::now();
        if self.deadline < now {
            self.deadline = now;
        }
        let secs = bytes as f64 * 8.0 / self.rate_bps;
        self.deadline += Duration::from_secs_f64(secs);
        precise_wait(self.deadline);
    }
}
