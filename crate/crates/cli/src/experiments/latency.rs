use std::path::Path;

use hecsb_runtime::{
    latency_model, parse_links, serve_tail, FrameKind, HeadModel, LinkProfile, RemoteSession,
    TailService,
};

use super::median;
use crate::config::Config;
use crate::data::ImageDataset;
use crate::error::CliError;

/// Latency-benchmark settings: how many images to send per measured cell,
/// which emulated links to pace at, and any analytic baseline payloads.
#[derive(Debug, Clone)]
pub struct LatencySettings {
    pub images: usize,
    pub links: Vec<LinkProfile>,
    /// `(codec, payload_bytes)` rows evaluated analytically only.
    pub baselines: Vec<(String, usize)>,
}

/// The links the headline table quotes: 4G, Wi-Fi, and 5G rates with no
/// added round trip.
pub fn default_links() -> Vec<LinkProfile> {
    vec![
        LinkProfile::from_mbps("4g", 12.0, 0.0).expect("static profile"),
        LinkProfile::from_mbps("wifi", 54.0, 0.0).expect("static profile"),
        LinkProfile::from_mbps("5g", 66.9, 0.0).expect("static profile"),
    ]
}

impl Default for LatencySettings {
    fn default() -> Self {
        Self {
            images: 100,
            links: default_links(),
            baselines: Vec::new(),
        }
    }
}

impl LatencySettings {
    pub fn from_config(cfg: &Config) -> Result<Self, CliError> {
        let d = LatencySettings::default();
        let images = cfg.usize_or("images", d.images)?;
        if images == 0 {
            return Err(CliError::Config("images: need at least one image".into()));
        }
        let links = match cfg.get("links") {
            None => d.links,
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("links {path}: {e}")))?;
                parse_links(&text)
                    .map_err(|e| CliError::Config(format!("links {path}: {e}")))?
            }
        };
        let baselines = match cfg.get("baselines") {
            None => Vec::new(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("baselines {path}: {e}")))?;
                parse_baselines(&text)
                    .map_err(|e| CliError::Config(format!("baselines {path}: {e}")))?
            }
        };
        Ok(Self {
            images,
            links,
            baselines,
        })
    }
}

/// Parses `codec,payload_bytes` rows; `#` comments, blank lines, and an
/// optional header row are skipped.
pub fn parse_baselines(text: &str) -> Result<Vec<(String, usize)>, CliError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, bytes) = line.split_once(',').ok_or_else(|| {
            CliError::Config(format!(
                "line {}: expected codec,payload_bytes",
                lineno + 1
            ))
        })?;
        let (name, bytes) = (name.trim(), bytes.trim());
        if name == "codec" && bytes == "payload_bytes" {
            continue;
        }
        let bytes: usize = bytes.parse().map_err(|_| {
            CliError::Config(format!("line {}: bad payload size `{bytes}`", lineno + 1))
        })?;
        if name.is_empty() || bytes == 0 {
            return Err(CliError::Config(format!(
                "line {}: codec and payload must be non-empty",
                lineno + 1
            )));
        }
        out.push((name.to_string(), bytes));
    }
    Ok(out)
}

/// One benchmark row. Measured rows carry medians over the image batch;
/// analytic rows carry the link model's prediction in both time columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRow {
    pub link: String,
    pub codec: String,
    pub transfer_ms: f64,
    pub total_ms: f64,
    pub payload_bytes: f64,
}

#[derive(Debug, Default)]
pub struct LatencyOutcome {
    pub rows: Vec<LatencyRow>,
    pub headers: Vec<String>,
}

pub fn latency_rows_csv(rows: &[LatencyRow]) -> String {
    let mut out = String::from("link,codec,transfer_ms,total_ms,payload_bytes\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.3},{:.3},{:.1}\n",
            r.link, r.codec, r.transfer_ms, r.total_ms, r.payload_bytes
        ));
    }
    out
}

/// Serves the tail on a loopback socket and measures median per-image
/// latency for each link and codec, then appends analytic baseline rows.
pub fn run_latency(
    artifacts: &Path,
    test: &ImageDataset,
    s: &LatencySettings,
    outcome: &mut LatencyOutcome,
) -> Result<(), CliError> {
    let describe = |e: &dyn std::fmt::Display| {
        CliError::Artifact(format!(
            "split artifacts at {}: {e}; run `hecsb train-bottleneck` first",
            artifacts.display()
        ))
    };
    let head = HeadModel::from_dir(artifacts).map_err(|e| describe(&e))?;
    let service = TailService::from_dir(artifacts).map_err(|e| describe(&e))?;
    let count = s.images.min(test.count());
    if count == 0 {
        return Err(CliError::Config("no images to send".into()));
    }

    let links_text = s
        .links
        .iter()
        .map(|l| format!("{}={}Mbps,{}ms", l.name, l.rate_bps / 1e6, l.rtt_ms))
        .collect::<Vec<_>>()
        .join(" ");
    outcome.headers = vec![
        "experiment=latency".to_string(),
        format!("artifacts={}", artifacts.display()),
        format!("images={count}"),
        format!("links: {links_text}"),
        format!("measured codecs: entropy,raw; analytic baselines: {}", s.baselines.len()),
    ];

    let mut server = serve_tail(service, "127.0.0.1:0")?;
    let addr = server.addr();
    let codecs = [
        ("entropy", FrameKind::CodedLatent),
        ("raw", FrameKind::RawLatent),
    ];
    let measured = (|| -> Result<Vec<LatencyRow>, CliError> {
        let mut rows = Vec::new();
        for link in &s.links {
            for (codec, kind) in codecs {
                let mut session = RemoteSession::connect(addr, &head)?;
                let mut transfer = Vec::with_capacity(count);
                let mut total = Vec::with_capacity(count);
                let mut payload = Vec::with_capacity(count);
                for i in 0..count {
                    let x = test.image(i);
                    let (_, timing) = session.infer(&head, &x, kind, Some(link))?;
                    transfer.push(timing.transfer_ms);
                    total.push(timing.total_ms);
                    payload.push(timing.payload_bytes as f64);
                }
                let row = LatencyRow {
                    link: link.name.clone(),
                    codec: codec.to_string(),
                    transfer_ms: median(&transfer),
                    total_ms: median(&total),
                    payload_bytes: median(&payload),
                };
                eprintln!(
                    "[latency] {}/{codec}: transfer={:.3}ms total={:.3}ms payload={:.0}B",
                    link.name, row.transfer_ms, row.total_ms, row.payload_bytes
                );
                rows.push(row);
            }
        }
        Ok(rows)
    })();
    server.stop();
    let mut rows = measured?;

    for link in &s.links {
        for (codec, bytes) in &s.baselines {
            let ms = latency_model(*bytes, link);
            rows.push(LatencyRow {
                link: link.name.clone(),
                codec: codec.clone(),
                transfer_ms: ms,
                total_ms: ms,
                payload_bytes: *bytes as f64,
            });
        }
    }
    outcome.rows = rows;
    Ok(())
}
