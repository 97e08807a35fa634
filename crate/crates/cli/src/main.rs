use std::io::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use hecsb_cli::artifacts::{load_teacher, save_teacher, TEACHER_FILE};
use hecsb_cli::data::{mnist_test, mnist_train};
use hecsb_cli::experiments::latency::{run_latency, LatencyOutcome, LatencySettings};
use hecsb_cli::experiments::rd::{
    rd_rows_csv, run_rd, train_task_teacher, RdOutcome, RdSettings,
};
use hecsb_cli::experiments::recon::{run_recon, ReconOutcome, ReconSettings};
use hecsb_cli::experiments::{csv_with_headers, latency::latency_rows_csv, write_out};
use hecsb_cli::{CliError, Config};
use hecsb_core::distill::{save_split, verify_teacher};
use hecsb_runtime::{
    argmax, parse_links, serve_tail, FrameKind, HeadModel, RemoteSession, TailService,
};

#[derive(Parser)]
#[command(
    name = "hecsb",
    version,
    about = "Split-computing benchmark tool: compressed-sensing recovery, \
             bottleneck distillation, and entropy-coded cooperative inference"
)]
struct Cli {
    /// key=value settings file; flags override it
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed all derived random streams hang off
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Directory for result CSVs and artifacts
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Directory holding the IDX image/label files
    #[arg(long, global = true, value_name = "DIR")]
    dataset: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Reconstruction-error benchmark across measurement counts
    Recon {
        /// Comma list of methods: hecsa,lasso,vae
        #[arg(long)]
        methods: Option<String>,
        /// Comma list of measurement counts
        #[arg(long)]
        m_list: Option<String>,
        /// Test images evaluated per cell
        #[arg(long)]
        subset: Option<usize>,
        /// Measurement noise level
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Rate-distortion sweep over the bottleneck's rate weight
    Rd {
        /// Comma list of rate weights
        #[arg(long)]
        betas: Option<String>,
        /// Teacher checkpoint to distill from (trained if absent)
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Teacher training epochs when no checkpoint exists
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Median end-to-end latency over emulated links
    Latency {
        /// Directory with head/tail/prior artifacts
        #[arg(long)]
        artifacts: Option<PathBuf>,
        /// Link config file: name=rate_mbps,rtt_ms per line
        #[arg(long)]
        links: Option<PathBuf>,
        /// CSV of codec,payload_bytes rows evaluated analytically
        #[arg(long)]
        baselines: Option<PathBuf>,
        /// Images sent per measured cell
        #[arg(long)]
        images: Option<usize>,
    },
    /// Train and save the uncompressed task classifier
    TrainTeacher {
        #[arg(long)]
        epochs: Option<usize>,
        /// Hidden width at the split point
        #[arg(long)]
        hidden: Option<usize>,
        /// Held-out accuracy the teacher must reach
        #[arg(long)]
        min_top1: Option<f64>,
    },
    /// Train the bottleneck pipeline and save deployable split artifacts
    TrainBottleneck {
        /// Rate weight in the training objective
        #[arg(long)]
        beta: Option<f64>,
        /// Teacher checkpoint to distill from
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Bottleneck latent width
        #[arg(long)]
        latent: Option<usize>,
    },
    /// Serve the tail half of the split network on a TCP socket
    Serve {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// One remote inference against a running tail server
    Infer {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        artifacts: Option<PathBuf>,
        /// Test-image index to send
        #[arg(long)]
        image: Option<usize>,
        /// Latent encoding on the wire: entropy or raw
        #[arg(long)]
        codec: Option<String>,
        /// Inline link spec name=rate_mbps,rtt_ms (unpaced if absent)
        #[arg(long)]
        link: Option<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}

/// Merges defaults, the optional config file, and command-line flags into
/// one key/value view, flags winning.
fn merged_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::empty(),
    };
    let mut put = |key: &'static str, value: Option<String>| {
        if let Some(v) = value {
            cfg.set(key, v);
        }
    };
    put("seed", cli.seed.map(|v| v.to_string()));
    put("out", cli.out.as_ref().map(|p| p.display().to_string()));
    put(
        "dataset",
        cli.dataset.as_ref().map(|p| p.display().to_string()),
    );
    match &cli.cmd {
        Cmd::Recon {
            methods,
            m_list,
            subset,
            sigma,
        } => {
            put("methods", methods.clone());
            put("m_list", m_list.clone());
            put("subset", subset.map(|v| v.to_string()));
            put("sigma", sigma.map(|v| v.to_string()));
        }
        Cmd::Rd {
            betas,
            teacher,
            epochs,
        } => {
            put("betas", betas.clone());
            put("teacher", teacher.as_ref().map(|p| p.display().to_string()));
            put("epochs", epochs.map(|v| v.to_string()));
        }
        Cmd::Latency {
            artifacts,
            links,
            baselines,
            images,
        } => {
            put(
                "artifacts",
                artifacts.as_ref().map(|p| p.display().to_string()),
            );
            put("links", links.as_ref().map(|p| p.display().to_string()));
            put(
                "baselines",
                baselines.as_ref().map(|p| p.display().to_string()),
            );
            put("images", images.map(|v| v.to_string()));
        }
        Cmd::TrainTeacher {
            epochs,
            hidden,
            min_top1,
        } => {
            put("epochs", epochs.map(|v| v.to_string()));
            put("teacher_hidden", hidden.map(|v| v.to_string()));
            put("min_top1", min_top1.map(|v| v.to_string()));
        }
        Cmd::TrainBottleneck {
            beta,
            teacher,
            latent,
        } => {
            put("beta", beta.map(|v| v.to_string()));
            put("teacher", teacher.as_ref().map(|p| p.display().to_string()));
            put("latent", latent.map(|v| v.to_string()));
        }
        Cmd::Serve { addr, artifacts } => {
            put("addr", addr.clone());
            put(
                "artifacts",
                artifacts.as_ref().map(|p| p.display().to_string()),
            );
        }
        Cmd::Infer {
            addr,
            artifacts,
            image,
            codec,
            link,
        } => {
            put("addr", addr.clone());
            put(
                "artifacts",
                artifacts.as_ref().map(|p| p.display().to_string()),
            );
            put("image", image.map(|v| v.to_string()));
            put("codec", codec.clone());
            put("link", link.clone());
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = merged_config(&cli)?;
    match cli.cmd {
        Cmd::Recon { .. } => cmd_recon(&cfg),
        Cmd::Rd { .. } => cmd_rd(&cfg),
        Cmd::Latency { .. } => cmd_latency(&cfg),
        Cmd::TrainTeacher { .. } => cmd_train_teacher(&cfg),
        Cmd::TrainBottleneck { .. } => cmd_train_bottleneck(&cfg),
        Cmd::Serve { .. } => cmd_serve(&cfg),
        Cmd::Infer { .. } => cmd_infer(&cfg),
    }
}

fn dataset_dir(cfg: &Config) -> PathBuf {
    cfg.path_or("dataset", "data/mnist")
}

fn out_dir(cfg: &Config) -> PathBuf {
    cfg.path_or("out", "out")
}

fn artifacts_dir(cfg: &Config) -> PathBuf {
    match cfg.get("artifacts") {
        Some(p) => PathBuf::from(p),
        None => out_dir(cfg),
    }
}

fn cmd_recon(cfg: &Config) -> Result<(), CliError> {
    let dir = dataset_dir(cfg);
    let train = mnist_train(&dir)?;
    let test = mnist_test(&dir)?;
    let s = ReconSettings::from_config(cfg)?;
    let mut outcome = ReconOutcome::default();
    let run = run_recon(&train, &test, &s, &mut outcome);

    let mut headers = outcome.headers.clone();
    if let Err(e) = &run {
        headers.push(format!("aborted: {e}"));
    }
    let out = out_dir(cfg);
    let summary = write_out(
        &out,
        "recon_summary.csv",
        &csv_with_headers(&headers, &outcome.report.summary_csv()),
    )?;
    let images = write_out(
        &out,
        "recon_images.csv",
        &csv_with_headers(&headers, &outcome.report.per_image_csv()),
    )?;
    println!("wrote={}", summary.display());
    println!("wrote={}", images.display());
    run
}

/// Loads the teacher checkpoint if it exists, otherwise trains one there.
fn teacher_or_train(
    cfg: &Config,
    s: &RdSettings,
    train: &hecsb_cli::ImageDataset,
    test: &hecsb_cli::ImageDataset,
) -> Result<(hecsb_core::TeacherModel, f64, PathBuf), CliError> {
    let path = match cfg.get("teacher") {
        Some(p) => PathBuf::from(p),
        None => out_dir(cfg).join(TEACHER_FILE),
    };
    if path.exists() {
        let model = load_teacher(&path)?;
        let labels = test
            .labels
            .as_deref()
            .ok_or_else(|| CliError::Ingest("test set has no labels".into()))?;
        let top1 = verify_teacher(&model, &test.images, labels, s.min_top1)?;
        Ok((model, top1, path))
    } else {
        eprintln!("[rd] no teacher at {}; training one", path.display());
        let (model, top1) = train_task_teacher(
            train,
            test,
            s.seed,
            s.teacher_epochs,
            s.teacher_hidden,
            s.min_top1,
        )?;
        save_teacher(&path, &model)?;
        Ok((model, top1, path))
    }
}

fn cmd_rd(cfg: &Config) -> Result<(), CliError> {
    let dir = dataset_dir(cfg);
    let train = mnist_train(&dir)?;
    let test = mnist_test(&dir)?;
    let s = RdSettings::from_config(cfg)?;
    let (teacher, teacher_top1, teacher_path) = teacher_or_train(cfg, &s, &train, &test)?;
    eprintln!(
        "[rd] teacher {} top1={teacher_top1:.4}",
        teacher_path.display()
    );

    let mut outcome = RdOutcome::default();
    let run = run_rd(&train, &test, &teacher, teacher_top1, &s, &mut outcome);
    let mut headers = outcome.headers.clone();
    if let Err(e) = &run {
        headers.push(format!("aborted: {e}"));
    }
    let path = write_out(
        &out_dir(cfg),
        "rd.csv",
        &csv_with_headers(&headers, &rd_rows_csv(&outcome.points)),
    )?;
    println!("wrote={}", path.display());
    run
}

fn cmd_latency(cfg: &Config) -> Result<(), CliError> {
    let test = mnist_test(&dataset_dir(cfg))?;
    let s = LatencySettings::from_config(cfg)?;
    let artifacts = artifacts_dir(cfg);
    let mut outcome = LatencyOutcome::default();
    let run = run_latency(&artifacts, &test, &s, &mut outcome);
    let mut headers = outcome.headers.clone();
    if let Err(e) = &run {
        headers.push(format!("aborted: {e}"));
    }
    let path = write_out(
        &out_dir(cfg),
        "latency.csv",
        &csv_with_headers(&headers, &latency_rows_csv(&outcome.rows)),
    )?;
    println!("wrote={}", path.display());
    run
}

fn cmd_train_teacher(cfg: &Config) -> Result<(), CliError> {
    let dir = dataset_dir(cfg);
    let train = mnist_train(&dir)?;
    let test = mnist_test(&dir)?;
    let s = RdSettings::from_config(cfg)?;
    let (model, top1) = train_task_teacher(
        &train,
        &test,
        s.seed,
        s.teacher_epochs,
        s.teacher_hidden,
        s.min_top1,
    )?;
    let path = out_dir(cfg).join(TEACHER_FILE);
    save_teacher(&path, &model)?;
    println!("teacher_top1={top1:.4}");
    println!("saved={}", path.display());
    Ok(())
}

fn cmd_train_bottleneck(cfg: &Config) -> Result<(), CliError> {
    let dir = dataset_dir(cfg);
    let train = mnist_train(&dir)?;
    let test = mnist_test(&dir)?;
    let beta = cfg.f64_or("beta", 0.01)?;
    if !beta.is_finite() || beta <= 0.0 {
        return Err(CliError::Config(format!(
            "beta: rate weight must be positive, got {beta}"
        )));
    }
    let mut s = RdSettings::from_config(cfg)?;
    s.betas = vec![beta];

    let teacher_path = match cfg.get("teacher") {
        Some(p) => PathBuf::from(p),
        None => out_dir(cfg).join(TEACHER_FILE),
    };
    let teacher = load_teacher(&teacher_path)?;
    let labels = test
        .labels
        .as_deref()
        .ok_or_else(|| CliError::Ingest("test set has no labels".into()))?;
    let teacher_top1 = verify_teacher(&teacher, &test.images, labels, s.min_top1)?;

    let mut outcome = RdOutcome::default();
    run_rd(&train, &test, &teacher, teacher_top1, &s, &mut outcome)?;
    let point = outcome.points[0];
    let (_, model) = outcome.models.remove(0);
    let out = out_dir(cfg);
    save_split(&model, &out)?;
    println!("student_top1={:.4}", point.top1);
    println!("teacher_top1={teacher_top1:.4}");
    println!("mean_payload_bytes={:.2}", point.bytes);
    println!("saved={}", out.display());
    Ok(())
}

fn load_service(cfg: &Config) -> Result<TailService, CliError> {
    let dir = artifacts_dir(cfg);
    TailService::from_dir(&dir).map_err(|e| {
        CliError::Artifact(format!(
            "split artifacts at {}: {e}; run `hecsb train-bottleneck` first",
            dir.display()
        ))
    })
}

fn cmd_serve(cfg: &Config) -> Result<(), CliError> {
    let service = load_service(cfg)?;
    let addr = cfg.str_or("addr", "127.0.0.1:7878");
    let mut handle = serve_tail(service, addr)?;
    println!("listening on {}", handle.addr());
    std::io::stdout().flush().map_err(|e| CliError::Io(e.to_string()))?;
    handle.wait();
    Ok(())
}

fn cmd_infer(cfg: &Config) -> Result<(), CliError> {
    let test = mnist_test(&dataset_dir(cfg))?;
    let index = cfg.usize_or("image", 0)?;
    if index >= test.count() {
        return Err(CliError::Config(format!(
            "image: index {index} outside the test set of {}",
            test.count()
        )));
    }
    let kind = match cfg.str_or("codec", "entropy") {
        "entropy" => FrameKind::CodedLatent,
        "raw" => FrameKind::RawLatent,
        other => {
            return Err(CliError::Config(format!(
                "codec: expected entropy or raw, got `{other}`"
            )))
        }
    };
    let link = match cfg.get("link") {
        None => None,
        Some(spec) => {
            let links = parse_links(spec)
                .map_err(|e| CliError::Config(format!("link: {e}")))?;
            Some(links.into_iter().next().expect("non-empty by parse"))
        }
    };

    let dir = artifacts_dir(cfg);
    let head = HeadModel::from_dir(&dir).map_err(|e| {
        CliError::Artifact(format!(
            "split artifacts at {}: {e}; run `hecsb train-bottleneck` first",
            dir.display()
        ))
    })?;
    let addr = cfg.str_or("addr", "127.0.0.1:7878");
    let mut session = RemoteSession::connect(addr, &head)?;
    let x = test.image(index);
    let (logits, timing) = session.infer(&head, &x, kind, link.as_ref())?;
    println!(
        "label={} head_ms={:.3} transfer_ms={:.3} tail_ms={:.3} total_ms={:.3} payload_bytes={}",
        argmax(&logits),
        timing.head_ms,
        timing.transfer_ms,
        timing.tail_ms,
        timing.total_ms,
        timing.payload_bytes
    );
    Ok(())
}
