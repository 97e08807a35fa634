use std::time::Instant;

use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

use hecsb_codec::encode;
use hecsb_core::distill::{
    finetune_stage2, train_bottleneck_stage1, train_teacher, verify_teacher, BottleneckConfig,
    Stage2Config,
};
use hecsb_core::{BottleneckModel, SplitModel, Tensor, TeacherModel};
use hecsb_runtime::argmax;

use crate::config::Config;
use crate::data::ImageDataset;
use crate::error::CliError;
use crate::seeds::{sub_seed, tags};

/// Digit classes; fixed by the dataset.
pub const CLASSES: usize = 10;

/// Rate-distortion sweep settings; defaults reproduce the headline
/// payload/accuracy trade-off.
#[derive(Debug, Clone)]
pub struct RdSettings {
    pub seed: u64,
    /// Rate weights, swept in ascending order.
    pub betas: Vec<f64>,
    pub latent: usize,
    /// Hidden width of the bottleneck encoder/decoder.
    pub hidden: usize,
    pub teacher_hidden: usize,
    pub teacher_epochs: usize,
    pub min_top1: f64,
    /// Test images used for payload/accuracy measurement; 0 means all.
    pub eval_count: usize,
    pub stage1: BottleneckConfig,
    pub stage2: Stage2Config,
}

impl Default for RdSettings {
    fn default() -> Self {
        Self {
            seed: 42,
            betas: vec![0.001, 0.01, 0.1],
            latent: 32,
            hidden: 256,
            teacher_hidden: 256,
            teacher_epochs: 30,
            min_top1: 0.95,
            eval_count: 0,
            stage1: BottleneckConfig::default(),
            stage2: Stage2Config::default(),
        }
    }
}

impl RdSettings {
    pub fn from_config(cfg: &Config) -> Result<Self, CliError> {
        let d = RdSettings::default();
        let mut betas = cfg.f64_list_or("betas", &d.betas)?;
        if betas.is_empty() || betas.iter().any(|b| !b.is_finite() || *b <= 0.0) {
            return Err(CliError::Config(
                "betas: rate weights must be positive".into(),
            ));
        }
        betas.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        betas.dedup();
        Ok(Self {
            seed: cfg.u64_or("seed", d.seed)?,
            betas,
            latent: cfg.usize_or("latent", d.latent)?,
            hidden: cfg.usize_or("hidden", d.hidden)?,
            teacher_hidden: cfg.usize_or("teacher_hidden", d.teacher_hidden)?,
            teacher_epochs: cfg.usize_or("epochs", d.teacher_epochs)?,
            min_top1: cfg.f64_or("min_top1", d.min_top1)?,
            eval_count: d.eval_count,
            stage1: d.stage1,
            stage2: d.stage2,
        })
    }
}

/// One measured sweep point.
#[derive(Debug, Clone, Copy)]
pub struct RdPoint {
    pub beta: f64,
    /// Mean coded payload in bytes per image, wire framing included.
    pub bytes: f64,
    pub top1: f64,
}

/// Sweep results. Models are kept so callers can deploy or stress the
/// trained pipelines without retraining.
#[derive(Debug, Default)]
pub struct RdOutcome {
    pub teacher_top1: f64,
    pub raw_feature_bytes: usize,
    pub points: Vec<RdPoint>,
    pub failures: Vec<(f64, String)>,
    pub models: Vec<(f64, SplitModel)>,
    pub headers: Vec<String>,
}

pub fn rd_rows_csv(points: &[RdPoint]) -> String {
    let mut out = String::from("beta,bytes,top1\n");
    for p in points {
        out.push_str(&format!("{},{:.2},{:.4}\n", p.beta, p.bytes, p.top1));
    }
    out
}

fn labels_of<'a>(ds: &'a ImageDataset, role: &str) -> Result<&'a [usize], CliError> {
    ds.labels
        .as_deref()
        .ok_or_else(|| CliError::Ingest(format!("{role} set has no labels")))
}

/// Trains the uncompressed classifier the sweep distills from and gates it
/// on held-out accuracy.
pub fn train_task_teacher(
    train: &ImageDataset,
    test: &ImageDataset,
    seed: u64,
    epochs: usize,
    hidden: usize,
    min_top1: f64,
) -> Result<(TeacherModel, f64), CliError> {
    let train_labels = labels_of(train, "training")?;
    let test_labels = labels_of(test, "test")?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, tags::TEACHER));
    let mut model = TeacherModel::init(train.dim(), hidden, CLASSES, &mut rng)?;
    train_teacher(
        &mut model,
        &train.images,
        train_labels,
        epochs,
        128,
        1e-3,
        &mut rng,
    )?;
    let top1 = verify_teacher(&model, &test.images, test_labels, min_top1)?;
    Ok((model, top1))
}

/// Mean coded payload (bytes) and top-1 accuracy of one deployed pipeline,
/// measured image by image exactly as the split deployment runs.
pub fn measure_rd_point(
    split: &SplitModel,
    images: &Tensor,
    labels: &[usize],
) -> Result<(f64, f64), CliError> {
    let table = split.build_cdf()?;
    let (count, dim) = (images.shape()[0], images.shape()[1]);
    let mut total_bytes = 0usize;
    let mut hits = 0usize;
    for i in 0..count {
        let x = Tensor::new(vec![dim], images.row(i).to_vec()).expect("dataset row");
        let (logits, q) = split.predict_local(&x)?;
        total_bytes += encode(&q.symbols, &table)?.to_wire().len();
        if argmax(logits.as_slice()) == labels[i] {
            hits += 1;
        }
    }
    Ok((
        total_bytes as f64 / count as f64,
        hits as f64 / count as f64,
    ))
}

/// Sweeps the rate weight: per point, stage-1 bottleneck training against
/// the frozen teacher, stage-2 fine-tuning, then payload and accuracy on
/// the test set. A diverged point is recorded and the sweep continues; only
/// a fully failed sweep is an error.
pub fn run_rd(
    train: &ImageDataset,
    test: &ImageDataset,
    teacher: &TeacherModel,
    teacher_top1: f64,
    s: &RdSettings,
    outcome: &mut RdOutcome,
) -> Result<(), CliError> {
    let train_labels = labels_of(train, "training")?;
    let test_labels = labels_of(test, "test")?;
    let eval = if s.eval_count == 0 {
        test.images.clone()
    } else {
        test.subset(s.eval_count)?.images
    };
    let eval_labels = &test_labels[..eval.shape()[0]];

    outcome.teacher_top1 = teacher_top1;
    outcome.raw_feature_bytes = teacher.hidden_dim() * 4;
    let betas_text = s
        .betas
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",");
    outcome.headers = vec![
        "experiment=rd".to_string(),
        format!("seed={}", s.seed),
        format!("betas={betas_text}"),
        format!("latent={} hidden={}", s.latent, s.hidden),
        format!("teacher_hidden={}", teacher.hidden_dim()),
        format!("teacher_top1={teacher_top1:.4}"),
        format!("raw_feature_bytes={}", outcome.raw_feature_bytes),
        format!(
            "stage1: epochs={} batch={} lr={}",
            s.stage1.epochs, s.stage1.batch_size, s.stage1.lr
        ),
        format!(
            "stage2: epochs={} batch={} lr={} alpha={} tau={}",
            s.stage2.epochs, s.stage2.batch_size, s.stage2.lr, s.stage2.alpha, s.stage2.tau
        ),
        format!("eval_count={}", eval.shape()[0]),
    ];

    for (i, &beta) in s.betas.iter().enumerate() {
        let started = Instant::now();
        let point = (|| -> Result<(f64, f64, SplitModel), CliError> {
            let mut rng =
                ChaCha8Rng::seed_from_u64(sub_seed(s.seed, tags::BOTTLENECK + i as u64));
            let mut model = BottleneckModel::init(
                train.dim(),
                s.hidden,
                s.latent,
                teacher.hidden_dim(),
                &mut rng,
            )?;
            let cfg = BottleneckConfig { beta, ..s.stage1 };
            train_bottleneck_stage1(&mut model, teacher, &train.images, &cfg, &mut rng)?;
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(s.seed, tags::STAGE2 + i as u64));
            let cfg = Stage2Config { beta, ..s.stage2 };
            let (split, _) =
                finetune_stage2(model, teacher, &train.images, train_labels, &cfg, &mut rng)?;
            let (bytes, top1) = measure_rd_point(&split, &eval, eval_labels)?;
            Ok((bytes, top1, split))
        })();
        match point {
            Ok((bytes, top1, split)) => {
                eprintln!(
                    "[rd] beta={beta}: bytes={bytes:.2} top1={top1:.4} ({:.1}s)",
                    started.elapsed().as_secs_f64()
                );
                outcome.points.push(RdPoint { beta, bytes, top1 });
                outcome.models.push((beta, split));
            }
            Err(e) => {
                let msg = e.to_string();
                eprintln!("[rd] beta={beta} failed: {msg}");
                outcome.headers.push(format!("beta={beta} failed: {msg}"));
                outcome.failures.push((beta, msg));
            }
        }
    }
    if outcome.points.is_empty() {
        let (beta, msg) = outcome.failures.first().expect("loop ran");
        return Err(CliError::Train(format!(
            "every sweep point failed; first, beta={beta}: {msg}"
        )));
    }
    Ok(())
}
