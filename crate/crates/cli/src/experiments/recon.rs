use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

use hecsb_core::cs::{
    ista_lasso, recon_error, select_lambda, train_vae, vae_reconstruct, LatentSearchConfig,
    MeasurementOperatorBase, ReconReport,
};
use hecsb_core::hecsa::{train_hecsa, HecsaConfig};
use hecsb_core::tensor::TensorBase;
use hecsb_core::{HecsaModel, Tensor, VaeModel};

use crate::config::Config;
use crate::data::ImageDataset;
use crate::error::CliError;
use crate::seeds::{sub_seed, tags};

/// The three reconstruction methods, in output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Hecsa,
    Lasso,
    Vae,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Hecsa, Method::Lasso, Method::Vae];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Hecsa => "hecsa",
            Method::Lasso => "lasso",
            Method::Vae => "vae",
        })
    }
}

impl FromStr for Method {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "hecsa" => Ok(Method::Hecsa),
            "lasso" => Ok(Method::Lasso),
            "vae" => Ok(Method::Vae),
            other => Err(CliError::Config(format!(
                "unknown method `{other}` (expected hecsa, lasso, or vae)"
            ))),
        }
    }
}

/// The regularization grid: seven points log-spaced over `[1e-4, 1e-1]`.
pub fn lasso_grid() -> Vec<f64> {
    (0..7).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

/// Reconstruction-experiment settings; defaults reproduce the headline
/// curves.
#[derive(Debug, Clone)]
pub struct ReconSettings {
    pub seed: u64,
    pub subset: usize,
    pub sigma: f64,
    pub methods: Vec<Method>,
    pub m_list: Vec<usize>,
    pub val_count: usize,
    /// Training images used for the learned methods; 0 means all.
    pub train_count: usize,
    pub hecsa_hidden: usize,
    pub hecsa_epochs: usize,
    pub vae_latent: usize,
    pub vae_hidden: usize,
    pub vae_epochs: usize,
    pub lasso_val_iters: usize,
    pub lasso_final_iters: usize,
    pub lasso_tol: f64,
}

impl Default for ReconSettings {
    fn default() -> Self {
        Self {
            seed: 42,
            subset: 200,
            sigma: 0.1,
            methods: Method::ALL.to_vec(),
            m_list: vec![2, 5, 10, 25, 50, 100],
            val_count: 100,
            train_count: 0,
            hecsa_hidden: 600,
            hecsa_epochs: 30,
            vae_latent: 20,
            vae_hidden: 600,
            vae_epochs: 60,
            lasso_val_iters: 1500,
            lasso_final_iters: 3000,
            lasso_tol: 1e-7,
        }
    }
}

impl ReconSettings {
    pub fn from_config(cfg: &Config) -> Result<Self, CliError> {
        let d = ReconSettings::default();
        let methods = match cfg.get("methods") {
            None => d.methods.clone(),
            Some(list) => {
                let mut parsed = list
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<Result<Vec<Method>, _>>()?;
                parsed.sort();
                parsed.dedup();
                parsed
            }
        };
        if methods.is_empty() {
            return Err(CliError::Config("methods: empty list".into()));
        }
        let mut m_list = cfg.usize_list_or("m_list", &d.m_list)?;
        m_list.sort_unstable();
        m_list.dedup();
        if m_list.is_empty() || m_list.contains(&0) {
            return Err(CliError::Config(
                "m_list: measurement counts must be positive".into(),
            ));
        }
        let sigma = cfg.f64_or("sigma", d.sigma)?;
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(CliError::Config(format!(
                "sigma: expected a non-negative noise level, got {sigma}"
            )));
        }
        Ok(Self {
            seed: cfg.u64_or("seed", d.seed)?,
            subset: cfg.usize_or("subset", d.subset)?,
            sigma,
            methods,
            m_list,
            val_count: cfg.usize_or("val_count", d.val_count)?,
            train_count: cfg.usize_or("train_count", d.train_count)?,
            hecsa_hidden: cfg.usize_or("hecsa_hidden", d.hecsa_hidden)?,
            hecsa_epochs: cfg.usize_or("hecsa_epochs", d.hecsa_epochs)?,
            vae_latent: cfg.usize_or("vae_latent", d.vae_latent)?,
            vae_hidden: cfg.usize_or("vae_hidden", d.vae_hidden)?,
            vae_epochs: cfg.usize_or("vae_epochs", d.vae_epochs)?,
            lasso_val_iters: cfg.usize_or("lasso_val_iters", d.lasso_val_iters)?,
            lasso_final_iters: cfg.usize_or("lasso_final_iters", d.lasso_final_iters)?,
            lasso_tol: cfg.f64_or("lasso_tol", d.lasso_tol)?,
        })
    }
}

/// Results plus the `#` header lines describing the run.
#[derive(Debug, Default)]
pub struct ReconOutcome {
    pub report: ReconReport,
    pub headers: Vec<String>,
}

impl ReconOutcome {
    /// Deterministic output order: by method, then measurement count.
    fn sort(&mut self) {
        self.report
            .summaries
            .sort_by(|a, b| (&a.method, a.m).cmp(&(&b.method, b.m)));
        self.report
            .rows
            .sort_by(|a, b| (&a.method, a.m, a.image_index).cmp(&(&b.method, b.m, b.image_index)));
    }
}

fn to_f64(t: &Tensor) -> TensorBase<f64> {
    TensorBase::new(
        t.shape().to_vec(),
        t.as_slice().iter().map(|&v| f64::from(v)).collect(),
    )
    .expect("same shape")
}

/// Runs the configured methods over the measurement grid, filling `outcome`
/// cell by cell so an abort still leaves every finished cell in place.
pub fn run_recon(
    train: &ImageDataset,
    test: &ImageDataset,
    s: &ReconSettings,
    outcome: &mut ReconOutcome,
) -> Result<(), CliError> {
    let dim = train.dim();
    if test.dim() != dim {
        return Err(CliError::Config(format!(
            "train images have {dim} features, test images {}",
            test.dim()
        )));
    }
    let test_x = test.subset(s.subset)?.images;
    let train_x = if s.train_count == 0 {
        train.images.clone()
    } else {
        train.subset(s.train_count)?.images
    };
    if s.val_count == 0 || s.val_count > train_x.shape()[0] {
        return Err(CliError::Config(format!(
            "val_count {} outside the training set of {}",
            s.val_count,
            train_x.shape()[0]
        )));
    }

    let methods_text = s
        .methods
        .iter()
        .map(Method::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let m_text = s
        .m_list
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",");
    outcome.headers = vec![
        "experiment=recon".to_string(),
        format!("seed={}", s.seed),
        format!("subset={}", s.subset),
        format!("sigma={}", s.sigma),
        format!("methods={methods_text}"),
        format!("m_list={m_text}"),
        format!("train_count={}", train_x.shape()[0]),
        format!("val_count={}", s.val_count),
        format!(
            "hecsa: hidden={} epochs={}",
            s.hecsa_hidden, s.hecsa_epochs
        ),
        format!(
            "vae: latent={} hidden={} epochs={} restarts=10 max_steps=200",
            s.vae_latent, s.vae_hidden, s.vae_epochs
        ),
        format!(
            "lasso: grid=1e-4..1e-1(7 log) val_iters={} final_iters={} tol={}",
            s.lasso_val_iters, s.lasso_final_iters, s.lasso_tol
        ),
    ];

    // The generative baseline is measurement-independent: one training run
    // serves every m.
    let vae = if s.methods.contains(&Method::Vae) {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(s.seed, tags::VAE));
        let mut model = VaeModel::init(dim, s.vae_hidden, s.vae_latent, &mut rng)?;
        train_vae(&mut model, &train_x, s.vae_epochs, 128, 1e-3, &mut rng)?;
        let secs = started.elapsed().as_secs_f64();
        outcome.headers.push(format!("vae_train_seconds={secs:.1}"));
        eprintln!("[recon] vae trained in {secs:.1}s");
        Some(model)
    } else {
        None
    };

    let test_x64 = to_f64(&test_x);
    let val_x64 = {
        let val = train_x.as_slice()[..s.val_count * dim]
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        TensorBase::new(vec![s.val_count, dim], val).expect("validation prefix")
    };

    for &m in &s.m_list {
        for method in &s.methods {
            let started = Instant::now();
            match method {
                Method::Hecsa => {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(sub_seed(s.seed, tags::HECSA + m as u64));
                    let mut model = HecsaModel::init(m, dim, s.hecsa_hidden, &mut rng)?;
                    let cfg = HecsaConfig {
                        epochs: s.hecsa_epochs,
                        sigma: s.sigma,
                        ..HecsaConfig::default()
                    };
                    train_hecsa(&mut model, &train_x, &cfg, &mut rng)?;
                    let mut noise =
                        ChaCha8Rng::seed_from_u64(sub_seed(s.seed, tags::NOISE_TEST + m as u64));
                    let y = model.measure(&test_x, s.sigma, &mut noise)?;
                    let x_hat = model.reconstruct(&y)?;
                    let errors = recon_error(&test_x, &x_hat)?;
                    outcome.report.add_batch(
                        "hecsa",
                        m,
                        &errors,
                        started.elapsed().as_secs_f64(),
                    );
                }
                Method::Lasso => {
                    // The convex baseline runs in f64: the solver iterates
                    // thousands of times and f32 drift would swamp tol.
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(sub_seed(s.seed, tags::OPERATOR + m as u64));
                    let op = MeasurementOperatorBase::<f64>::gaussian(m, dim, &mut rng)?;
                    let mut noise =
                        ChaCha8Rng::seed_from_u64(sub_seed(s.seed, tags::NOISE_VAL + m as u64));
                    let y_val = op.measure(&val_x64, s.sigma, &mut noise)?;
                    let (lambda, _, _) = select_lambda(
                        &op,
                        &y_val,
                        &val_x64,
                        &lasso_grid(),
                        s.lasso_val_iters,
                        s.lasso_tol,
                    )?;
                    outcome
                        .headers
                        .push(format!("lasso_lambda[m={m}]={lambda:e}"));
                    let mut noise =
                        ChaCha8Rng::seed_from_u64(sub_seed(s.seed, tags::NOISE_TEST + m as u64));
                    let y = op.measure(&test_x64, s.sigma, &mut noise)?;
                    let (x_hat, _) =
                        ista_lasso(&op, &y, lambda, s.lasso_final_iters, s.lasso_tol)?;
                    let errors = recon_error(&test_x64, &x_hat)?;
                    outcome.report.add_batch(
                        "lasso",
                        m,
                        &errors,
                        started.elapsed().as_secs_f64(),
                    );
                }
                Method::Vae => {
                    let model = vae.as_ref().expect("trained above");
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(sub_seed(s.seed, tags::OPERATOR + m as u64));
                    let op = MeasurementOperatorBase::<f32>::gaussian(m, dim, &mut rng)?;
                    let mut noise =
                        ChaCha8Rng::seed_from_u64(sub_seed(s.seed, tags::NOISE_TEST + m as u64));
                    let y = op.measure(&test_x, s.sigma, &mut noise)?;
                    let mut search =
                        ChaCha8Rng::seed_from_u64(sub_seed(s.seed, tags::VAE_SEARCH + m as u64));
                    let search_cfg = LatentSearchConfig::default();
                    let mut x_hat = vec![0.0f32; test_x.len()];
                    for i in 0..s.subset {
                        let y_row = Tensor::new(vec![m], y.row(i).to_vec())
                            .expect("row of measurements");
                        let (rec, _) =
                            vae_reconstruct(&model.decoder, &op, &y_row, &search_cfg, &mut search)?;
                        x_hat[i * dim..(i + 1) * dim].copy_from_slice(rec.as_slice());
                    }
                    let x_hat = Tensor::new(vec![s.subset, dim], x_hat).expect("sized above");
                    let errors = recon_error(&test_x, &x_hat)?;
                    outcome
                        .report
                        .add_batch("vae", m, &errors, started.elapsed().as_secs_f64());
                }
            }
            let cell = outcome
                .report
                .summaries
                .last()
                .expect("just appended");
            eprintln!(
                "[recon] {method} m={m}: mean_error={:.4} ({:.1}s)",
                cell.mean_error, cell.seconds
            );
        }
    }
    outcome.sort();
    Ok(())
}
