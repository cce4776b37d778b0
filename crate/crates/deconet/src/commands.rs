//! Implementations behind the CLI subcommands. Each command is a pure
//! function of (config, paths, flags); the binary is a thin argument parser
//! over these. Output files are written atomically (temp + rename) and carry
//! the config hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acf;
use crate::bounds::{self, BoundInputs, BoundReport, ScalingTemplate};
use crate::config::{ConfigError, RunConfig};
use crate::data::{self, DataError, Dataset};
use crate::linalg::{self, LinalgError, Mat};
use crate::net::{self, DecoderConfig, NetError, TrainHyper, TrainOptions};
use crate::operators::{self, OperatorError};
use crate::schedule::{Schedule, ScheduleError};
use crate::seed;
use crate::verify::{self, VerifyOptions, VerifyReport};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("output {0} already exists (use --force to overwrite)")]
    WouldOverwrite(PathBuf),
    #[error("dataset not found at {0}")]
    MissingDataset(PathBuf),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Acf(#[from] acf::AcfError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("bounds: {0}")]
    Bounds(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("verify: {0}")]
    Verify(String),
}

fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<(), CommandError> {
    let tmp = path.with_extension("tmp-partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_dmat_atomic(path: &Path, m: &Mat) -> Result<(), CommandError> {
    let tmp = path.with_extension("tmp-partial");
    linalg::write_dmat(&tmp, m)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), CommandError> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| CommandError::InvalidArgument(e.to_string()))?;
    write_bytes_atomic(path, json.as_bytes())
}

/// Load the dataset written by [`cmd_datagen`] together with its measurement
/// matrix.
pub fn load_dataset_dir(dir: &Path) -> Result<(Dataset, Mat), CommandError> {
    if !dir.join("meta.json").exists() {
        return Err(CommandError::MissingDataset(dir.to_path_buf()));
    }
    let (ds, a_path) = data::load_dataset(dir)?;
    let full = if a_path.is_absolute() {
        a_path
    } else {
        dir.join(a_path)
    };
    let a = linalg::read_dmat(full)?;
    Ok((ds, a))
}

#[derive(Debug, Serialize)]
pub struct DatagenSummary {
    pub dir: PathBuf,
    pub n: usize,
    pub m: usize,
    pub samples: usize,
    pub eps: f64,
    pub b_in: f64,
    pub b_out: f64,
    pub config_hash: String,
}

/// Generate the measurement matrix and dataset for a config and persist them
/// as A.dmat, X.dmat, Y.dmat, meta.json and run.json.
pub fn cmd_datagen(cfg: &RunConfig, out: &Path, force: bool) -> Result<DatagenSummary, CommandError> {
    cfg.validate()?;
    if out.join("meta.json").exists() && !force {
        return Err(CommandError::WouldOverwrite(out.to_path_buf()));
    }
    fs::create_dir_all(out)?;
    let root_seed = cfg.data.seed;
    let a = linalg::gaussian_measurement(
        cfg.problem.m,
        cfg.problem.n,
        seed::sub_seed(root_seed, "measurement"),
    )?;

    let ds = match cfg.data.kind.as_str() {
        "mnist" => {
            let path = cfg
                .data
                .idx_path
                .as_ref()
                .ok_or_else(|| CommandError::InvalidArgument("missing data.idx_path".into()))?;
            let mut images = data::load_idx(path)?;
            if cfg.data.downsample {
                let side = (images.rows() as f64).sqrt() as usize;
                images = data::downsample_2x2(&images, side)?;
            }
            if images.rows() != cfg.problem.n {
                return Err(CommandError::InvalidArgument(format!(
                    "image dimension {} does not match problem.n = {}",
                    images.rows(),
                    cfg.problem.n
                )));
            }
            if images.cols() < cfg.data.samples {
                return Err(CommandError::InvalidArgument(format!(
                    "requested {} samples but the file holds {}",
                    cfg.data.samples,
                    images.cols()
                )));
            }
            let x = images.col_range(0, cfg.data.samples);
            let (y, eps, eps_per_sample) = data::measure(
                &x,
                &a,
                cfg.data.noise_std,
                seed::sub_seed(root_seed, "noise"),
            )?;
            let all: Vec<usize> = (0..x.cols()).collect();
            let (b_in, b_out) = data::estimate_bounds_constants(&x, &y, &all)?;
            Dataset {
                x,
                y,
                eps,
                eps_per_sample,
                noise_std: cfg.data.noise_std,
                seed: root_seed,
                b_in,
                b_out,
            }
        }
        _ => data::build_synthetic(&a, cfg.problem.n, cfg.data.samples, cfg.data.noise_std, root_seed)?,
    };

    write_dmat_atomic(&out.join("A.dmat"), &a)?;
    data::save_dataset(out, &ds, "A.dmat")?;
    let hash = cfg.hash();
    write_json_atomic(
        &out.join("run.json"),
        &serde_json::json!({ "config_hash": hash, "config": cfg }),
    )?;
    Ok(DatagenSummary {
        dir: out.to_path_buf(),
        n: cfg.problem.n,
        m: cfg.problem.m,
        samples: cfg.data.samples,
        eps: ds.eps,
        b_in: ds.b_in,
        b_out: ds.b_out,
        config_hash: hash,
    })
}

/// Checkpoint sidecar for a trained operator.
#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    pub best_ege: f64,
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub best_epoch: usize,
    pub best_ege: f64,
    pub final_train_mse: f64,
    pub final_test_mse: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub config_hash: String,
}

/// Split the dataset, train the decoder and write metrics.csv plus the best
/// checkpoint (W.dmat + W.json).
pub fn cmd_train(
    cfg: &RunConfig,
    dataset_dir: &Path,
    out: &Path,
    force: bool,
) -> Result<TrainSummary, CommandError> {
    cfg.validate()?;
    let (ds, a) = load_dataset_dir(dataset_dir)?;
    let metrics_path = out.join("metrics.csv");
    if metrics_path.exists() && !force {
        return Err(CommandError::WouldOverwrite(metrics_path));
    }
    fs::create_dir_all(out)?;

    let split = data::split(ds.x.cols(), cfg.data.train_frac)?;
    let (_b_in, b_out) = data::estimate_bounds_constants(&ds.x, &ds.y, &split.train)?;
    let x_train = ds.x.gather_cols(&split.train);
    let y_train = ds.y.gather_cols(&split.train);
    let x_test = ds.x.gather_cols(&split.test);
    let y_test = ds.y.gather_cols(&split.test);

    let sched = Schedule::geometric(
        cfg.problem.layers,
        cfg.schedule.mu,
        cfg.schedule.alpha,
        cfg.schedule.beta,
        cfg.schedule.l_tilde,
    )?;
    let dec_cfg = DecoderConfig::new(sched, b_out, ds.eps)?;
    let w0 = operators::init_learnable(
        cfg.problem.n,
        cfg.problem.redundancy,
        cfg.init_scheme(),
        seed::sub_seed(cfg.data.seed, "init"),
    )?
    .w;
    let opts = TrainOptions {
        hyper: TrainHyper {
            lr: cfg.train.lr,
            ..TrainHyper::default()
        },
        batch: cfg.train.batch,
        patience: cfg.train.patience,
        max_epochs: cfg.train.max_epochs,
        project_lambda: (cfg.train.lambda_cap > 0.0).then_some(cfg.train.lambda_cap),
        seed: cfg.data.seed,
    };

    let outcome = net::train(&a, &x_train, &y_train, &x_test, &y_test, w0, &dec_cfg, &opts)?;

    let csv = net::metrics_csv_string(&outcome.metrics);
    write_bytes_atomic(&metrics_path, csv.as_bytes())?;
    let ckpt = out.join("W.dmat");
    write_dmat_atomic(&ckpt, &outcome.w)?;
    let hash = cfg.hash();
    write_json_atomic(
        &out.join("W.json"),
        &CheckpointMeta {
            epoch: outcome.best_epoch,
            seed: cfg.data.seed,
            config_hash: hash.clone(),
            best_ege: outcome.best_ege,
        },
    )?;

    let last = outcome.metrics.last().expect("at least one epoch ran");
    Ok(TrainSummary {
        metrics_path,
        checkpoint_path: ckpt,
        best_epoch: outcome.best_epoch,
        best_ege: outcome.best_ege,
        final_train_mse: last.train_mse,
        final_test_mse: last.test_mse,
        epochs_run: outcome.metrics.len(),
        stopped_early: outcome.stopped_early,
        config_hash: hash,
    })
}

/// Which analysis operator the solver baseline uses.
#[derive(Debug, Clone)]
pub enum AcfOperatorChoice {
    Haar,
    Tv,
    File(PathBuf),
}

impl AcfOperatorChoice {
    pub fn parse(s: &str) -> Self {
        match s {
            "haar" => AcfOperatorChoice::Haar,
            "tv" => AcfOperatorChoice::Tv,
            other => AcfOperatorChoice::File(PathBuf::from(other)),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct AcfSummary {
    pub operator: String,
    pub iters: usize,
    pub test_mse: f64,
    /// Smoothed objective per iteration on the first test instance.
    pub objective_trace: Vec<f64>,
    pub residual_norm: f64,
    pub config_hash: String,
}

/// Run the fixed-operator solver over the test split and report the mean
/// squared reconstruction error.
pub fn cmd_acf(
    cfg: &RunConfig,
    dataset_dir: &Path,
    operator: AcfOperatorChoice,
    iters: usize,
    out: Option<&Path>,
) -> Result<AcfSummary, CommandError> {
    cfg.validate()?;
    if iters == 0 {
        return Err(CommandError::InvalidArgument(
            "iteration count must be at least 1".into(),
        ));
    }
    let (ds, a) = load_dataset_dir(dataset_dir)?;
    let n = a.cols();
    let (w, name) = match operator {
        AcfOperatorChoice::Haar => (operators::haar_redundant(n)?.w, "haar".to_string()),
        AcfOperatorChoice::Tv => (operators::finite_difference(n)?.w, "tv".to_string()),
        AcfOperatorChoice::File(p) => {
            let op = operators::load_operator(&p)?;
            (op.w, p.display().to_string())
        }
    };
    let split = data::split(ds.x.cols(), cfg.data.train_frac)?;
    let x_test = ds.x.gather_cols(&split.test);
    let y_test = ds.y.gather_cols(&split.test);

    let sched = Schedule::recursion(iters, cfg.schedule.mu, 1.0, 1.0)?;
    let mse = acf::baseline_mse(&a, &w, &x_test, &y_test, cfg.schedule.mu, ds.eps, &sched, iters)?;

    // Objective trace of the first test instance, for convergence inspection.
    let prob = acf::AcfProblem::new(&a, &w, y_test.col(0), cfg.schedule.mu, ds.eps)?;
    let res = acf::acf_solve(&prob, &sched, iters)?;

    let summary = AcfSummary {
        operator: name,
        iters,
        test_mse: mse,
        objective_trace: res.objective_trace,
        residual_norm: res.residual_norm,
        config_hash: cfg.hash(),
    };
    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        write_json_atomic(path, &summary)?;
    }
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct BoundsSummary {
    pub report: BoundReport,
    pub report_path: Option<PathBuf>,
    pub sweep_path: Option<PathBuf>,
}

/// Grid specification for the scaling sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub redundancies: Vec<usize>,
    pub layer_counts: Vec<usize>,
    pub sample_counts: Vec<usize>,
}

/// Evaluate every bound quantity for a configuration. Λ comes from a trained
/// checkpoint when given, otherwise from the freshly initialized operator.
pub fn cmd_bounds(
    cfg: &RunConfig,
    dataset_dir: &Path,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
    sweep: Option<&SweepSpec>,
) -> Result<BoundsSummary, CommandError> {
    cfg.validate()?;
    let (ds, a) = load_dataset_dir(dataset_dir)?;
    let split = data::split(ds.x.cols(), cfg.data.train_frac)?;
    let (b_in, b_out) = data::estimate_bounds_constants(&ds.x, &ds.y, &split.train)?;
    let y_train = ds.y.gather_cols(&split.train);

    let w = match checkpoint {
        Some(p) => linalg::read_dmat(p)?,
        None => {
            operators::init_learnable(
                cfg.problem.n,
                cfg.problem.redundancy,
                cfg.init_scheme(),
                seed::sub_seed(cfg.data.seed, "init"),
            )?
            .w
        }
    };
    let lambda = linalg::spectral_norm_default(&w)?.value;
    let a_norm = linalg::spectral_norm_default(&a)?.value;
    let sched = Schedule::geometric(
        cfg.problem.layers,
        cfg.schedule.mu,
        cfg.schedule.alpha,
        cfg.schedule.beta,
        cfg.schedule.l_tilde,
    )?;
    let bi = BoundInputs {
        lambda,
        a_norm,
        sched,
        big_n: w.rows(),
        n: cfg.problem.n,
        m: cfg.problem.m,
        s: split.train.len(),
        y_fro: linalg::frobenius_norm(&y_train),
        b_in,
        b_out,
        delta: cfg.bounds.delta,
    };
    let report = bounds::bound_report(&bi).map_err(|e| CommandError::Bounds(e.to_string()))?;

    let mut report_path = None;
    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        write_json_atomic(path, &report)?;
        report_path = Some(path.to_path_buf());
    }

    let mut sweep_path = None;
    if let Some(spec) = sweep {
        let tpl = ScalingTemplate {
            lambda,
            a_norm,
            mu: cfg.schedule.mu,
            alpha: cfg.schedule.alpha,
            beta: cfg.schedule.beta,
            l_tilde: cfg.schedule.l_tilde,
            n: cfg.problem.n,
            m: cfg.problem.m,
            y_fro_per_sqrt_s: bi.y_fro / (bi.s as f64).sqrt(),
            b_out: b_out.max(b_in),
            delta: cfg.bounds.delta,
        };
        let mut grid = Vec::new();
        for &nn in &spec.redundancies {
            for &l in &spec.layer_counts {
                for &s in &spec.sample_counts {
                    grid.push((nn, l, s));
                }
            }
        }
        let points =
            bounds::scaling_curve(&tpl, &grid).map_err(|e| CommandError::Bounds(e.to_string()))?;
        let mut csv = String::from("N,L,s,bound,sqrt_NL_over_s\n");
        for p in &points {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                p.big_n, p.layers, p.s, p.bound, p.sqrt_nl_over_s
            ));
        }
        let path = out
            .map(|p| p.with_file_name("sweep.csv"))
            .unwrap_or_else(|| PathBuf::from("sweep.csv"));
        write_bytes_atomic(&path, csv.as_bytes())?;
        sweep_path = Some(path);
    }

    Ok(BoundsSummary {
        report,
        report_path,
        sweep_path,
    })
}

/// Run the verification families; `Err` only on invalid options, the report
/// carries pass/fail.
pub fn cmd_verify(opts: &VerifyOptions, out: Option<&Path>) -> Result<VerifyReport, CommandError> {
    let report = verify::run_all(opts).map_err(CommandError::Verify)?;
    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        write_json_atomic(path, &report)?;
    }
    Ok(report)
}
