//! Adam training of the analysis operator with early stopping on the
//! empirical generalization error.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::linalg::{frobenius_norm, project_spectral_ball, spectral_norm_default, Mat};
use crate::net::{backward, decode, ege, forward, mse_loss, DecoderConfig, NetError};
use crate::seed;

/// Adam internals. Defaults: lr 1e-4, β₁ 0.9, β₂ 0.999, ε 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct TrainHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
        }
    }
}

/// Optimizer state: the operator, its moment estimates and the early-stopping
/// bookkeeping. The trainer is the single writer.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub w: Mat,
    pub m: Mat,
    pub v: Mat,
    pub step: usize,
    pub best_ege: f64,
    pub epochs_since_improvement: usize,
}

impl TrainState {
    pub fn new(w: Mat) -> Self {
        let (r, c) = w.shape();
        TrainState {
            w,
            m: Mat::zeros(r, c),
            v: Mat::zeros(r, c),
            step: 0,
            best_ege: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }
}

/// One bias-corrected Adam update. Pure: returns the advanced state.
pub fn adam_step(ts: &TrainState, grad: &Mat, h: &TrainHyper) -> TrainState {
    assert_eq!(ts.w.shape(), grad.shape(), "gradient shape mismatch");
    let step = ts.step + 1;
    let mut out = ts.clone();
    out.step = step;
    let bc1 = 1.0 - h.beta1.powi(step as i32);
    let bc2 = 1.0 - h.beta2.powi(step as i32);
    let (m_s, v_s, w_s, g_s) = (
        out.m.as_mut_slice(),
        out.v.as_mut_slice(),
        out.w.as_mut_slice(),
        grad.as_slice(),
    );
    for i in 0..g_s.len() {
        m_s[i] = h.beta1 * m_s[i] + (1.0 - h.beta1) * g_s[i];
        v_s[i] = h.beta2 * v_s[i] + (1.0 - h.beta2) * g_s[i] * g_s[i];
        let m_hat = m_s[i] / bc1;
        let v_hat = v_s[i] / bc2;
        w_s[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps_adam);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub hyper: TrainHyper,
    pub batch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Spectral projection of W after each step; off by default (training is
    /// unconstrained, the cap is assumed only by the theory checks).
    pub project_lambda: Option<f64>,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            hyper: TrainHyper::default(),
            batch: 128,
            patience: 10,
            max_epochs: 200,
            project_lambda: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub ege: f64,
    pub grad_norm: f64,
    pub w_spectral: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Snapshot with the best (lowest) empirical generalization error.
    pub w: Mat,
    pub best_epoch: usize,
    pub best_ege: f64,
    pub metrics: Vec<EpochMetrics>,
    pub stopped_early: bool,
}

fn eval_mse(w: &Mat, x: &Mat, y: &Mat, cfg: &DecoderConfig, a: &Mat) -> Result<f64, NetError> {
    let xhat = decode(w, y, cfg, a)?;
    Ok(mse_loss(&xhat, x)?.0)
}

/// Epochs of seeded shuffled mini-batches; after each epoch the full train
/// and test errors and their gap are recorded. Stops once the gap has not
/// improved for `patience` epochs and returns the best-gap snapshot.
pub fn train(
    a: &Mat,
    x_train: &Mat,
    y_train: &Mat,
    x_test: &Mat,
    y_test: &Mat,
    w0: Mat,
    cfg: &DecoderConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome, NetError> {
    if x_train.cols() != y_train.cols() || x_test.cols() != y_test.cols() {
        return Err(NetError::ShapeMismatch(
            "paired signal/measurement column counts differ".into(),
        ));
    }
    if opts.batch == 0 || opts.max_epochs == 0 {
        return Err(NetError::BadConfig(
            "batch size and epoch budget must be positive".into(),
        ));
    }
    let s_train = x_train.cols();
    let shuffle_seed = seed::sub_seed(opts.seed, "shuffle");

    let mut state = TrainState::new(w0);
    let mut best_w = state.w.clone();
    let mut best_epoch = 0;
    let mut metrics = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=opts.max_epochs {
        let mut order: Vec<usize> = (0..s_train).collect();
        let mut rng = seed::rng(shuffle_seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut grad_norm_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch) {
            let yb = y_train.gather_cols(chunk);
            let xb = x_train.gather_cols(chunk);
            let (xhat, cache) = forward(&state.w, &yb, cfg, a).map_err(|e| match e {
                NetError::NonFinite { layer } => NetError::Diverged {
                    epoch,
                    detail: format!("non-finite forward state in layer {layer}"),
                },
                other => other,
            })?;
            let (loss, gbar) = mse_loss(&xhat, &xb)?;
            if !loss.is_finite() {
                return Err(NetError::Diverged {
                    epoch,
                    detail: format!("non-finite batch loss {loss}"),
                });
            }
            let grad = backward(&cache, &gbar, &state.w, a, cfg)?;
            grad_norm_sum += frobenius_norm(&grad);
            batches += 1;
            state = adam_step(&state, &grad, &opts.hyper);
            if let Some(cap) = opts.project_lambda {
                state.w = project_spectral_ball(&state.w, cap)
                    .map_err(|e| NetError::BadConfig(e.to_string()))?;
            }
        }

        let train_mse = eval_mse(&state.w, x_train, y_train, cfg, a)?;
        let test_mse = eval_mse(&state.w, x_test, y_test, cfg, a)?;
        if !train_mse.is_finite() || !test_mse.is_finite() {
            return Err(NetError::Diverged {
                epoch,
                detail: "non-finite epoch metrics".into(),
            });
        }
        let gap = ege(train_mse, test_mse);
        let w_spectral = spectral_norm_default(&state.w)
            .map(|e| e.value)
            .unwrap_or(f64::NAN);
        metrics.push(EpochMetrics {
            epoch,
            train_mse,
            test_mse,
            ege: gap,
            grad_norm: grad_norm_sum / batches.max(1) as f64,
            w_spectral,
        });

        if gap < state.best_ege {
            state.best_ege = gap;
            state.epochs_since_improvement = 0;
            best_w = state.w.clone();
            best_epoch = epoch;
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= opts.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        w: best_w,
        best_epoch,
        best_ege: state.best_ege,
        metrics,
        stopped_early,
    })
}

/// Write per-epoch metrics as CSV with the fixed header
/// `epoch,train_mse,test_mse,ege,grad_norm,w_spectral`.
pub fn write_metrics_csv<P: AsRef<Path>>(path: P, metrics: &[EpochMetrics]) -> std::io::Result<()> {
    let mut out = String::from("epoch,train_mse,test_mse,ege,grad_norm,w_spectral\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch, m.train_mse, m.test_mse, m.ege, m.grad_norm, m.w_spectral
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())
}

/// Render metrics rows to the exact CSV bytes (shared with the writer so
/// determinism checks can compare in memory).
pub fn metrics_csv_string(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_mse,test_mse,ege,grad_norm,w_spectral\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch, m.train_mse, m.test_mse, m.ege, m.grad_norm, m.w_spectral
        ));
    }
    out
}
