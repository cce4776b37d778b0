//! The unfolded decoder network.
//!
//! An L-layer network replays the accelerated analysis-l1 iteration on the
//! concatenated dual state v = (z¹; z²; u¹; u²) ∈ R^p, p = 2N+2m, with the
//! analysis operator W shared across layers as the only trainable parameter.
//! After the last layer an affine map reads the primal point out of the state
//! (x̂ = x₀ + μ⁻¹(Wᵀż¹ + Aᵀż²) at interpolation weight θ_L) and a norm clip
//! caps every output column at B_out.
//!
//! The forward pass never materializes the layer weight blocks; it applies
//! them through W, Wᵀ, A, Aᵀ products. A dense materialization lives in
//! [`dense`] for toy-size cross-checks. [`backward`] is the hand-derived
//! reverse-mode differential of the whole stack with respect to W.

pub mod dense;
mod train;

pub use train::{
    adam_step, metrics_csv_string, train, write_metrics_csv, EpochMetrics, TrainHyper,
    TrainOptions, TrainOutcome, TrainState,
};

use thiserror::Error;

use crate::linalg::{gemm, Mat};
use crate::operators::{
    soft_threshold_grad_scalar, soft_threshold_scalar, truncate_grad_scalar, truncate_scalar,
};
use crate::schedule::Schedule;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite values appeared in layer {layer}")]
    NonFinite { layer: usize },
    #[error("stale or mismatched forward cache: {0}")]
    StaleCache(String),
    #[error("invalid decoder configuration: {0}")]
    BadConfig(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
}

/// Decoder hyperparameters: the step-size schedule (which also carries μ and
/// the layer count), the output clip level and the constraint level ε.
#[derive(Debug, Clone)]
pub struct DecoderConfig {
    pub schedule: Schedule,
    pub b_out: f64,
    pub eps: f64,
}

impl DecoderConfig {
    pub fn new(schedule: Schedule, b_out: f64, eps: f64) -> Result<Self, NetError> {
        if !(b_out > 0.0) {
            return Err(NetError::BadConfig(format!(
                "output clip level must be positive, got {b_out}"
            )));
        }
        if !(eps >= 0.0) {
            return Err(NetError::BadConfig(format!(
                "constraint level must be nonnegative, got {eps}"
            )));
        }
        Ok(DecoderConfig {
            schedule,
            b_out,
            eps,
        })
    }

    pub fn layers(&self) -> usize {
        self.schedule.layers()
    }

    pub fn mu(&self) -> f64 {
        self.schedule.mu
    }
}

/// Dual state after a layer, one column per sample.
#[derive(Debug, Clone)]
pub struct DualState {
    pub z1: Mat,
    pub z2: Mat,
    pub u1: Mat,
    pub u2: Mat,
}

impl DualState {
    /// Frobenius norm of the stacked state (z¹; z²; u¹; u²).
    pub fn fro_norm(&self) -> f64 {
        let sq = |m: &Mat| m.as_slice().iter().map(|v| v * v).sum::<f64>();
        (sq(&self.z1) + sq(&self.z2) + sq(&self.u1) + sq(&self.u2)).sqrt()
    }

    /// Stack into a single p×s matrix, p = 2N+2m.
    pub fn stack(&self) -> Mat {
        let s = self.z1.cols();
        let p = 2 * (self.z1.rows() + self.z2.rows());
        let mut v = Mat::zeros(p, s);
        let mut offset = 0;
        for block in [&self.z1, &self.z2, &self.u1, &self.u2] {
            for r in 0..block.rows() {
                for c in 0..s {
                    v[(offset + r, c)] = block[(r, c)];
                }
            }
            offset += block.rows();
        }
        v
    }
}

/// Everything the backward pass needs, captured layer by layer.
#[derive(Debug)]
pub struct ForwardCache {
    /// Interpolated ż¹_k per layer, k = 0..L-1 (N×s).
    zdot1: Vec<Mat>,
    /// Primal point x_k per layer (n×s).
    x: Vec<Mat>,
    /// Truncation subgradient masks per layer (N×s, entries 0/1).
    mask1: Vec<Mat>,
    /// Soft-threshold subgradient masks per layer (m×s).
    mask2: Vec<Mat>,
    /// ż¹ at the output interpolation weight θ_L (N×s).
    zdot1_final: Mat,
    /// Output before clipping (n×s).
    xhat_pre: Mat,
    /// Column norms of `xhat_pre`.
    col_norms: Vec<f64>,
    /// Smallest distance of any pre-activation to its threshold.
    pub kink_margin: f64,
    /// Smallest distance of any output column norm to the clip level.
    pub clip_margin: f64,
    shape: (usize, usize, usize, usize),
    layers: usize,
    w_fingerprint: u64,
}

impl ForwardCache {
    pub fn layers(&self) -> usize {
        self.layers
    }
}

fn fingerprint(w: &Mat) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    h ^= w.rows() as u64;
    h = h.wrapping_mul(0x100_0000_01b3);
    h ^= w.cols() as u64;
    h = h.wrapping_mul(0x100_0000_01b3);
    for v in w.as_slice() {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// θ·z + (1−θ)·u.
fn interp(theta: f64, z: &Mat, u: &Mat) -> Mat {
    let mut out = z.scale(theta);
    out.axpy(1.0 - theta, u);
    out
}

struct ActOut {
    z: Mat,
    mask: Mat,
    margin: f64,
}

fn truncate_layer(p: &Mat, tau: f64) -> ActOut {
    let (r, c) = p.shape();
    let mut z = Mat::zeros(r, c);
    let mut mask = Mat::zeros(r, c);
    let mut margin = f64::INFINITY;
    for (i, &v) in p.as_slice().iter().enumerate() {
        z.as_mut_slice()[i] = truncate_scalar(v, tau);
        mask.as_mut_slice()[i] = truncate_grad_scalar(v, tau);
        margin = margin.min((v.abs() - tau).abs());
    }
    ActOut { z, mask, margin }
}

fn shrink_layer(p: &Mat, tau: f64) -> ActOut {
    let (r, c) = p.shape();
    let mut z = Mat::zeros(r, c);
    let mut mask = Mat::zeros(r, c);
    let mut margin = f64::INFINITY;
    for (i, &v) in p.as_slice().iter().enumerate() {
        z.as_mut_slice()[i] = soft_threshold_scalar(v, tau);
        mask.as_mut_slice()[i] = soft_threshold_grad_scalar(v, tau);
        margin = margin.min((v.abs() - tau).abs());
    }
    ActOut { z, mask, margin }
}

struct RunOutput {
    xhat: Mat,
    cache: Option<ForwardCache>,
    states: Option<Vec<DualState>>,
}

fn check_shapes(w: &Mat, y: &Mat, a: &Mat) -> Result<(), NetError> {
    if a.rows() != y.rows() {
        return Err(NetError::ShapeMismatch(format!(
            "A has {} rows but Y has {}",
            a.rows(),
            y.rows()
        )));
    }
    if w.cols() != a.cols() {
        return Err(NetError::ShapeMismatch(format!(
            "W has {} columns but A has {}",
            w.cols(),
            a.cols()
        )));
    }
    Ok(())
}

fn run_forward(
    w: &Mat,
    y: &Mat,
    cfg: &DecoderConfig,
    a: &Mat,
    want_cache: bool,
    want_states: bool,
) -> Result<RunOutput, NetError> {
    check_shapes(w, y, a)?;
    let sched = &cfg.schedule;
    let layers = sched.layers();
    let (m, s) = y.shape();
    let n = a.cols();
    let big_n = w.rows();
    let mu_inv = 1.0 / sched.mu;

    // The anchor is recomputed from Y on every call.
    let x0 = a.matmul_opts(true, y, false, 1.0);

    let mut z1 = Mat::zeros(big_n, s);
    let mut z2 = Mat::zeros(m, s);
    let mut u1 = Mat::zeros(big_n, s);
    let mut u2 = Mat::zeros(m, s);

    let mut cache_zdot1 = Vec::new();
    let mut cache_x = Vec::new();
    let mut cache_mask1 = Vec::new();
    let mut cache_mask2 = Vec::new();
    let mut states = Vec::new();
    let mut kink_margin = f64::INFINITY;

    for k in 0..layers {
        let theta = sched.theta[k];
        let beta1 = sched.t1[k] / theta;
        let beta2 = sched.t2[k] / theta;

        let zdot1 = interp(theta, &z1, &u1);
        let zdot2 = interp(theta, &z2, &u2);

        // x_k = x0 + mu^-1 (W^T zdot1 + A^T zdot2)
        let mut x = x0.clone();
        gemm(mu_inv, w, true, &zdot1, false, 1.0, &mut x);
        gemm(mu_inv, a, true, &zdot2, false, 1.0, &mut x);
        if !x.is_finite() {
            return Err(NetError::NonFinite { layer: k });
        }

        // p1 = zdot1 - beta1 W x
        let mut p1 = zdot1.clone();
        gemm(-beta1, w, false, &x, false, 1.0, &mut p1);
        // p2 = zdot2 + beta2 (Y - A x)
        let mut p2 = zdot2.clone();
        p2.axpy(beta2, y);
        gemm(-beta2, a, false, &x, false, 1.0, &mut p2);

        let act1 = truncate_layer(&p1, beta1);
        let act2 = shrink_layer(&p2, beta2 * cfg.eps);
        kink_margin = kink_margin.min(act1.margin).min(act2.margin);

        let mut u1_new = u1.scale(1.0 - theta);
        u1_new.axpy(theta, &act1.z);
        let mut u2_new = u2.scale(1.0 - theta);
        u2_new.axpy(theta, &act2.z);

        z1 = act1.z;
        z2 = act2.z;
        u1 = u1_new;
        u2 = u2_new;

        if want_cache {
            cache_zdot1.push(zdot1);
            cache_x.push(x);
            cache_mask1.push(act1.mask);
            cache_mask2.push(act2.mask);
        }
        if want_states {
            states.push(DualState {
                z1: z1.clone(),
                z2: z2.clone(),
                u1: u1.clone(),
                u2: u2.clone(),
            });
        }
    }

    // Affine read-out at theta_L, then the norm clip.
    let theta_l = sched.theta[layers];
    let zdot1_final = interp(theta_l, &z1, &u1);
    let zdot2_final = interp(theta_l, &z2, &u2);
    let mut xhat_pre = x0;
    gemm(mu_inv, w, true, &zdot1_final, false, 1.0, &mut xhat_pre);
    gemm(mu_inv, a, true, &zdot2_final, false, 1.0, &mut xhat_pre);
    if !xhat_pre.is_finite() {
        return Err(NetError::NonFinite { layer: layers });
    }

    let mut xhat = xhat_pre.clone();
    let mut col_norms = Vec::with_capacity(s);
    let mut clip_margin = f64::INFINITY;
    for j in 0..s {
        let norm = xhat_pre.col_norm_sq(j).sqrt();
        col_norms.push(norm);
        clip_margin = clip_margin.min((norm - cfg.b_out).abs());
        if norm > cfg.b_out {
            let scale = cfg.b_out / norm;
            for r in 0..n {
                xhat[(r, j)] *= scale;
            }
        }
    }

    let cache = want_cache.then(|| ForwardCache {
        zdot1: cache_zdot1,
        x: cache_x,
        mask1: cache_mask1,
        mask2: cache_mask2,
        zdot1_final,
        xhat_pre,
        col_norms,
        kink_margin,
        clip_margin,
        shape: (n, m, big_n, s),
        layers,
        w_fingerprint: fingerprint(w),
    });
    Ok(RunOutput {
        xhat,
        cache,
        states: want_states.then_some(states),
    })
}

/// Decode measurements without keeping backward state.
pub fn decode(w: &Mat, y: &Mat, cfg: &DecoderConfig, a: &Mat) -> Result<Mat, NetError> {
    Ok(run_forward(w, y, cfg, a, false, false)?.xhat)
}

/// Decode and capture the per-layer state the backward pass consumes.
pub fn forward(
    w: &Mat,
    y: &Mat,
    cfg: &DecoderConfig,
    a: &Mat,
) -> Result<(Mat, ForwardCache), NetError> {
    let out = run_forward(w, y, cfg, a, true, false)?;
    Ok((out.xhat, out.cache.expect("cache requested")))
}

/// Decode and return the dual state after every layer (for the norm-growth
/// and perturbation checks, which bound the intermediate states).
pub fn forward_states(
    w: &Mat,
    y: &Mat,
    cfg: &DecoderConfig,
    a: &Mat,
) -> Result<(Mat, Vec<DualState>), NetError> {
    let out = run_forward(w, y, cfg, a, false, true)?;
    Ok((out.xhat, out.states.expect("states requested")))
}

fn hadamard_in_place(dst: &mut Mat, mask: &Mat) {
    debug_assert_eq!(dst.shape(), mask.shape());
    for (d, &m) in dst.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        *d *= m;
    }
}

/// Gradient of ⟨grad_xhat, decode(W)⟩ with respect to W, replayed from a
/// matching forward cache.
///
/// W enters each layer through the pre-activation products (both directly and
/// via the primal point) and through the output map; the clip stage
/// contributes (B_out/‖x‖)(I − xxᵀ/‖x‖²) on clipped columns and the identity
/// elsewhere.
pub fn backward(
    cache: &ForwardCache,
    grad_xhat: &Mat,
    w: &Mat,
    a: &Mat,
    cfg: &DecoderConfig,
) -> Result<Mat, NetError> {
    let (n, m, big_n, s) = cache.shape;
    if grad_xhat.shape() != (n, s) {
        return Err(NetError::ShapeMismatch(format!(
            "cotangent shape {:?}, expected {:?}",
            grad_xhat.shape(),
            (n, s)
        )));
    }
    if w.shape() != (big_n, n) || a.shape() != (m, n) {
        return Err(NetError::StaleCache(
            "operator shapes do not match the cached run".into(),
        ));
    }
    if cache.w_fingerprint != fingerprint(w) {
        return Err(NetError::StaleCache(
            "W changed since the forward pass".into(),
        ));
    }
    if cache.layers != cfg.layers() {
        return Err(NetError::StaleCache(
            "layer count does not match the cached run".into(),
        ));
    }
    let sched = &cfg.schedule;
    let layers = cache.layers;
    let mu_inv = 1.0 / sched.mu;

    // Clip stage.
    let mut xbar = grad_xhat.clone();
    for j in 0..s {
        let norm = cache.col_norms[j];
        if norm > cfg.b_out {
            let scale = cfg.b_out / norm;
            let mut dot = 0.0;
            for r in 0..n {
                dot += cache.xhat_pre[(r, j)] * grad_xhat[(r, j)];
            }
            let coef = dot / (norm * norm);
            for r in 0..n {
                xbar[(r, j)] = scale * (grad_xhat[(r, j)] - cache.xhat_pre[(r, j)] * coef);
            }
        }
    }

    let mut wbar = Mat::zeros(big_n, n);

    // Read-out stage: xhat_pre = x0 + mu^-1 (W^T zdot1_final + A^T zdot2_final).
    gemm(mu_inv, &cache.zdot1_final, false, &xbar, true, 1.0, &mut wbar);
    let zdot1bar_out = w.matmul_opts(false, &xbar, false, mu_inv);
    let zdot2bar_out = a.matmul_opts(false, &xbar, false, mu_inv);

    let theta_l = sched.theta[layers];
    let mut z1bar = zdot1bar_out.scale(theta_l);
    let mut u1bar = zdot1bar_out.scale(1.0 - theta_l);
    let mut z2bar = zdot2bar_out.scale(theta_l);
    let mut u2bar = zdot2bar_out.scale(1.0 - theta_l);

    for k in (0..layers).rev() {
        let theta = sched.theta[k];
        let beta1 = sched.t1[k] / theta;
        let beta2 = sched.t2[k] / theta;

        // u_{k+1} = (1-theta) u_k + theta z_{k+1}
        z1bar.axpy(theta, &u1bar);
        u1bar.scale_in_place(1.0 - theta);
        z2bar.axpy(theta, &u2bar);
        u2bar.scale_in_place(1.0 - theta);

        // Activation subgradients turn z-cotangents into pre-activation ones.
        hadamard_in_place(&mut z1bar, &cache.mask1[k]);
        hadamard_in_place(&mut z2bar, &cache.mask2[k]);
        let p1bar = z1bar;
        let p2bar = z2bar;

        // p1 = zdot1 - beta1 W x ; p2 = zdot2 + beta2 (Y - A x)
        gemm(-beta1, &p1bar, false, &cache.x[k], true, 1.0, &mut wbar);
        let mut xkbar = w.matmul_opts(true, &p1bar, false, -beta1);
        gemm(-beta2, a, true, &p2bar, false, 1.0, &mut xkbar);
        let mut zdot1bar = p1bar;
        let mut zdot2bar = p2bar;

        // x = x0 + mu^-1 (W^T zdot1 + A^T zdot2)
        gemm(mu_inv, &cache.zdot1[k], false, &xkbar, true, 1.0, &mut wbar);
        gemm(mu_inv, w, false, &xkbar, false, 1.0, &mut zdot1bar);
        gemm(mu_inv, a, false, &xkbar, false, 1.0, &mut zdot2bar);

        // zdot = theta z_k + (1-theta) u_k
        z1bar = zdot1bar.scale(theta);
        u1bar.axpy(1.0 - theta, &zdot1bar);
        z2bar = zdot2bar.scale(theta);
        u2bar.axpy(1.0 - theta, &zdot2bar);
    }

    Ok(wbar)
}

/// Mean squared error (1/s)Σ_j ‖x̂_j − x_j‖₂² and its gradient (2/s)(X̂ − X).
pub fn mse_loss(xhat: &Mat, x: &Mat) -> Result<(f64, Mat), NetError> {
    if xhat.shape() != x.shape() {
        return Err(NetError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            xhat.shape(),
            x.shape()
        )));
    }
    let s = x.cols() as f64;
    let diff = xhat.sub(x);
    let loss = diff.as_slice().iter().map(|v| v * v).sum::<f64>() / s;
    Ok((loss, diff.scale(2.0 / s)))
}

/// Empirical generalization error |test − train|.
pub fn ege(train_mse: f64, test_mse: f64) -> f64 {
    (test_mse - train_mse).abs()
}
