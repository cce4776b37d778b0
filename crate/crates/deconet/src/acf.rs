//! Accelerated first-order solver for the smoothed analysis-l1 problem
//!
//!   min ‖Wx‖₁ + (μ/2)‖x − x₀‖₂²  subject to the measurement constraint,
//!
//! used standalone with fixed analysis operators and as the iteration that
//! the unfolded decoder network replays layer by layer.
//!
//! Each iteration interpolates the dual pair (z, u), takes the primal
//! x_k = x₀ + μ⁻¹(Wᵀż¹ + Aᵀż²), steps the duals through truncation and
//! soft thresholding, and averages them back into u. The stored dual signs
//! follow the unfolded-layer convention: the first step from the zero state
//! yields z¹ = T(−t₀¹Wx₀, t₀¹) and z² = S(t₀²(y − Ax₀), t₀²ε).

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{matvec, vec_norm, Mat};
use crate::operators::{soft_threshold_scalar, truncate_scalar};
use crate::schedule::Schedule;

#[derive(Debug, Error)]
pub enum AcfError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("schedule provides {have} iterations, need {need}")]
    ScheduleTooShort { have: usize, need: usize },
    #[error("non-finite iterate at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("iteration count must be at least 1")]
    ZeroIterations,
}

/// One instance of the smoothed problem. `a` is the normalized measurement
/// matrix (m×n), `w` the analysis operator (N×n).
#[derive(Debug, Clone)]
pub struct AcfProblem<'a> {
    pub a: &'a Mat,
    pub w: &'a Mat,
    pub y: Vec<f64>,
    pub x0: Vec<f64>,
    pub mu: f64,
    pub eps: f64,
}

impl<'a> AcfProblem<'a> {
    /// Standard anchor x₀ = Aᵀy.
    pub fn new(a: &'a Mat, w: &'a Mat, y: Vec<f64>, mu: f64, eps: f64) -> Result<Self, AcfError> {
        if y.len() != a.rows() {
            return Err(AcfError::DimensionMismatch(format!(
                "y has {} entries, A has {} rows",
                y.len(),
                a.rows()
            )));
        }
        if w.cols() != a.cols() {
            return Err(AcfError::DimensionMismatch(format!(
                "W has {} columns, A has {}",
                w.cols(),
                a.cols()
            )));
        }
        assert!(mu > 1.0, "smoothing parameter must exceed 1");
        assert!(eps >= 0.0);
        let x0 = matvec(a, true, &y);
        Ok(AcfProblem { a, w, y, x0, mu, eps })
    }

    /// Override the anchor.
    pub fn with_x0(mut self, x0: Vec<f64>) -> Result<Self, AcfError> {
        if x0.len() != self.a.cols() {
            return Err(AcfError::DimensionMismatch(format!(
                "x0 has {} entries, expected {}",
                x0.len(),
                self.a.cols()
            )));
        }
        self.x0 = x0;
        Ok(self)
    }

    /// Smoothed objective ‖Wx‖₁ + (μ/2)‖x − x₀‖₂².
    pub fn objective(&self, x: &[f64]) -> f64 {
        let wx = matvec(self.w, false, x);
        let l1: f64 = wx.iter().map(|v| v.abs()).sum();
        let sq: f64 = x
            .iter()
            .zip(&self.x0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        l1 + 0.5 * self.mu * sq
    }
}

/// Iterate state. At k = 0 all dual blocks are zero and θ = 1.
#[derive(Debug, Clone)]
pub struct AcfState {
    pub x: Vec<f64>,
    pub z1: Vec<f64>,
    pub u1: Vec<f64>,
    pub z2: Vec<f64>,
    pub u2: Vec<f64>,
    pub theta: f64,
    pub k: usize,
}

impl AcfState {
    pub fn zero(prob: &AcfProblem) -> Self {
        AcfState {
            x: vec![0.0; prob.a.cols()],
            z1: vec![0.0; prob.w.rows()],
            u1: vec![0.0; prob.w.rows()],
            z2: vec![0.0; prob.a.rows()],
            u2: vec![0.0; prob.a.rows()],
            theta: 1.0,
            k: 0,
        }
    }
}

fn interp(theta: f64, z: &[f64], u: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(u)
        .map(|(zi, ui)| theta * zi + (1.0 - theta) * ui)
        .collect()
}

/// The primal read-out x = x₀ + μ⁻¹(Wᵀż¹ + Aᵀż²) at interpolation weight
/// `theta`.
pub fn primal_at(prob: &AcfProblem, state: &AcfState, theta: f64) -> Vec<f64> {
    let zd1 = interp(theta, &state.z1, &state.u1);
    let zd2 = interp(theta, &state.z2, &state.u2);
    let wt = matvec(prob.w, true, &zd1);
    let at = matvec(prob.a, true, &zd2);
    prob.x0
        .iter()
        .zip(wt.iter().zip(&at))
        .map(|(x0, (w, a))| x0 + (w + a) / prob.mu)
        .collect()
}

/// One iteration with step sizes (t1, t2) at the state's θ; `theta_next`
/// becomes the returned state's multiplier. The returned state's `x` holds
/// the primal point the duals were stepped at.
pub fn acf_step(
    state: &AcfState,
    prob: &AcfProblem,
    t1: f64,
    t2: f64,
    theta_next: f64,
) -> Result<AcfState, AcfError> {
    if state.z1.len() != prob.w.rows() || state.z2.len() != prob.a.rows() {
        return Err(AcfError::DimensionMismatch(
            "state blocks do not match problem operators".into(),
        ));
    }
    let theta = state.theta;
    let beta1 = t1 / theta;
    let beta2 = t2 / theta;

    let zd1 = interp(theta, &state.z1, &state.u1);
    let zd2 = interp(theta, &state.z2, &state.u2);

    let wt = matvec(prob.w, true, &zd1);
    let at = matvec(prob.a, true, &zd2);
    let x: Vec<f64> = prob
        .x0
        .iter()
        .zip(wt.iter().zip(&at))
        .map(|(x0, (w, a))| x0 + (w + a) / prob.mu)
        .collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AcfError::NonFinite { iteration: state.k });
    }

    let wx = matvec(prob.w, false, &x);
    let ax = matvec(prob.a, false, &x);

    let z1: Vec<f64> = zd1
        .iter()
        .zip(&wx)
        .map(|(zd, w)| truncate_scalar(zd - beta1 * w, beta1))
        .collect();
    let z2: Vec<f64> = zd2
        .iter()
        .zip(prob.y.iter().zip(&ax))
        .map(|(zd, (y, a))| soft_threshold_scalar(zd + beta2 * (y - a), beta2 * prob.eps))
        .collect();

    let u1 = z1
        .iter()
        .zip(&state.u1)
        .map(|(z, u)| (1.0 - theta) * u + theta * z)
        .collect();
    let u2 = z2
        .iter()
        .zip(&state.u2)
        .map(|(z, u)| (1.0 - theta) * u + theta * z)
        .collect();

    Ok(AcfState {
        x,
        z1,
        u1,
        z2,
        u2,
        theta: theta_next,
        k: state.k + 1,
    })
}

/// Solver output: the final primal point, the smoothed objective at each
/// visited primal, and constraint diagnostics at the final point.
#[derive(Debug, Clone)]
pub struct AcfResult {
    pub x_hat: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub analysis_l1: f64,
    pub residual_norm: f64,
}

/// Run `iters` iterations driven by the schedule (which must cover at least
/// that many layers) and read out the final primal point.
pub fn acf_solve(prob: &AcfProblem, sched: &Schedule, iters: usize) -> Result<AcfResult, AcfError> {
    if iters == 0 {
        return Err(AcfError::ZeroIterations);
    }
    if sched.layers() < iters {
        return Err(AcfError::ScheduleTooShort {
            have: sched.layers(),
            need: iters,
        });
    }
    let mut state = AcfState::zero(prob);
    let mut trace = Vec::with_capacity(iters);
    for k in 0..iters {
        state = acf_step(&state, prob, sched.t1[k], sched.t2[k], sched.theta[k + 1])?;
        trace.push(prob.objective(&state.x));
    }
    let x_hat = primal_at(prob, &state, sched.theta[iters]);
    if x_hat.iter().any(|v| !v.is_finite()) {
        return Err(AcfError::NonFinite { iteration: iters });
    }
    let wx = matvec(prob.w, false, &x_hat);
    let ax = matvec(prob.a, false, &x_hat);
    let resid: Vec<f64> = prob.y.iter().zip(&ax).map(|(y, a)| y - a).collect();
    Ok(AcfResult {
        analysis_l1: wx.iter().map(|v| v.abs()).sum(),
        residual_norm: vec_norm(&resid),
        x_hat,
        objective_trace: trace,
    })
}

/// Mean squared reconstruction error (1/d)Σ‖x̂_i − x_i‖₂² of the solver over
/// paired columns of (x, y). Columns solve independently and in parallel.
pub fn baseline_mse(
    a: &Mat,
    w: &Mat,
    x: &Mat,
    y: &Mat,
    mu: f64,
    eps: f64,
    sched: &Schedule,
    iters: usize,
) -> Result<f64, AcfError> {
    if x.cols() == 0 || y.cols() == 0 {
        return Err(AcfError::EmptyDataset);
    }
    if x.cols() != y.cols() {
        return Err(AcfError::DimensionMismatch(format!(
            "{} signal columns vs {} measurement columns",
            x.cols(),
            y.cols()
        )));
    }
    let errs: Result<Vec<f64>, AcfError> = (0..y.cols())
        .into_par_iter()
        .map(|j| {
            let prob = AcfProblem::new(a, w, y.col(j), mu, eps)?;
            let res = acf_solve(&prob, sched, iters)?;
            let truth = x.col(j);
            Ok(res
                .x_hat
                .iter()
                .zip(&truth)
                .map(|(a, b)| (a - b) * (a - b))
                .sum())
        })
        .collect();
    Ok(errs?.iter().sum::<f64>() / y.cols() as f64)
}
