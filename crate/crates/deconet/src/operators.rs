//! Scalar nonlinearities with their subgradients, and the analysis operators.
//!
//! `soft_threshold` is the proximal map of the l1 norm, `truncate` the
//! projection onto the l∞ ball; both act component-wise, are 1-Lipschitz in
//! their first argument and satisfy soft_threshold(x,τ) + truncate(x,τ) = x.
//! At the kink |x| = τ the subgradient convention is 0 for both maps.

use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Mat, SpectralEstimate};
use crate::seed;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("redundancy error: need N > n, got N={n_rows}, n={n_cols}")]
    NotRedundant { n_rows: usize, n_cols: usize },
    #[error("beta parameters must be positive, got a={a}, b={b}")]
    BadBetaParams { a: f64, b: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("sidecar: {0}")]
    Sidecar(String),
}

/// sign(x) * max(0, |x| - tau), component-wise. Internal layer code may pass
/// tau = 0, where the map is the identity.
pub fn soft_threshold_scalar(x: f64, tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    x.signum() * (x.abs() - tau).max(0.0)
}

/// Subgradient of [`soft_threshold_scalar`] in x: 1 on |x| > tau, else 0.
pub fn soft_threshold_grad_scalar(x: f64, tau: f64) -> f64 {
    if x.abs() > tau {
        1.0
    } else {
        0.0
    }
}

/// sign(x) * min(|x|, tau), component-wise.
pub fn truncate_scalar(x: f64, tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    x.signum() * x.abs().min(tau)
}

/// Subgradient of [`truncate_scalar`] in x: 1 on |x| < tau, else 0.
pub fn truncate_grad_scalar(x: f64, tau: f64) -> f64 {
    if x.abs() < tau {
        1.0
    } else {
        0.0
    }
}

pub fn soft_threshold(x: &[f64], tau: f64) -> Vec<f64> {
    assert!(tau > 0.0, "tau must be positive");
    x.iter().map(|&v| soft_threshold_scalar(v, tau)).collect()
}

pub fn soft_threshold_grad(x: &[f64], tau: f64) -> Vec<f64> {
    assert!(tau > 0.0, "tau must be positive");
    x.iter().map(|&v| soft_threshold_grad_scalar(v, tau)).collect()
}

pub fn truncate(x: &[f64], tau: f64) -> Vec<f64> {
    assert!(tau > 0.0, "tau must be positive");
    x.iter().map(|&v| truncate_scalar(v, tau)).collect()
}

pub fn truncate_grad(x: &[f64], tau: f64) -> Vec<f64> {
    assert!(tau > 0.0, "tau must be positive");
    x.iter().map(|&v| truncate_grad_scalar(v, tau)).collect()
}

/// Which analysis operator a matrix represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Learnable,
    HaarRedundant,
    FiniteDifference,
}

/// Initialization scheme for a learnable operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum InitScheme {
    Normal,
    Beta { a: f64, b: f64 },
}

/// A redundant analysis operator W ∈ R^{N×n} together with its provenance.
/// The circular finite-difference variant has N = n by construction and is
/// the one allowed exception to the redundancy requirement.
#[derive(Debug, Clone)]
pub struct AnalysisOperator {
    pub kind: OperatorKind,
    pub w: Mat,
    /// Cached spectral estimate, filled on demand.
    pub spectral: Option<SpectralEstimate>,
}

impl AnalysisOperator {
    fn new(kind: OperatorKind, w: Mat) -> Result<Self, OperatorError> {
        let (nn, n) = w.shape();
        if kind != OperatorKind::FiniteDifference && nn <= n {
            return Err(OperatorError::NotRedundant {
                n_rows: nn,
                n_cols: n,
            });
        }
        Ok(AnalysisOperator {
            kind,
            w,
            spectral: None,
        })
    }

    /// Redundancy N (number of rows).
    pub fn redundancy(&self) -> usize {
        self.w.rows()
    }

    /// Ambient dimension n (number of columns).
    pub fn ambient(&self) -> usize {
        self.w.cols()
    }

    /// Measure and cache the spectral norm.
    pub fn spectral_norm(&mut self) -> Result<SpectralEstimate, OperatorError> {
        if let Some(est) = self.spectral {
            return Ok(est);
        }
        let est = linalg::spectral_norm_default(&self.w)?;
        self.spectral = Some(est);
        Ok(est)
    }
}

/// One-level undecimated Haar frame with circular boundary, N = 2n: rows
/// 1..n are circular averaging pairs (x_i + x_{i+1})/√2, rows n+1..2n the
/// matching difference pairs (x_i − x_{i+1})/√2. Tight frame with WᵀW = 2I.
pub fn haar_redundant(n: usize) -> Result<AnalysisOperator, OperatorError> {
    if n < 2 {
        return Err(OperatorError::InvalidDimension(format!(
            "haar operator needs n >= 2, got {n}"
        )));
    }
    let s = 1.0 / 2f64.sqrt();
    let mut w = Mat::zeros(2 * n, n);
    for i in 0..n {
        let j = (i + 1) % n;
        w[(i, i)] += s;
        w[(i, j)] += s;
        w[(n + i, i)] += s;
        w[(n + i, j)] -= s;
    }
    AnalysisOperator::new(OperatorKind::HaarRedundant, w)
}

/// Circular first differences, row i = e_{i+1 mod n} − e_i. Square (N = n),
/// with singular values 2|sin(πk/n)|.
pub fn finite_difference(n: usize) -> Result<AnalysisOperator, OperatorError> {
    if n < 2 {
        return Err(OperatorError::InvalidDimension(format!(
            "difference operator needs n >= 2, got {n}"
        )));
    }
    let mut w = Mat::zeros(n, n);
    for i in 0..n {
        w[(i, i)] -= 1.0;
        w[(i, (i + 1) % n)] += 1.0;
    }
    AnalysisOperator::new(OperatorKind::FiniteDifference, w)
}

/// Random learnable operator. The normal scheme draws entries from N(0, 1/n);
/// the beta scheme draws Beta(a, b), subtracts the mean a/(a+b) and scales by
/// 1/√n so both schemes start at comparable spectral norms.
pub fn init_learnable(
    n: usize,
    redundancy: usize,
    scheme: InitScheme,
    seed_value: u64,
) -> Result<AnalysisOperator, OperatorError> {
    if redundancy <= n {
        return Err(OperatorError::NotRedundant {
            n_rows: redundancy,
            n_cols: n,
        });
    }
    let mut rng = seed::rng(seed_value);
    let scale = 1.0 / (n as f64).sqrt();
    let data: Vec<f64> = match scheme {
        InitScheme::Normal => (0..redundancy * n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect(),
        InitScheme::Beta { a, b } => {
            if a <= 0.0 || b <= 0.0 {
                return Err(OperatorError::BadBetaParams { a, b });
            }
            let beta = Beta::new(a, b).map_err(|_| OperatorError::BadBetaParams { a, b })?;
            let mean = a / (a + b);
            (0..redundancy * n)
                .map(|_| (beta.sample(&mut rng) - mean) * scale)
                .collect()
        }
    };
    let w = Mat::from_vec(redundancy, n, data)?;
    AnalysisOperator::new(OperatorKind::Learnable, w)
}

/// JSON sidecar stored next to a serialized operator matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorSidecar {
    pub kind: OperatorKind,
    pub n: usize,
    pub redundancy: usize,
    pub seed: Option<u64>,
    pub init: Option<InitScheme>,
}

/// Write the operator as DMAT plus a JSON sidecar at `path` + ".json".
pub fn save_operator<P: AsRef<Path>>(
    path: P,
    op: &AnalysisOperator,
    seed_value: Option<u64>,
    init: Option<InitScheme>,
) -> Result<(), OperatorError> {
    linalg::write_dmat(&path, &op.w)?;
    let sidecar = OperatorSidecar {
        kind: op.kind,
        n: op.ambient(),
        redundancy: op.redundancy(),
        seed: seed_value,
        init,
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| OperatorError::Sidecar(e.to_string()))?;
    std::fs::write(sidecar_path(&path), json).map_err(LinalgError::from)?;
    Ok(())
}

/// Load an operator saved with [`save_operator`].
pub fn load_operator<P: AsRef<Path>>(path: P) -> Result<AnalysisOperator, OperatorError> {
    let w = linalg::read_dmat(&path)?;
    let raw = std::fs::read_to_string(sidecar_path(&path)).map_err(LinalgError::from)?;
    let sidecar: OperatorSidecar =
        serde_json::from_str(&raw).map_err(|e| OperatorError::Sidecar(e.to_string()))?;
    if (sidecar.redundancy, sidecar.n) != w.shape() {
        return Err(OperatorError::Sidecar(format!(
            "sidecar shape {:?} disagrees with matrix {:?}",
            (sidecar.redundancy, sidecar.n),
            w.shape()
        )));
    }
    AnalysisOperator::new(sidecar.kind, w)
}

fn sidecar_path<P: AsRef<Path>>(path: P) -> std::path::PathBuf {
    let mut os = path.as_ref().as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm_default;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_branches() {
        assert_eq!(soft_threshold(&[3.0], 1.0), vec![2.0]);
        assert_eq!(soft_threshold(&[-0.5], 1.0), vec![0.0]);
        assert_eq!(soft_threshold(&[-3.0], 1.0), vec![-2.0]);
    }

    #[test]
    fn soft_threshold_grad_mask() {
        assert_eq!(soft_threshold_grad(&[3.0], 1.0), vec![1.0]);
        assert_eq!(soft_threshold_grad(&[0.5], 1.0), vec![0.0]);
        // Kink convention: 0 exactly at |x| = tau.
        assert_eq!(soft_threshold_grad(&[1.0], 1.0), vec![0.0]);
    }

    #[test]
    fn truncate_branches() {
        assert_eq!(truncate(&[3.0], 1.0), vec![1.0]);
        assert_eq!(truncate(&[0.5], 1.0), vec![0.5]);
        assert_eq!(truncate(&[-3.0], 1.0), vec![-1.0]);
    }

    #[test]
    fn truncate_grad_mask() {
        assert_eq!(truncate_grad(&[0.5], 1.0), vec![1.0]);
        assert_eq!(truncate_grad(&[3.0], 1.0), vec![0.0]);
        assert_eq!(truncate_grad(&[-1.0], 1.0), vec![0.0]);
    }

    #[test]
    fn grads_match_central_differences_away_from_kink() {
        let taus = [0.3f64, 1.0, 2.5];
        let xs = [-3.0f64, -1.7, -0.25, 0.4, 1.9, 2.8];
        let h = 1e-6;
        for &tau in &taus {
            for &x in &xs {
                if (x.abs() - tau).abs() <= 1e-3 {
                    continue;
                }
                let fd_s =
                    (soft_threshold_scalar(x + h, tau) - soft_threshold_scalar(x - h, tau)) / (2.0 * h);
                assert!((fd_s - soft_threshold_grad_scalar(x, tau)).abs() <= 1e-8);
                let fd_t = (truncate_scalar(x + h, tau) - truncate_scalar(x - h, tau)) / (2.0 * h);
                assert!((fd_t - truncate_grad_scalar(x, tau)).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn haar_matches_hand_enumeration_n2() {
        let op = haar_redundant(2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let expect = [
            [s, s],   // (x0 + x1)/sqrt2
            [s, s],   // (x1 + x0)/sqrt2 wraps
            [s, -s],  // (x0 - x1)/sqrt2
            [-s, s],  // (x1 - x0)/sqrt2 wraps
        ];
        for i in 0..4 {
            for j in 0..2 {
                assert!((op.w[(i, j)] - expect[i][j]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn haar_kills_constants_and_is_tight() {
        let n = 8;
        let op = haar_redundant(n).unwrap();
        let ones = vec![1.0; n];
        let out = linalg::matvec(&op.w, false, &ones);
        for &v in &out[n..] {
            assert!(v.abs() <= 1e-15, "difference rows must kill constants");
        }
        // W^T W = 2 I within 1e-12.
        let gram = op.w.matmul_opts(true, &op.w, false, 1.0);
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 2.0 } else { 0.0 };
                assert!((gram[(i, j)] - expect).abs() <= 1e-12);
            }
        }
        let est = spectral_norm_default(&op.w).unwrap();
        assert!((est.value - 2f64.sqrt()).abs() <= 1e-9);
    }

    #[test]
    fn haar_rejects_tiny_n() {
        assert!(haar_redundant(1).is_err());
    }

    #[test]
    fn finite_difference_values() {
        let op = finite_difference(3).unwrap();
        let out = linalg::matvec(&op.w, false, &[1.0, 2.0, 4.0]);
        assert_eq!(out, vec![1.0, 2.0, -3.0]);
        let constant = linalg::matvec(&op.w, false, &[5.0, 5.0, 5.0]);
        assert!(constant.iter().all(|v| v.abs() <= 1e-15));
        assert!(finite_difference(1).is_err());
    }

    #[test]
    fn finite_difference_spectrum() {
        let n = 8;
        let op = finite_difference(n).unwrap();
        let est = spectral_norm_default(&op.w).unwrap();
        let expect = 2.0 * (std::f64::consts::PI * (n / 2) as f64 / n as f64).sin();
        assert!((est.value - expect).abs() <= 1e-8, "got {}", est.value);
    }

    #[test]
    fn learnable_init_determinism_and_variance() {
        let a = init_learnable(100, 500, InitScheme::Normal, 3).unwrap();
        let b = init_learnable(100, 500, InitScheme::Normal, 3).unwrap();
        assert_eq!(a.w.as_slice(), b.w.as_slice());

        let big = init_learnable(100, 1000, InitScheme::Normal, 9).unwrap();
        let var =
            big.w.as_slice().iter().map(|v| v * v).sum::<f64>() / big.w.as_slice().len() as f64;
        assert!((var - 0.01).abs() <= 0.001, "entry variance {var}");
    }

    #[test]
    fn learnable_beta_support_and_centering() {
        let n = 50;
        let op = init_learnable(n, 200, InitScheme::Beta { a: 2.0, b: 2.0 }, 4).unwrap();
        let scale = 1.0 / (n as f64).sqrt();
        let mean_shift = 0.5;
        for &v in op.w.as_slice() {
            // Undo shift and scale: raw draw must lie in [0, 1].
            let raw = v / scale + mean_shift;
            assert!((-1e-12..=1.0 + 1e-12).contains(&raw));
        }
        assert!(init_learnable(50, 40, InitScheme::Normal, 0).is_err());
        assert!(init_learnable(50, 200, InitScheme::Beta { a: 0.0, b: 1.0 }, 0).is_err());
    }

    #[test]
    fn operator_save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.dmat");
        let op = init_learnable(10, 30, InitScheme::Normal, 12).unwrap();
        save_operator(&p, &op, Some(12), Some(InitScheme::Normal)).unwrap();
        let back = load_operator(&p).unwrap();
        assert_eq!(back.kind, OperatorKind::Learnable);
        assert_eq!(back.w.as_slice(), op.w.as_slice());
    }

    proptest! {
        #[test]
        fn nonlinearities_are_1_lipschitz(
            x in -10.0f64..10.0,
            y in -10.0f64..10.0,
            tau in 0.01f64..5.0,
        ) {
            let slack = 4.0 * f64::EPSILON * x.abs().max(y.abs()).max(1.0);
            let ds = (soft_threshold_scalar(x, tau) - soft_threshold_scalar(y, tau)).abs();
            prop_assert!(ds <= (x - y).abs() + slack);
            let dt = (truncate_scalar(x, tau) - truncate_scalar(y, tau)).abs();
            prop_assert!(dt <= (x - y).abs() + slack);
        }

        #[test]
        fn soft_plus_truncate_is_identity(
            x in -10.0f64..10.0,
            tau in 0.01f64..5.0,
        ) {
            let s = soft_threshold_scalar(x, tau) + truncate_scalar(x, tau);
            // Exact identity in real arithmetic; allow one rounding step.
            prop_assert!((s - x).abs() <= 2.0 * f64::EPSILON * x.abs().max(1.0));
        }
    }
}
