//! Step-size schedules shared by the solver, the unfolded layers and the
//! bound calculators: per-layer t¹_k, t²_k, θ_k and the derived coefficients
//! c_{1,k} = t¹_k/(θ_k μ), c_{2,k} = t²_k/(θ_k μ).
//!
//! θ carries one extra entry (index L) because the output affine map after
//! the last layer is evaluated at θ_L.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid schedule parameter: {0}")]
    InvalidParameter(String),
    #[error("index {k} out of range for {layers} layers")]
    IndexOutOfRange { k: isize, layers: usize },
}

/// How a schedule was constructed; kept for serialization and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum ScheduleRule {
    /// t¹_k = α^k, t²_k = β^k, θ_k = (θ′)^k with θ′ = (1−√(μ/L̃))/(1+√(μ/L̃)).
    Geometric {
        alpha: f64,
        beta: f64,
        theta_prime: f64,
        l_tilde: f64,
    },
    /// θ from the recursion θ_{k+1} = 2/(1+√(1+4/θ_k²)), constant step sizes.
    Recursion { t1: f64, t2: f64 },
    /// θ from the recursion, t_k = c·θ_k (constant prox radius c).
    Proportional { c1: f64, c2: f64 },
    Custom,
}

/// Materialized schedule: μ plus the per-layer sequences. Invariants:
/// t¹₀ = t²₀ = θ₀ = 1, every entry in (0, 1], μ > 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub mu: f64,
    /// L entries, indices 0..L-1.
    pub t1: Vec<f64>,
    /// L entries.
    pub t2: Vec<f64>,
    /// L+1 entries, indices 0..L.
    pub theta: Vec<f64>,
    pub rule: ScheduleRule,
}

impl Schedule {
    /// Number of layers L.
    pub fn layers(&self) -> usize {
        self.t1.len()
    }

    /// Validated construction from explicit sequences.
    pub fn from_parts(
        mu: f64,
        t1: Vec<f64>,
        t2: Vec<f64>,
        theta: Vec<f64>,
        rule: ScheduleRule,
    ) -> Result<Self, ScheduleError> {
        if !(mu > 1.0) {
            return Err(ScheduleError::InvalidParameter(format!(
                "mu must exceed 1, got {mu}"
            )));
        }
        let l = t1.len();
        if l == 0 || t2.len() != l || theta.len() != l + 1 {
            return Err(ScheduleError::InvalidParameter(format!(
                "need len(t1)=len(t2)=L>=1 and len(theta)=L+1, got {l}/{}/{}",
                t2.len(),
                theta.len()
            )));
        }
        for (name, seq) in [("t1", &t1), ("t2", &t2), ("theta", &theta)] {
            if seq[0] != 1.0 {
                return Err(ScheduleError::InvalidParameter(format!(
                    "{name}[0] must be 1, got {}",
                    seq[0]
                )));
            }
            if seq.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
                return Err(ScheduleError::InvalidParameter(format!(
                    "{name} entries must lie in (0, 1]"
                )));
            }
        }
        Ok(Schedule {
            mu,
            t1,
            t2,
            theta,
            rule,
        })
    }

    /// Geometric decay schedule: t¹_k = α^k, t²_k = β^k, θ_k = (θ′)^k with
    /// θ′ = (1−√(μ/L̃))/(1+√(μ/L̃)). Requires L̃ > μ so the root stays below 1.
    pub fn geometric(
        layers: usize,
        mu: f64,
        alpha: f64,
        beta: f64,
        l_tilde: f64,
    ) -> Result<Self, ScheduleError> {
        if layers < 1 {
            return Err(ScheduleError::InvalidParameter("need at least 1 layer".into()));
        }
        if !(mu > 1.0) {
            return Err(ScheduleError::InvalidParameter(format!(
                "mu must exceed 1, got {mu}"
            )));
        }
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ScheduleError::InvalidParameter(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        if !(l_tilde > mu) {
            return Err(ScheduleError::InvalidParameter(format!(
                "l_tilde must exceed mu, got l_tilde={l_tilde}, mu={mu}"
            )));
        }
        let root = (mu / l_tilde).sqrt();
        let theta_prime = (1.0 - root) / (1.0 + root);
        let t1 = (0..layers).map(|k| alpha.powi(k as i32)).collect();
        let t2 = (0..layers).map(|k| beta.powi(k as i32)).collect();
        let theta = (0..=layers).map(|k| theta_prime.powi(k as i32)).collect();
        Schedule::from_parts(
            mu,
            t1,
            t2,
            theta,
            ScheduleRule::Geometric {
                alpha,
                beta,
                theta_prime,
                l_tilde,
            },
        )
    }

    /// θ₀ = 1 followed by the accelerated-method recursion
    /// θ_{k+1} = 2/(1+√(1+4/θ_k²)); returns L+1 values.
    pub fn acf_theta(layers: usize) -> Vec<f64> {
        let mut theta = Vec::with_capacity(layers + 1);
        theta.push(1.0);
        for k in 0..layers {
            let t: f64 = theta[k];
            theta.push(2.0 / (1.0 + (1.0 + 4.0 / (t * t)).sqrt()));
        }
        theta
    }

    /// Recursion θ with constant step sizes t¹ ≡ t1, t² ≡ t2 (classic solver
    /// default). t values must lie in (0, 1]; index 0 is forced to 1.
    pub fn recursion(layers: usize, mu: f64, t1: f64, t2: f64) -> Result<Self, ScheduleError> {
        if layers < 1 {
            return Err(ScheduleError::InvalidParameter("need at least 1 layer".into()));
        }
        for (name, v) in [("t1", t1), ("t2", t2)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ScheduleError::InvalidParameter(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        let mut t1s = vec![t1; layers];
        let mut t2s = vec![t2; layers];
        t1s[0] = 1.0;
        t2s[0] = 1.0;
        Schedule::from_parts(
            mu,
            t1s,
            t2s,
            Self::acf_theta(layers),
            ScheduleRule::Recursion { t1, t2 },
        )
    }

    /// Constant θ ≡ 1 with constant step sizes: the plain (unaccelerated)
    /// dual projected-gradient regime with truncation radius t1 and
    /// soft-threshold level t2·ε. With t1 = 1 the l1 term enters at unit
    /// coefficient; this is the mode that converges to the smoothed
    /// minimizer when t ≤ μ/‖[W;A]‖².
    pub fn unit_theta(layers: usize, mu: f64, t1: f64, t2: f64) -> Result<Self, ScheduleError> {
        if layers < 1 {
            return Err(ScheduleError::InvalidParameter("need at least 1 layer".into()));
        }
        for (name, v) in [("t1", t1), ("t2", t2)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ScheduleError::InvalidParameter(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        let mut t1s = vec![t1; layers];
        let mut t2s = vec![t2; layers];
        t1s[0] = 1.0;
        t2s[0] = 1.0;
        Schedule::from_parts(mu, t1s, t2s, vec![1.0; layers + 1], ScheduleRule::Custom)
    }

    /// Recursion θ with proportional step sizes t_k = c·θ_k, which keeps the
    /// truncation radius and the soft-threshold level constant across
    /// iterations. Index 0 is forced to 1 to honor the t₀ = 1 convention.
    pub fn proportional(layers: usize, mu: f64, c1: f64, c2: f64) -> Result<Self, ScheduleError> {
        if layers < 1 {
            return Err(ScheduleError::InvalidParameter("need at least 1 layer".into()));
        }
        for (name, v) in [("c1", c1), ("c2", c2)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ScheduleError::InvalidParameter(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        let theta = Self::acf_theta(layers);
        let mut t1 = (0..layers).map(|k| c1 * theta[k]).collect::<Vec<_>>();
        let mut t2 = (0..layers).map(|k| c2 * theta[k]).collect::<Vec<_>>();
        t1[0] = 1.0;
        t2[0] = 1.0;
        Schedule::from_parts(mu, t1, t2, theta, ScheduleRule::Proportional { c1, c2 })
    }

    /// Derived coefficients (c_{1,k}, c_{2,k}) = (t¹_k, t²_k)/(θ_k μ), with the
    /// k = −1 → (0, 0) convention used by the perturbation bounds.
    pub fn c_coeffs(&self, k: isize) -> Result<(f64, f64), ScheduleError> {
        if k == -1 {
            return Ok((0.0, 0.0));
        }
        let l = self.layers();
        if k < 0 || k as usize >= l {
            return Err(ScheduleError::IndexOutOfRange { k, layers: l });
        }
        let k = k as usize;
        let d = self.theta[k] * self.mu;
        Ok((self.t1[k] / d, self.t2[k] / d))
    }

    /// Truncation radius θ_k⁻¹ t¹_k of layer k.
    pub fn trunc_radius(&self, k: usize) -> f64 {
        self.t1[k] / self.theta[k]
    }

    /// Soft-threshold scale θ_k⁻¹ t²_k of layer k (to be multiplied by ε).
    pub fn shrink_scale(&self, k: usize) -> f64 {
        self.t2[k] / self.theta[k]
    }
}

/// Per-layer status of the boundedness assumptions c_{1,k}Λ ≤ 1,
/// c_{1,k}Λ² ≤ 1 and c_{2,k}‖A‖² ≤ 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub k: usize,
    pub c1_lambda: f64,
    pub c1_lambda_sq: f64,
    pub c2_a_sq: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub per_layer: Vec<AssumptionCheck>,
    pub all_hold: bool,
}

/// Check the boundedness assumptions for the given operator norm cap Λ and
/// measurement norm ‖A‖ across all layers.
pub fn check_assumptions(sched: &Schedule, lambda: f64, a_norm: f64) -> AssumptionReport {
    let mut per_layer = Vec::with_capacity(sched.layers());
    let mut all_hold = true;
    for k in 0..sched.layers() {
        let (c1, c2) = sched.c_coeffs(k as isize).expect("k in range");
        let c1_lambda = c1 * lambda;
        let c1_lambda_sq = c1 * lambda * lambda;
        let c2_a_sq = c2 * a_norm * a_norm;
        let ok = c1_lambda <= 1.0 && c1_lambda_sq <= 1.0 && c2_a_sq <= 1.0;
        all_hold &= ok;
        per_layer.push(AssumptionCheck {
            k,
            c1_lambda,
            c1_lambda_sq,
            c2_a_sq,
            ok,
        });
    }
    AssumptionReport {
        per_layer,
        all_hold,
    }
}
