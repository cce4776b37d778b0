//! Closed-form growth, Lipschitz and generalization quantities for the
//! unfolded decoder class.
//!
//! With c_{1,k} = t¹_k/(θ_k μ) and c_{2,k} = t²_k/(θ_k μ):
//!
//! - Γ_k = 2[c_{1,k}Λ² + c_{2,k}‖A‖² + 2‖A‖Λ(c_{1,k}+c_{2,k})] + 1 bounds
//!   2‖G¹_k‖ + 2‖G²_k‖ + 1 for the layer weight blocks, and γ = 4(Λ+‖A‖+1)+1
//!   caps every Γ_k once the boundedness assumptions hold.
//! - ‖f^k_W(Y)‖_F ≤ 2μ‖Y‖_F(Σ_{i<k} Q_{i−1}Π_{j=i}^{k−1}Γ_j + Q_{k−1}) with
//!   Q_k = ‖A‖(c_{1,k}Λ + c_{2,k}‖A‖) + c_{2,k}, simplified to
//!   2μ‖Y‖_F(‖A‖+1)(ζ_k+1), ζ_k = (γ^k−1)/(γ−1).
//! - The intermediate decoder is K_L-Lipschitz in W with
//!   K_L = Σ_{k=1}^L (max_i Γ_i)^{L−k} E_k, where
//!   E_k = 2Δ_{k−1}(2Λc_{1,k−1} + ‖A‖(c_{1,k−1}+c_{2,k−1})) + 2μc_{1,k−1}‖A‖‖Y‖_F
//!   and Δ_k is the exact state-norm bound (Δ₀ = 0). The simplified cap is
//!   2μ‖Y‖_F[‖A‖(L−1+μ⁻¹) + 2(‖A‖+1)(‖A‖+3)κ_L] with
//!   κ_L = γ^L((L−1)/(γ(γ−1)) + γ(γ−2)/(γ−1)²) − γ²(γ−2)/(γ−1)².
//! - Covering numbers of the decoder image set give the Dudley estimate and
//!   the generalization bounds assembled in [`gen_bound`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::{check_assumptions, Schedule};

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("layer index {k} outside 1..={layers}")]
    LayerOutOfRange { k: usize, layers: usize },
}

/// Scalar inputs every bound consumes.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    /// Operator-norm cap (or measured norm) Λ of the analysis operator.
    pub lambda: f64,
    /// Spectral norm of the normalized measurement matrix.
    pub a_norm: f64,
    pub sched: Schedule,
    /// Redundancy N (rows of W).
    pub big_n: usize,
    /// Ambient dimension n.
    pub n: usize,
    /// Measurement dimension m (recorded; the bounds themselves are m-free).
    pub m: usize,
    /// Training sample count s.
    pub s: usize,
    /// Frobenius norm of the stacked measurements Y.
    pub y_fro: f64,
    pub b_in: f64,
    pub b_out: f64,
    /// Confidence parameter δ ∈ (0, 1).
    pub delta: f64,
}

impl BoundInputs {
    pub fn layers(&self) -> usize {
        self.sched.layers()
    }

    fn validate(&self) -> Result<(), BoundsError> {
        if self.lambda < 0.0 || self.a_norm < 0.0 || self.y_fro < 0.0 {
            return Err(BoundsError::InvalidInput("norms must be nonnegative".into()));
        }
        if self.big_n == 0 || self.n == 0 || self.s == 0 {
            return Err(BoundsError::InvalidInput("counts must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(BoundsError::InvalidInput(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }

    fn c(&self, k: isize) -> (f64, f64) {
        self.sched.c_coeffs(k).expect("index checked by caller")
    }
}

/// Which generalization bound to evaluate: the form carrying distinct input
/// and output level constants, or the symmetric form with B_in = B_out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundVariant {
    MixedLevels,
    EqualLevels,
}

/// Which Lipschitz constant feeds the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlSource {
    General,
    Simplified,
}

/// Per-layer gain factors Γ_k (k = 0..L−1) and their cap γ.
pub fn gamma_seq(bi: &BoundInputs) -> (Vec<f64>, f64) {
    let (lam, a) = (bi.lambda, bi.a_norm);
    let gammas = (0..bi.layers() as isize)
        .map(|k| {
            let (c1, c2) = bi.c(k);
            2.0 * (c1 * lam * lam + c2 * a * a + 2.0 * a * lam * (c1 + c2)) + 1.0
        })
        .collect();
    let cap = 4.0 * (lam + a + 1.0) + 1.0;
    (gammas, cap)
}

/// Q_k = ‖A‖(c_{1,k}Λ + c_{2,k}‖A‖) + c_{2,k}, with Q_{−1} = 0.
fn q_at(bi: &BoundInputs, k: isize) -> f64 {
    if k < 0 {
        return 0.0;
    }
    let (c1, c2) = bi.c(k);
    bi.a_norm * (c1 * bi.lambda + c2 * bi.a_norm) + c2
}

/// ζ_k = (γ^k − 1)/(γ − 1).
pub fn zeta(gamma: f64, k: usize) -> f64 {
    (gamma.powi(k as i32) - 1.0) / (gamma - 1.0)
}

/// State-norm bound after k layers: the exact product-sum form and the
/// simplified geometric cap 2μ‖Y‖_F(‖A‖+1)(ζ_k+1). Valid for 1 ≤ k ≤ L.
pub fn f_norm_bound(bi: &BoundInputs, k: usize) -> Result<(f64, f64), BoundsError> {
    bi.validate()?;
    let l = bi.layers();
    if k < 1 || k > l {
        return Err(BoundsError::LayerOutOfRange { k, layers: l });
    }
    let (gammas, cap) = gamma_seq(bi);
    let exact = exact_state_bound(bi, &gammas, k);
    let simplified = 2.0 * bi.sched.mu * bi.y_fro * (bi.a_norm + 1.0) * (zeta(cap, k) + 1.0);
    Ok((exact, simplified))
}

/// 2μ‖Y‖_F(Σ_{i=0}^{k−1} Q_{i−1} Π_{j=i}^{k−1} Γ_j + Q_{k−1}).
fn exact_state_bound(bi: &BoundInputs, gammas: &[f64], k: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..k {
        let mut prod = 1.0;
        for g in &gammas[i..k] {
            prod *= g;
        }
        sum += q_at(bi, i as isize - 1) * prod;
    }
    sum += q_at(bi, k as isize - 1);
    2.0 * bi.sched.mu * bi.y_fro * sum
}

/// Result of the general Lipschitz-constant computation.
#[derive(Debug, Clone)]
pub struct KlGeneral {
    pub k_l: f64,
    /// E_1..E_L (index 0 holds E_1).
    pub e: Vec<f64>,
    /// Δ_0..Δ_{L−1}.
    pub delta: Vec<f64>,
}

/// General Lipschitz constant of the L-layer intermediate decoder with
/// respect to W, via the closed sum over the per-layer perturbation terms.
pub fn k_l_general(bi: &BoundInputs) -> Result<KlGeneral, BoundsError> {
    bi.validate()?;
    let l = bi.layers();
    let (gammas, _) = gamma_seq(bi);
    // Δ_k is the exact state-norm bound, with Δ_0 = 0.
    let mut delta = Vec::with_capacity(l);
    delta.push(0.0);
    for k in 1..l {
        delta.push(exact_state_bound(bi, &gammas, k));
    }
    let mut e = Vec::with_capacity(l);
    for k in 1..=l {
        let (c1, c2) = bi.c(k as isize - 1);
        let ek = 2.0 * delta[k - 1] * (2.0 * bi.lambda * c1 + bi.a_norm * (c1 + c2))
            + 2.0 * bi.sched.mu * c1 * bi.a_norm * bi.y_fro;
        e.push(ek);
    }
    let gmax = gammas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut k_l = 0.0;
    for k in 1..=l {
        k_l += gmax.powi((l - k) as i32) * e[k - 1];
    }
    Ok(KlGeneral { k_l, e, delta })
}

/// κ_L = γ^L((L−1)/(γ(γ−1)) + γ(γ−2)/(γ−1)²) − γ²(γ−2)/(γ−1)².
pub fn kappa(gamma: f64, l: usize) -> f64 {
    let g1 = gamma - 1.0;
    let head = (l as f64 - 1.0) / (gamma * g1) + gamma * (gamma - 2.0) / (g1 * g1);
    gamma.powi(l as i32) * head - gamma * gamma * (gamma - 2.0) / (g1 * g1)
}

/// Simplified Lipschitz cap 2μ‖Y‖_F[‖A‖(L−1+μ⁻¹) + 2(‖A‖+1)(‖A‖+3)κ_L]
/// together with κ_L. An upper bound on the general constant once the
/// boundedness assumptions hold.
pub fn k_l_simplified(bi: &BoundInputs) -> Result<(f64, f64), BoundsError> {
    bi.validate()?;
    let l = bi.layers();
    let (_, cap) = gamma_seq(bi);
    let kap = kappa(cap, l);
    let bound = 2.0
        * bi.sched.mu
        * bi.y_fro
        * (bi.a_norm * (l as f64 - 1.0 + 1.0 / bi.sched.mu)
            + 2.0 * (bi.a_norm + 1.0) * (bi.a_norm + 3.0) * kap);
    Ok((bound, kap))
}

/// Log covering number of the decoder image set at radius `eps_cover`:
/// Nn·log(1 + 2Λ(Λ+‖A‖)K_L/(μ·ε)) with the general Lipschitz constant.
/// Computed in log space.
pub fn covering_bound(bi: &BoundInputs, eps_cover: f64) -> Result<f64, BoundsError> {
    let k_l = k_l_general(bi)?.k_l;
    covering_bound_with_kl(bi, eps_cover, k_l)
}

/// [`covering_bound`] with a precomputed Lipschitz constant.
pub fn covering_bound_with_kl(
    bi: &BoundInputs,
    eps_cover: f64,
    k_l: f64,
) -> Result<f64, BoundsError> {
    if !(eps_cover > 0.0) {
        return Err(BoundsError::InvalidInput(format!(
            "eps_cover must be positive, got {eps_cover}"
        )));
    }
    bi.validate()?;
    let arg = 2.0 * bi.lambda * (bi.lambda + bi.a_norm) * k_l / (bi.sched.mu * eps_cover);
    Ok((bi.big_n * bi.n) as f64 * arg.ln_1p())
}

/// Log covering number of the operator ball itself: Nn·log(1 + 2Λ/ε).
pub fn covering_bound_operator_ball(bi: &BoundInputs, eps_cover: f64) -> Result<f64, BoundsError> {
    if !(eps_cover > 0.0) {
        return Err(BoundsError::InvalidInput(format!(
            "eps_cover must be positive, got {eps_cover}"
        )));
    }
    bi.validate()?;
    Ok((bi.big_n * bi.n) as f64 * (2.0 * bi.lambda / eps_cover).ln_1p())
}

fn pick_k_l(bi: &BoundInputs, source: KlSource) -> Result<f64, BoundsError> {
    Ok(match source {
        KlSource::General => k_l_general(bi)?.k_l,
        KlSource::Simplified => k_l_simplified(bi)?.0,
    })
}

/// Generalization-error bound. The mixed variant carries the front factors
/// 8(B_in+B_out)B_out and 4(B_in+B_out)²; the equal-levels variant assumes
/// B_in = B_out =: B (the larger of the two is used when they differ) with
/// front factors 16B² and 16B.
pub fn gen_bound(
    bi: &BoundInputs,
    variant: BoundVariant,
    source: KlSource,
) -> Result<f64, BoundsError> {
    bi.validate()?;
    let k_l = pick_k_l(bi, source)?;
    let s = bi.s as f64;
    let nn = (bi.big_n * bi.n) as f64;
    let rho = bi.lambda * (bi.lambda + bi.a_norm) / bi.sched.mu;
    match variant {
        BoundVariant::MixedLevels => {
            // log(e(1 + x)) = 1 + log1p(x)
            let log_term = 1.0 + (4.0 * rho * k_l / (s.sqrt() * bi.b_out)).ln_1p();
            let dudley =
                8.0 * (bi.b_in + bi.b_out) * bi.b_out * (nn / s).sqrt() * log_term.sqrt();
            let conc = 4.0 * (bi.b_in + bi.b_out) * (bi.b_in + bi.b_out)
                * (2.0 * (4.0 / bi.delta).ln() / s).sqrt();
            Ok(dudley + conc)
        }
        BoundVariant::EqualLevels => {
            let b = bi.b_in.max(bi.b_out);
            let log_term = 1.0 + (4.0 * rho * k_l / (s.sqrt() * b)).ln_1p();
            let dudley = 16.0 * b * b * (nn / s).sqrt() * log_term.sqrt();
            let conc = 16.0 * b * (2.0 * (4.0 / bi.delta).ln() / s).sqrt();
            Ok(dudley + conc)
        }
    }
}

/// Log argument of the equal-levels bound assembled from the precomposed
/// constants p = Λ(Λ+‖A‖)‖A‖, q = p(μ⁻¹−1), r = 2p(‖A‖+1)(‖A‖+3):
/// ‖Y‖_F(p + qL + rκ_L)/(√s·B). Note q < 0 for μ > 1, so this grouping can
/// understate the L-growth; the direct composition through the simplified
/// Lipschitz constant, used by [`gen_bound`], is the default.
pub fn equal_levels_log_arg_precomposed(bi: &BoundInputs) -> Result<f64, BoundsError> {
    bi.validate()?;
    let (_, cap) = gamma_seq(bi);
    let l = bi.layers() as f64;
    let p = bi.lambda * (bi.lambda + bi.a_norm) * bi.a_norm;
    let q = p * (1.0 / bi.sched.mu - 1.0);
    let r = 2.0 * p * (bi.a_norm + 1.0) * (bi.a_norm + 3.0);
    let b = bi.b_in.max(bi.b_out);
    Ok(bi.y_fro * (p + q * l + r * kappa(cap, bi.layers())) / ((bi.s as f64).sqrt() * b))
}

/// Everything in one serializable report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub lambda: f64,
    pub a_norm: f64,
    pub mu: f64,
    pub layers: usize,
    pub big_n: usize,
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub y_fro: f64,
    pub b_in: f64,
    pub b_out: f64,
    pub delta: f64,
    pub gamma_k: Vec<f64>,
    pub gamma: f64,
    pub q_k: Vec<f64>,
    pub zeta_k: Vec<f64>,
    pub delta_k: Vec<f64>,
    pub e_k: Vec<f64>,
    pub k_l_general: f64,
    pub k_l_simplified: f64,
    pub kappa_l: f64,
    pub log_cover_at_dudley_radius: f64,
    pub gen_bound_mixed_levels: f64,
    pub gen_bound_equal_levels: f64,
    pub equal_levels_log_arg_precomposed: f64,
    pub assumptions_hold: bool,
}

/// Evaluate every quantity for one configuration.
pub fn bound_report(bi: &BoundInputs) -> Result<BoundReport, BoundsError> {
    bi.validate()?;
    let l = bi.layers();
    let (gamma_k, gamma) = gamma_seq(bi);
    let q_k = (0..l).map(|k| q_at(bi, k as isize)).collect();
    let zeta_k = (1..=l).map(|k| zeta(gamma, k)).collect();
    let general = k_l_general(bi)?;
    let (k_l_simpl, kappa_l) = k_l_simplified(bi)?;
    let dudley_radius = (bi.s as f64).sqrt() * bi.b_out / 2.0;
    let report = BoundReport {
        lambda: bi.lambda,
        a_norm: bi.a_norm,
        mu: bi.sched.mu,
        layers: l,
        big_n: bi.big_n,
        n: bi.n,
        m: bi.m,
        s: bi.s,
        y_fro: bi.y_fro,
        b_in: bi.b_in,
        b_out: bi.b_out,
        delta: bi.delta,
        gamma_k,
        gamma,
        q_k,
        zeta_k,
        delta_k: general.delta.clone(),
        e_k: general.e.clone(),
        k_l_general: general.k_l,
        k_l_simplified: k_l_simpl,
        kappa_l,
        log_cover_at_dudley_radius: covering_bound_with_kl(bi, dudley_radius, general.k_l)?,
        gen_bound_mixed_levels: gen_bound(bi, BoundVariant::MixedLevels, KlSource::General)?,
        gen_bound_equal_levels: gen_bound(bi, BoundVariant::EqualLevels, KlSource::Simplified)?,
        equal_levels_log_arg_precomposed: equal_levels_log_arg_precomposed(bi)?,
        assumptions_hold: check_assumptions(&bi.sched, bi.lambda, bi.a_norm).all_hold,
    };
    Ok(report)
}

/// Template for grid sweeps: everything except (N, L, s) held fixed, with
/// ‖Y‖_F scaling as y_fro_per_sqrt_s·√s so the per-sample energy is constant.
#[derive(Debug, Clone)]
pub struct ScalingTemplate {
    pub lambda: f64,
    pub a_norm: f64,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub l_tilde: f64,
    pub n: usize,
    pub m: usize,
    pub y_fro_per_sqrt_s: f64,
    pub b_out: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub big_n: usize,
    pub layers: usize,
    pub s: usize,
    pub bound: f64,
    pub sqrt_nl_over_s: f64,
}

/// Evaluate the B_in = B_out bound over a grid of (N, L, s) alongside the
/// √(NL/s) reference column.
pub fn scaling_curve(
    tpl: &ScalingTemplate,
    grid: &[(usize, usize, usize)],
) -> Result<Vec<ScalingPoint>, BoundsError> {
    if grid.is_empty() {
        return Err(BoundsError::InvalidInput("empty grid".into()));
    }
    let mut out = Vec::with_capacity(grid.len());
    for &(big_n, layers, s) in grid {
        let sched = Schedule::geometric(layers, tpl.mu, tpl.alpha, tpl.beta, tpl.l_tilde)
            .map_err(|e| BoundsError::InvalidInput(e.to_string()))?;
        let bi = BoundInputs {
            lambda: tpl.lambda,
            a_norm: tpl.a_norm,
            sched,
            big_n,
            n: tpl.n,
            m: tpl.m,
            s,
            y_fro: tpl.y_fro_per_sqrt_s * (s as f64).sqrt(),
            b_in: tpl.b_out,
            b_out: tpl.b_out,
            delta: tpl.delta,
        };
        out.push(ScalingPoint {
            big_n,
            layers,
            s,
            bound: gen_bound(&bi, BoundVariant::EqualLevels, KlSource::Simplified)?,
            sqrt_nl_over_s: ((big_n * layers) as f64 / s as f64).sqrt(),
        });
    }
    Ok(out)
}
