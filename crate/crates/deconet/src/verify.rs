//! Empirical verification families: each family draws random instances and
//! checks one of the closed-form inequalities (or an exact identity) against
//! measured quantities, reporting counts and worst-case margins.
//!
//! A margin is bound − measured (tolerance − |error| for exact checks), so
//! every check passes iff its margin is nonnegative.

use serde::{Deserialize, Serialize};

use crate::acf::{acf_step, AcfProblem, AcfState};
use crate::bounds::{self, BoundInputs};
use crate::linalg::{
    frobenius_norm, gaussian_measurement, project_spectral_ball, spectral_norm_default, Mat,
};
use crate::net::{
    self, backward, decode, dense, forward, mse_loss, DecoderConfig, DualState, NetError,
};
use crate::operators::{init_learnable, InitScheme};
use crate::schedule::{check_assumptions, Schedule};
use crate::seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyReport {
    pub name: String,
    pub pass: bool,
    pub checks: usize,
    pub violations: usize,
    /// Smallest bound − measured over all checks (negative means violated).
    pub worst_margin: f64,
    pub detail: String,
}

impl FamilyReport {
    fn new(name: &str) -> Self {
        FamilyReport {
            name: name.into(),
            pass: true,
            checks: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            detail: String::new(),
        }
    }

    fn record(&mut self, margin: f64) {
        self.checks += 1;
        if margin < self.worst_margin {
            self.worst_margin = margin;
        }
        if margin < 0.0 {
            self.violations += 1;
            self.pass = false;
        }
    }

    fn fail(&mut self, why: &str) {
        self.pass = false;
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(why);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub families: Vec<FamilyReport>,
    pub all_pass: bool,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub big_n: usize,
    pub s: usize,
    pub layers: usize,
    /// Draw count for the gain and growth families.
    pub draws: usize,
    /// Pair count for the perturbation family.
    pub pairs: usize,
    pub grad_instances: usize,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub l_tilde: f64,
    /// Spectral cap Λ enforced on every drawn operator.
    pub lambda_cap: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        // The inequality families run with constant coefficients c = 1/μ
        // (α = β = θ′) and Λ = ‖A‖ = 0.99√μ, so c₁Λ² = c₂‖A‖² ≈ 0.98: the
        // boundedness assumptions hold at every layer while the per-layer
        // gain cap Γ_k genuinely dominates the materialized block norms.
        // For much smaller coefficients the cap's substitution step
        // saturates below the unit eigenvalue that I − c₁WWᵀ always carries
        // when N > n, and the raw inequality has no margin left.
        let mu = 2.0;
        VerifyOptions {
            seed: 0,
            n: 10,
            m: 5,
            big_n: 20,
            s: 8,
            layers: 5,
            draws: 100,
            pairs: 50,
            grad_instances: 5,
            mu,
            alpha: 0.0, // 0 = use θ′ (constant coefficients)
            beta: 0.0,
            l_tilde: 1000.0,
            lambda_cap: 0.99 * mu.sqrt(),
        }
    }
}

impl VerifyOptions {
    pub fn validate(&self) -> Result<(), String> {
        if self.layers == 0 {
            return Err("layer count must be at least 1".into());
        }
        if self.m >= self.n || self.big_n <= self.n {
            return Err(format!(
                "need m < n < N, got m={}, n={}, N={}",
                self.m, self.n, self.big_n
            ));
        }
        Ok(())
    }

    fn theta_prime(&self) -> f64 {
        let root = (self.mu / self.l_tilde).sqrt();
        (1.0 - root) / (1.0 + root)
    }

    fn schedule(&self) -> Schedule {
        let alpha = if self.alpha > 0.0 { self.alpha } else { self.theta_prime() };
        let beta = if self.beta > 0.0 { self.beta } else { self.theta_prime() };
        Schedule::geometric(self.layers, self.mu, alpha, beta, self.l_tilde)
            .expect("verify schedule")
    }

    /// Target spectral norm for the rescaled measurement matrix.
    fn a_norm_target(&self) -> f64 {
        self.lambda_cap
    }
}

fn rescaled_measurement(opts: &VerifyOptions, seed_v: u64) -> (Mat, f64) {
    let a = gaussian_measurement(opts.m, opts.n, seed_v).unwrap();
    let norm = spectral_norm_default(&a).unwrap().value;
    let target = opts.a_norm_target();
    (a.scale(target / norm), target)
}

fn random_capped_operator(n: usize, big_n: usize, cap: f64, seed_v: u64) -> Mat {
    let w = init_learnable(n, big_n, InitScheme::Normal, seed_v).unwrap().w;
    // Vary the scale before projecting so draws sit at different radii.
    let scale = 0.5 + 1.5 * ((seed_v % 7) as f64 / 6.0);
    project_spectral_ball(&w.scale(scale), cap).unwrap()
}

fn random_y(m: usize, s: usize, seed_v: u64) -> Mat {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = seed::rng(seed_v);
    Mat::from_vec(
        m,
        s,
        (0..m * s).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    )
    .unwrap()
}

fn bound_inputs(opts: &VerifyOptions, a_norm: f64, y_fro: f64) -> BoundInputs {
    BoundInputs {
        lambda: opts.lambda_cap,
        a_norm,
        sched: opts.schedule(),
        big_n: opts.big_n,
        n: opts.n,
        m: opts.m,
        s: opts.s,
        y_fro,
        b_in: 1.0,
        b_out: 1.0,
        delta: 0.05,
    }
}

/// Exact closed-form identities, checked at 1e-12.
pub fn formula_family() -> FamilyReport {
    let mut rep = FamilyReport::new("formulas");
    let tol = 1e-12;

    // Gain cap at unit norms.
    let sched = Schedule::geometric(3, 100.0, 0.9, 0.9, 1000.0).unwrap();
    let bi = BoundInputs {
        lambda: 1.0,
        a_norm: 1.0,
        sched: sched.clone(),
        big_n: 20,
        n: 10,
        m: 5,
        s: 8,
        y_fro: 1.0,
        b_in: 1.0,
        b_out: 1.0,
        delta: 0.05,
    };
    let (_, cap) = bounds::gamma_seq(&bi);
    rep.record(tol - (cap - 13.0).abs());

    // Geometric series value at the capped gain.
    rep.record(tol - (bounds::zeta(13.0, 2) - 14.0).abs());

    // Two-layer aggregate via the closed product identity.
    rep.record(tol - (bounds::kappa(13.0, 2) - 156.0).abs());

    // One-layer perturbation constant 2‖A‖‖Y‖_F.
    let one = BoundInputs {
        sched: Schedule::geometric(1, 100.0, 0.9, 0.9, 1000.0).unwrap(),
        a_norm: 2.3,
        y_fro: 4.2,
        ..bi
    };
    let k1 = bounds::k_l_general(&one).unwrap().k_l;
    rep.record(tol - (k1 - 2.0 * 2.3 * 4.2).abs());

    // Multiplier decay root at mu = 100, envelope 1000.
    let root = (100.0f64 / 1000.0).sqrt();
    let tp = (1.0 - root) / (1.0 + root);
    match sched.rule {
        crate::schedule::ScheduleRule::Geometric { theta_prime, .. } => {
            rep.record(tol - (theta_prime - tp).abs());
            rep.record(2e-6 - (theta_prime - 0.519495).abs());
        }
        _ => rep.fail("geometric schedule lost its rule tag"),
    }
    rep
}

/// Materialized layer blocks obey 2‖G¹‖+2‖G²‖+1 ≤ Γ_k ≤ γ on random draws.
pub fn layer_gain_family(opts: &VerifyOptions) -> FamilyReport {
    let mut rep = FamilyReport::new("layer_gain");
    let sched = opts.schedule();
    for d in 0..opts.draws {
        let base = seed::sub_seed(opts.seed, "layer-gain").wrapping_add(d as u64);
        let (a, a_norm) = rescaled_measurement(opts, base);
        let w = random_capped_operator(opts.n, opts.big_n, opts.lambda_cap, base ^ 0x5151);
        if !check_assumptions(&sched, opts.lambda_cap, a_norm).all_hold {
            rep.fail("drawn configuration violates the boundedness assumptions");
            continue;
        }
        let bi = bound_inputs(opts, a_norm, 1.0);
        let (gammas, cap) = bounds::gamma_seq(&bi);
        for k in 0..opts.layers {
            let lm = dense::build_layer(&w, &a, &sched, k);
            let g1 = spectral_norm_default(&lm.g1).unwrap().value;
            let g2 = spectral_norm_default(&lm.g2).unwrap().value;
            let measured = 2.0 * g1 + 2.0 * g2 + 1.0;
            rep.record(gammas[k] - measured);
            rep.record(cap - gammas[k]);
        }
    }
    rep
}

/// Measured state norms stay below both the exact and simplified growth
/// bounds after every layer.
pub fn state_growth_family(opts: &VerifyOptions) -> FamilyReport {
    let mut rep = FamilyReport::new("state_growth");
    let sched = opts.schedule();
    for d in 0..opts.draws {
        let base = seed::sub_seed(opts.seed, "state-growth").wrapping_add(d as u64);
        let (a, a_norm) = rescaled_measurement(opts, base);
        let w = random_capped_operator(opts.n, opts.big_n, opts.lambda_cap, base ^ 0xabcd);
        let y = random_y(opts.m, opts.s, base ^ 0x77);
        if !check_assumptions(&sched, opts.lambda_cap, a_norm).all_hold {
            rep.fail("drawn configuration violates the boundedness assumptions");
            continue;
        }
        let cfg = DecoderConfig::new(sched.clone(), 1e9, 1e-3).unwrap();
        let (_, states) = match net::forward_states(&w, &y, &cfg, &a) {
            Ok(v) => v,
            Err(e) => {
                rep.fail(&format!("forward failed: {e}"));
                continue;
            }
        };
        let mut bi = bound_inputs(opts, a_norm, frobenius_norm(&y));
        bi.sched = sched.clone();
        for (k, st) in states.iter().enumerate() {
            let measured = st.fro_norm();
            let (exact, simplified) = bounds::f_norm_bound(&bi, k + 1).unwrap();
            rep.record(exact - measured);
            rep.record(simplified - measured);
        }
    }
    rep
}

/// Everything the perturbation family needs from one forward run.
pub type StatesAndOutput = (Mat, Vec<DualState>);

/// Intermediate-decoder perturbation checks against the Lipschitz constants,
/// plus decoder-level contraction through the affine map and clip. The
/// forward implementation is injectable so a corrupted layer map is caught
/// by the exact consistency preconditions (the norm inequalities alone are
/// sign-insensitive).
pub fn lipschitz_family_with<F>(opts: &VerifyOptions, forward_impl: F) -> FamilyReport
where
    F: Fn(&Mat, &Mat, &DecoderConfig, &Mat) -> Result<StatesAndOutput, NetError>,
{
    let mut rep = FamilyReport::new("lipschitz");
    let sched = opts.schedule();
    let cfg = DecoderConfig::new(sched.clone(), 1e9, 1e-3).unwrap();

    // Precondition 1: the first layer of the provided forward equals one
    // solver step, column by column.
    {
        let base = seed::sub_seed(opts.seed, "lipschitz-consistency");
        let (a, _) = rescaled_measurement(opts, base);
        let w = random_capped_operator(opts.n, opts.big_n, opts.lambda_cap, base ^ 0x1111);
        let y = random_y(opts.m, opts.s, base ^ 0x2222);
        match forward_impl(&w, &y, &cfg, &a) {
            Ok((_, states)) => {
                let first = &states[0];
                let mut worst = 0.0f64;
                for j in 0..opts.s {
                    let prob = AcfProblem::new(&a, &w, y.col(j), sched.mu, cfg.eps).unwrap();
                    let st = acf_step(&AcfState::zero(&prob), &prob, 1.0, 1.0, sched.theta[1])
                        .unwrap();
                    for i in 0..opts.big_n {
                        worst = worst.max((first.z1[(i, j)] - st.z1[i]).abs());
                    }
                    for i in 0..opts.m {
                        worst = worst.max((first.z2[(i, j)] - st.z2[i]).abs());
                    }
                }
                rep.record(1e-10 - worst);
                if worst > 1e-10 {
                    rep.fail("first layer disagrees with the solver step");
                }
                // Precondition 2: all layers match the dense materialization.
                let dense_states = dense::dense_forward_states(&w, &a, &cfg, &y);
                let mut worst_dense = 0.0f64;
                for (k, vd) in dense_states.iter().enumerate() {
                    let fast = states[k].stack();
                    for (x, yv) in vd.as_slice().iter().zip(fast.as_slice()) {
                        worst_dense = worst_dense.max((x - yv).abs());
                    }
                }
                let scale: f64 = dense_states
                    .iter()
                    .map(frobenius_norm)
                    .fold(1.0, f64::max);
                rep.record(1e-10 * scale - worst_dense);
                if worst_dense > 1e-10 * scale {
                    rep.fail("layer states disagree with the dense block path");
                }
            }
            Err(e) => rep.fail(&format!("forward failed: {e}")),
        }
    }

    for d in 0..opts.pairs {
        let base = seed::sub_seed(opts.seed, "lipschitz").wrapping_add(d as u64);
        let (a, a_norm) = rescaled_measurement(opts, base);
        if !check_assumptions(&sched, opts.lambda_cap, a_norm).all_hold {
            rep.fail("drawn configuration violates the boundedness assumptions");
            continue;
        }
        let w1 = random_capped_operator(opts.n, opts.big_n, opts.lambda_cap, base ^ 0xaaaa);
        let w2 = random_capped_operator(opts.n, opts.big_n, opts.lambda_cap, base ^ 0xbbbb);
        let y = random_y(opts.m, opts.s, base ^ 0xcccc);

        let (dec1, st1) = match forward_impl(&w1, &y, &cfg, &a) {
            Ok(v) => v,
            Err(e) => {
                rep.fail(&format!("forward failed: {e}"));
                continue;
            }
        };
        let (dec2, st2) = match forward_impl(&w2, &y, &cfg, &a) {
            Ok(v) => v,
            Err(e) => {
                rep.fail(&format!("forward failed: {e}"));
                continue;
            }
        };

        let dw_spec = spectral_norm_default(&w1.sub(&w2)).unwrap().value;
        let dw_fro = frobenius_norm(&w1.sub(&w2));
        let bi = bound_inputs(opts, a_norm, frobenius_norm(&y));
        let k_gen = bounds::k_l_general(&bi).unwrap().k_l;
        let (k_simpl, _) = bounds::k_l_simplified(&bi).unwrap();

        // Final intermediate states of both runs.
        let last1 = st1.last().unwrap();
        let last2 = st2.last().unwrap();
        let dz = {
            let d1 = last1.z1.sub(&last2.z1);
            let d2 = last1.z2.sub(&last2.z2);
            let d3 = last1.u1.sub(&last2.u1);
            let d4 = last1.u2.sub(&last2.u2);
            (frobenius_norm(&d1).powi(2)
                + frobenius_norm(&d2).powi(2)
                + frobenius_norm(&d3).powi(2)
                + frobenius_norm(&d4).powi(2))
            .sqrt()
        };
        rep.record(k_gen * dw_spec - dz);
        rep.record(k_simpl * dw_spec - dz);

        // Decoder-level contraction through the affine map and clip.
        let ddec = frobenius_norm(&dec1.sub(&dec2));
        let rho = (opts.lambda_cap + a_norm) / sched.mu;
        rep.record(rho * k_gen * dw_fro - ddec);
    }
    rep
}

/// The perturbation family with the production forward pass.
pub fn lipschitz_family(opts: &VerifyOptions) -> FamilyReport {
    lipschitz_family_with(opts, net::forward_states)
}

/// One finite-difference gradient check at the standard toy size. Returns
/// None when the instance lands within 1e-4 of a kink or of the clip level
/// (the caller redraws), otherwise the maximum relative component error.
pub fn gradient_check_case(seed_v: u64) -> Option<f64> {
    let (n, m, big_n, s, layers) = (6, 3, 8, 4, 3);
    let a = gaussian_measurement(m, n, seed_v).unwrap();
    let w = init_learnable(n, big_n, InitScheme::Normal, seed_v ^ 0x11).unwrap().w;
    let y = random_y(m, s, seed_v ^ 0x22);
    let x_true = {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = seed::rng(seed_v ^ 0x33);
        Mat::from_vec(
            n,
            s,
            (0..n * s).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        )
        .unwrap()
    };
    let sched = Schedule::geometric(layers, 100.0, 0.9, 0.9, 1000.0).unwrap();
    // A clip level low enough that some columns clip on typical draws.
    let cfg = DecoderConfig::new(sched, 0.8, 1e-3).unwrap();

    let (xhat, cache) = forward(&w, &y, &cfg, &a).unwrap();
    if cache.kink_margin <= 1e-4 || cache.clip_margin <= 1e-4 {
        return None;
    }
    let (_, gbar) = mse_loss(&xhat, &x_true).unwrap();
    let grad = backward(&cache, &gbar, &w, &a, &cfg).unwrap();

    let h = 1e-6;
    let g_max = grad.max_abs();
    // Central differences cannot resolve derivatives below the cancellation
    // noise of the loss evaluation; components under that floor are held to
    // the corresponding absolute bar instead of a relative one.
    let (loss0, _) = mse_loss(&xhat, &x_true).unwrap();
    let fd_noise = loss0.abs() * f64::EPSILON / (2.0 * h);
    let floor = (4.0 * fd_noise / 1e-5).max(1e-3 * g_max);
    let mut max_rel = 0.0f64;
    for i in 0..big_n {
        for j in 0..n {
            let mut wp = w.clone();
            wp[(i, j)] += h;
            let (lp, _) = mse_loss(&decode(&wp, &y, &cfg, &a).unwrap(), &x_true).unwrap();
            let mut wm = w.clone();
            wm[(i, j)] -= h;
            let (lm, _) = mse_loss(&decode(&wm, &y, &cfg, &a).unwrap(), &x_true).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let an = grad[(i, j)];
            let denom = an.abs().max(fd.abs()).max(floor);
            max_rel = max_rel.max((an - fd).abs() / denom);
        }
    }
    Some(max_rel)
}

/// Hand-derived gradients match central finite differences.
pub fn gradient_family(opts: &VerifyOptions) -> FamilyReport {
    let mut rep = FamilyReport::new("gradient");
    let mut done = 0;
    let mut attempt = 0u64;
    while done < opts.grad_instances && attempt < 20 * opts.grad_instances as u64 {
        let seed_v = seed::sub_seed(opts.seed, "gradient").wrapping_add(attempt);
        attempt += 1;
        match gradient_check_case(seed_v) {
            None => continue,
            Some(max_rel) => {
                done += 1;
                rep.record(1e-5 - max_rel);
            }
        }
    }
    if done < opts.grad_instances {
        rep.fail("could not draw enough kink-free instances");
    }
    rep
}

/// No decoder output column ever exceeds the clip level.
pub fn clipping_family(opts: &VerifyOptions) -> FamilyReport {
    let mut rep = FamilyReport::new("clipping");
    let sched = opts.schedule();
    let b_out = 1.0;
    let cfg = DecoderConfig::new(sched, b_out, 1e-3).unwrap();
    for d in 0..opts.draws {
        let base = seed::sub_seed(opts.seed, "clipping").wrapping_add(d as u64);
        let a = gaussian_measurement(opts.m, opts.n, base).unwrap();
        let w = random_capped_operator(opts.n, opts.big_n, opts.lambda_cap, base ^ 0x99);
        let y = random_y(opts.m, opts.s, base ^ 0x55);
        match decode(&w, &y, &cfg, &a) {
            Ok(xhat) => {
                for j in 0..xhat.cols() {
                    rep.record(b_out + 1e-12 - xhat.col_norm_sq(j).sqrt());
                }
            }
            Err(e) => rep.fail(&format!("decode failed: {e}")),
        }
    }
    rep
}

/// Run every family with the given options.
pub fn run_all(opts: &VerifyOptions) -> Result<VerifyReport, String> {
    opts.validate()?;
    let families = vec![
        formula_family(),
        layer_gain_family(opts),
        state_growth_family(opts),
        lipschitz_family(opts),
        gradient_family(opts),
        clipping_family(opts),
    ];
    let all_pass = families.iter().all(|f| f.pass);
    Ok(VerifyReport { families, all_pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_opts() -> VerifyOptions {
        VerifyOptions {
            draws: 8,
            pairs: 6,
            grad_instances: 2,
            layers: 3,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn all_families_pass_at_toy_size() {
        let rep = run_all(&quick_opts()).unwrap();
        for f in &rep.families {
            assert!(
                f.pass,
                "family {} failed: {} violations, margin {}, {}",
                f.name, f.violations, f.worst_margin, f.detail
            );
        }
        assert!(rep.all_pass);
    }

    #[test]
    fn rejects_zero_layers() {
        let opts = VerifyOptions {
            layers: 0,
            ..VerifyOptions::default()
        };
        assert!(run_all(&opts).is_err());
    }

    #[test]
    fn injected_sign_error_fails_lipschitz_family() {
        // A forward with the cross-block sign flipped in the truncation
        // pre-activation is a different network; the exact consistency
        // preconditions must catch it.
        let opts = quick_opts();
        let corrupted = |w: &Mat, y: &Mat, cfg: &DecoderConfig, a: &Mat| {
            corrupted_forward(w, y, cfg, a)
        };
        let rep = lipschitz_family_with(&opts, corrupted);
        assert!(!rep.pass, "corrupted forward must fail the family");
    }

    /// Layer iteration with a deliberate sign error on the WAᵀ cross block
    /// feeding the truncation (test fixture for the mutation check).
    fn corrupted_forward(
        w: &Mat,
        y: &Mat,
        cfg: &DecoderConfig,
        a: &Mat,
    ) -> Result<StatesAndOutput, NetError> {
        use crate::linalg::gemm;
        let sched = &cfg.schedule;
        let layers = sched.layers();
        let (m, s) = y.shape();
        let big_n = w.rows();
        let mu_inv = 1.0 / sched.mu;
        let x0 = a.matmul_opts(true, y, false, 1.0);
        let mut z1 = Mat::zeros(big_n, s);
        let mut z2 = Mat::zeros(m, s);
        let mut u1 = Mat::zeros(big_n, s);
        let mut u2 = Mat::zeros(m, s);
        let mut states = Vec::new();
        for k in 0..layers {
            let theta = sched.theta[k];
            let beta1 = sched.t1[k] / theta;
            let beta2 = sched.t2[k] / theta;
            let mut zdot1 = z1.scale(theta);
            zdot1.axpy(1.0 - theta, &u1);
            let mut zdot2 = z2.scale(theta);
            zdot2.axpy(1.0 - theta, &u2);
            let mut x = x0.clone();
            gemm(mu_inv, w, true, &zdot1, false, 1.0, &mut x);
            gemm(mu_inv, a, true, &zdot2, false, 1.0, &mut x);
            // Sign error: the dual-interpolation feeds the truncation with a
            // flipped measurement contribution.
            let mut x_wrong = x0.clone();
            gemm(mu_inv, w, true, &zdot1, false, 1.0, &mut x_wrong);
            gemm(-mu_inv, a, true, &zdot2, false, 1.0, &mut x_wrong);
            let mut p1 = zdot1.clone();
            gemm(-beta1, w, false, &x_wrong, false, 1.0, &mut p1);
            let mut p2 = zdot2.clone();
            p2.axpy(beta2, y);
            gemm(-beta2, a, false, &x, false, 1.0, &mut p2);
            let tau1 = beta1;
            let tau2 = beta2 * cfg.eps;
            for (dst, src) in [(&mut z1, (&p1, tau1, true)), (&mut z2, (&p2, tau2, false))] {
                let (p, tau, is_trunc) = src;
                let mut out = Mat::zeros(p.rows(), p.cols());
                for (o, &v) in out.as_mut_slice().iter_mut().zip(p.as_slice()) {
                    *o = if is_trunc {
                        crate::operators::truncate_scalar(v, tau)
                    } else {
                        crate::operators::soft_threshold_scalar(v, tau)
                    };
                }
                *dst = out;
            }
            let mut u1n = u1.scale(1.0 - theta);
            u1n.axpy(theta, &z1);
            u1 = u1n;
            let mut u2n = u2.scale(1.0 - theta);
            u2n.axpy(theta, &z2);
            u2 = u2n;
            states.push(DualState {
                z1: z1.clone(),
                z2: z2.clone(),
                u1: u1.clone(),
                u2: u2.clone(),
            });
        }
        let theta_l = sched.theta[layers];
        let mut zd1 = z1.scale(theta_l);
        zd1.axpy(1.0 - theta_l, &u1);
        let mut zd2 = z2.scale(theta_l);
        zd2.axpy(1.0 - theta_l, &u2);
        let mut xhat = x0;
        gemm(mu_inv, w, true, &zd1, false, 1.0, &mut xhat);
        gemm(mu_inv, a, true, &zd2, false, 1.0, &mut xhat);
        Ok((xhat, states))
    }
}
