//! Dense materialization of the layer weight blocks, for toy-size oracle
//! checks and for measuring the block norms the growth bounds cap.
//!
//! Acting on the stacked state v = (z¹; z²; u¹; u²), layer k applies
//! v' = D_k v + Θ_k σ_k(v) with the two pre-activation row blocks
//!
//!   p¹ = G¹_k v − b¹_k,  b¹_k = θ_k⁻¹t¹_k · W x₀,
//!   p² = G²_k v − b²_k,  b²_k = −θ_k⁻¹t²_k · (y − A x₀),
//!
//! where, with c₁ = θ_k⁻¹t¹_kμ⁻¹ and c₂ = θ_k⁻¹t²_kμ⁻¹,
//!
//!   G¹_k = [ θ_k(I − c₁WWᵀ) | −θ_k c₁ WAᵀ | (1−θ_k)(I − c₁WWᵀ) | −(1−θ_k)c₁ WAᵀ ]
//!   G²_k = [ −θ_k c₂ AWᵀ | θ_k(I − c₂AAᵀ) | −(1−θ_k)c₂ AWᵀ | (1−θ_k)(I − c₂AAᵀ) ].
//!
//! The signs on the cross blocks and on b² carry the same stored-dual
//! convention as the fast path (first layer z² = S(t₀²(y−Ax₀), t₀²ε));
//! flipping the sign of every z²/u² coordinate recovers the conjugate form
//! in which those cross blocks appear with positive sign. Block spectral
//! norms are identical in both conventions.

use crate::linalg::{gemm, Mat};
use crate::net::{DecoderConfig, DualState};
use crate::operators::{soft_threshold_scalar, truncate_scalar};
use crate::schedule::Schedule;

/// Dense weight blocks of one layer plus the diagonal multipliers and the
/// bias rules. p = 2N + 2m.
#[derive(Debug, Clone)]
pub struct LayerMats {
    /// N×p block row feeding the truncation.
    pub g1: Mat,
    /// m×p block row feeding the soft threshold.
    pub g2: Mat,
    /// b¹ = b1_scale · W x₀ per sample.
    pub b1_scale: f64,
    /// b² = b2_scale · (y − A x₀) per sample.
    pub b2_scale: f64,
    /// Diagonal of Θ on the first N+m rows (always 1, the θ₀ convention).
    pub theta_head: f64,
    /// Diagonal of Θ on the last N+m rows (θ_k); D carries 1 − θ there.
    pub theta_tail: f64,
    pub k: usize,
    pub p: usize,
}

/// Materialize the blocks of layer `k` for the given operators and schedule.
pub fn build_layer(w: &Mat, a: &Mat, sched: &Schedule, k: usize) -> LayerMats {
    assert!(k < sched.layers(), "layer index out of range");
    assert_eq!(w.cols(), a.cols(), "operator dimensions must agree");
    let big_n = w.rows();
    let m = a.rows();
    let p = 2 * (big_n + m);
    let theta = sched.theta[k];
    let c1 = sched.t1[k] / (theta * sched.mu);
    let c2 = sched.t2[k] / (theta * sched.mu);

    let wwt = w.matmul_opts(false, w, true, 1.0);
    let wat = w.matmul_opts(false, a, true, 1.0);
    let awt = a.matmul_opts(false, w, true, 1.0);
    let aat = a.matmul_opts(false, a, true, 1.0);

    let mut g1 = Mat::zeros(big_n, p);
    let mut g2 = Mat::zeros(m, p);

    // G1 row block: [θ(I − c1 WWᵀ) | −θ c1 WAᵀ | (1−θ)(I − c1 WWᵀ) | −(1−θ) c1 WAᵀ]
    for r in 0..big_n {
        for c in 0..big_n {
            let base = -c1 * wwt[(r, c)] + if r == c { 1.0 } else { 0.0 };
            g1[(r, c)] = theta * base;
            g1[(r, big_n + m + c)] = (1.0 - theta) * base;
        }
        for c in 0..m {
            let cross = -c1 * wat[(r, c)];
            g1[(r, big_n + c)] = theta * cross;
            g1[(r, 2 * big_n + m + c)] = (1.0 - theta) * cross;
        }
    }
    // G2 row block: [−θ c2 AWᵀ | θ(I − c2 AAᵀ) | −(1−θ) c2 AWᵀ | (1−θ)(I − c2 AAᵀ)]
    for r in 0..m {
        for c in 0..big_n {
            let cross = -c2 * awt[(r, c)];
            g2[(r, c)] = theta * cross;
            g2[(r, big_n + m + c)] = (1.0 - theta) * cross;
        }
        for c in 0..m {
            let base = -c2 * aat[(r, c)] + if r == c { 1.0 } else { 0.0 };
            g2[(r, big_n + c)] = theta * base;
            g2[(r, 2 * big_n + m + c)] = (1.0 - theta) * base;
        }
    }

    LayerMats {
        g1,
        g2,
        b1_scale: sched.t1[k] / theta,
        b2_scale: -sched.t2[k] / theta,
        theta_head: sched.theta[0],
        theta_tail: theta,
        k,
        p,
    }
}

/// Split a stacked p×s state back into its four blocks.
pub fn unstack(v: &Mat, big_n: usize, m: usize) -> DualState {
    let s = v.cols();
    let block = |lo: usize, rows: usize| {
        let mut out = Mat::zeros(rows, s);
        for r in 0..rows {
            for c in 0..s {
                out[(r, c)] = v[(lo + r, c)];
            }
        }
        out
    };
    DualState {
        z1: block(0, big_n),
        z2: block(big_n, m),
        u1: block(big_n + m, big_n),
        u2: block(2 * big_n + m, m),
    }
}

/// Reference forward pass through materialized blocks; returns the stacked
/// state after every layer. Slow; intended for toy sizes only.
pub fn dense_forward_states(w: &Mat, a: &Mat, cfg: &DecoderConfig, y: &Mat) -> Vec<Mat> {
    let sched = &cfg.schedule;
    let big_n = w.rows();
    let m = a.rows();
    let s = y.cols();
    let p = 2 * (big_n + m);

    let x0 = a.matmul_opts(true, y, false, 1.0);
    let wx0 = w.matmul(&x0);
    let mut y_res = y.clone(); // y − A x0 per column
    gemm(-1.0, a, false, &x0, false, 1.0, &mut y_res);

    let mut v = Mat::zeros(p, s);
    let mut out = Vec::with_capacity(sched.layers());
    for k in 0..sched.layers() {
        let lm = build_layer(w, a, sched, k);
        let tau1 = sched.trunc_radius(k);
        let tau2 = sched.shrink_scale(k) * cfg.eps;

        // p1 = G1 v − b1, p2 = G2 v − b2
        let mut p1 = lm.g1.matmul(&v);
        p1.axpy(-lm.b1_scale, &wx0);
        let mut p2 = lm.g2.matmul(&v);
        p2.axpy(-lm.b2_scale, &y_res);

        let mut next = Mat::zeros(p, s);
        for c in 0..s {
            for r in 0..big_n {
                let t = truncate_scalar(p1[(r, c)], tau1);
                next[(r, c)] = lm.theta_head * t;
                next[(big_n + m + r, c)] =
                    (1.0 - lm.theta_tail) * v[(big_n + m + r, c)] + lm.theta_tail * t;
            }
            for r in 0..m {
                let sft = soft_threshold_scalar(p2[(r, c)], tau2);
                next[(big_n + r, c)] = lm.theta_head * sft;
                next[(2 * big_n + m + r, c)] =
                    (1.0 - lm.theta_tail) * v[(2 * big_n + m + r, c)] + lm.theta_tail * sft;
            }
        }
        v = next;
        out.push(v.clone());
    }
    out
}

/// Apply the affine read-out and clip to a stacked final state.
pub fn dense_decode_from_state(
    w: &Mat,
    a: &Mat,
    cfg: &DecoderConfig,
    y: &Mat,
    v_final: &Mat,
) -> Mat {
    let sched = &cfg.schedule;
    let layers = sched.layers();
    let theta_l = sched.theta[layers];
    let mu_inv = 1.0 / sched.mu;
    let big_n = w.rows();
    let m = a.rows();
    let st = unstack(v_final, big_n, m);

    let x0 = a.matmul_opts(true, y, false, 1.0);
    let mut zd1 = st.z1.scale(theta_l);
    zd1.axpy(1.0 - theta_l, &st.u1);
    let mut zd2 = st.z2.scale(theta_l);
    zd2.axpy(1.0 - theta_l, &st.u2);

    let mut xhat = x0;
    gemm(mu_inv, w, true, &zd1, false, 1.0, &mut xhat);
    gemm(mu_inv, a, true, &zd2, false, 1.0, &mut xhat);
    for j in 0..xhat.cols() {
        let norm = xhat.col_norm_sq(j).sqrt();
        if norm > cfg.b_out {
            let scale = cfg.b_out / norm;
            for r in 0..xhat.rows() {
                xhat[(r, j)] *= scale;
            }
        }
    }
    xhat
}
