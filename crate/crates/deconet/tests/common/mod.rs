//! Shared test support: an independent primal-dual reference solver for the
//! smoothed analysis-l1 problem with an equality measurement constraint, a
//! small dense linear solver, and rank statistics.
//!
//! The reference solver is deliberately independent of the solver under test:
//! it runs an accelerated Chambolle-Pock iteration on the saddle formulation,
//! identifies the active set, polishes by solving the stationarity system
//! exactly, and reports the worst KKT residual of the polished point.

#![allow(dead_code)]

use deconet::linalg::{matvec, vec_norm, Mat};

/// Gaussian elimination with partial pivoting; None on (near-)singularity.
pub fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Some(x)
}

pub struct OracleSolution {
    pub x: Vec<f64>,
    /// Worst KKT residual of the polished point (stationarity, feasibility,
    /// dual feasibility, sign consistency).
    pub kkt_residual: f64,
}

/// Reference minimizer of  min (μ/2)‖x−x₀‖₂² + ‖Wx‖₁  s.t.  Ax = y.
pub fn reference_minimizer(
    a: &Mat,
    w: &Mat,
    y: &[f64],
    x0: &[f64],
    mu: f64,
    cp_iters: usize,
) -> OracleSolution {
    let n = a.cols();
    let m = a.rows();
    let big_n = w.rows();

    // ‖K‖ for the stacked K = [W; A] via power iteration on WᵀW + AᵀA.
    let mut k_norm = 0.0f64;
    {
        let mut v: Vec<f64> = (0..n)
            .map(|i| ((i * 37 + 11) % 97) as f64 / 97.0 - 0.4)
            .collect();
        for _ in 0..500 {
            let wv = matvec(w, false, &v);
            let av = matvec(a, false, &v);
            let mut g = matvec(w, true, &wv);
            let g2 = matvec(a, true, &av);
            for i in 0..n {
                g[i] += g2[i];
            }
            let norm = vec_norm(&g);
            k_norm = norm;
            for x in g.iter().zip(v.iter_mut()) {
                *x.1 = *x.0 / norm;
            }
        }
    }
    let l = k_norm.sqrt();
    let mut tau = 1.0 / l;
    let mut sigma = 1.0 / l;

    // Accelerated primal-dual iteration (the quadratic coupling term is
    // μ-strongly convex, which drives the step adaptation).
    let mut x = x0.to_vec();
    let mut xbar = x.clone();
    let mut q1 = vec![0.0; big_n];
    let mut q2 = vec![0.0; m];
    for _ in 0..cp_iters {
        let wxb = matvec(w, false, &xbar);
        let axb = matvec(a, false, &xbar);
        for i in 0..big_n {
            q1[i] = (q1[i] + sigma * wxb[i]).clamp(-1.0, 1.0);
        }
        for i in 0..m {
            q2[i] += sigma * (axb[i] - y[i]);
        }
        let wq = matvec(w, true, &q1);
        let aq = matvec(a, true, &q2);
        let x_old = x.clone();
        for i in 0..n {
            let v = x[i] - tau * (wq[i] + aq[i]);
            x[i] = (v + tau * mu * x0[i]) / (1.0 + tau * mu);
        }
        let theta = 1.0 / (1.0 + 2.0 * mu * tau).sqrt();
        tau *= theta;
        sigma /= theta;
        for i in 0..n {
            xbar[i] = x[i] + theta * (x[i] - x_old[i]);
        }
    }

    // Active-set polish: fix the sign pattern of Wx, solve the stationarity
    // system exactly for (x, zero-set duals, equality duals).
    let wx = matvec(w, false, &x);
    let id_tol = 1e-6;
    let z_set: Vec<usize> = (0..big_n).filter(|&i| wx[i].abs() <= id_tol).collect();
    let sgn: Vec<f64> = (0..big_n)
        .map(|i| if wx[i].abs() <= id_tol { 0.0 } else { wx[i].signum() })
        .collect();
    let nz = z_set.len();
    let dim = n + nz + m;
    let mut mat = vec![vec![0.0; dim]; dim];
    let mut rhs = vec![0.0; dim];
    let mut w_sgn = vec![0.0; n];
    for i in 0..big_n {
        if sgn[i] != 0.0 {
            for c in 0..n {
                w_sgn[c] += w[(i, c)] * sgn[i];
            }
        }
    }
    for r in 0..n {
        mat[r][r] = mu;
        for (j, &zi) in z_set.iter().enumerate() {
            mat[r][n + j] = w[(zi, r)];
        }
        for j in 0..m {
            mat[r][n + nz + j] = a[(j, r)];
        }
        rhs[r] = mu * x0[r] - w_sgn[r];
    }
    // Tiny ridge on the dual block keeps the system solvable when the active
    // rows are linearly dependent; it perturbs x by O(1e-12) at most.
    for (j, &zi) in z_set.iter().enumerate() {
        for c in 0..n {
            mat[n + j][c] = w[(zi, c)];
        }
        mat[n + j][n + j] = -1e-12;
    }
    for j in 0..m {
        for c in 0..n {
            mat[n + nz + j][c] = a[(j, c)];
        }
        mat[n + nz + j][n + nz + j] = -1e-12;
        rhs[n + nz + j] = y[j];
    }
    let sol = solve_dense(&mut mat, &mut rhs).expect("stationarity system solvable");
    let x_pol = sol[0..n].to_vec();
    let lam = &sol[n..n + nz];
    let nu = &sol[n + nz..];

    // KKT residual of the polished point.
    let wxp = matvec(w, false, &x_pol);
    let axp = matvec(a, false, &x_pol);
    let mut q1_full = sgn.clone();
    for (j, &zi) in z_set.iter().enumerate() {
        q1_full[zi] = lam[j];
    }
    let wq = matvec(w, true, &q1_full);
    let aq = matvec(a, true, nu);
    let mut res = 0.0f64;
    for i in 0..n {
        res = res.max((mu * (x_pol[i] - x0[i]) + wq[i] + aq[i]).abs());
    }
    for j in 0..m {
        res = res.max((axp[j] - y[j]).abs());
    }
    for i in 0..big_n {
        res = res.max((q1_full[i].abs() - 1.0).max(0.0));
        if sgn[i] != 0.0 && wxp[i].signum() != sgn[i] && wxp[i].abs() > 1e-9 {
            res = res.max(1.0);
        }
    }
    OracleSolution {
        x: x_pol,
        kkt_residual: res,
    }
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

pub fn rel_distance(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    num / vec_norm(b).max(1e-300)
}
