//! Dense real matrix kernels: storage, products, norms, random generation and
//! the DMAT serialization format.
//!
//! Everything is 64-bit and row-major. Products go through `matrixmultiply`;
//! the rest is hand-rolled. All operations are pure functions over immutable
//! inputs and safe to call from multiple threads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::seed;

/// Errors from matrix construction, measurement and IO.
#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("power iteration did not converge after {iterations} iterations (estimate {estimate}, residual {residual})")]
    NotConverged {
        estimate: f64,
        iterations: usize,
        residual: f64,
    },
    #[error("bad magic bytes: expected \"DMAT\"")]
    BadMagic,
    #[error("unsupported DMAT version {0}")]
    BadVersion(u32),
    #[error("truncated payload: expected {expected} values, got {got}")]
    Truncated { expected: u64, got: u64 },
    #[error("dimensions {rows}x{cols} overflow the addressable size")]
    DimOverflow { rows: u64, cols: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense row-major matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// Zero matrix. Panics on zero-sized dimensions; every matrix in this
    /// crate has at least one row and one column.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "Mat requires rows >= 1, cols >= 1");
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from row-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows < 1 || cols < 1 {
            return Err(LinalgError::InvalidDimensions(format!(
                "rows={rows}, cols={cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(LinalgError::InvalidDimensions(format!(
                "data length {} does not equal {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy of column `c`.
    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_col(&mut self, c: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows);
        for (r, &x) in v.iter().enumerate() {
            self[(r, c)] = x;
        }
    }

    /// Columns `lo..hi` as a new matrix.
    pub fn col_range(&self, lo: usize, hi: usize) -> Mat {
        assert!(lo < hi && hi <= self.cols);
        let mut out = Mat::zeros(self.rows, hi - lo);
        for r in 0..self.rows {
            let src = &self.row(r)[lo..hi];
            out.as_mut_slice()[r * (hi - lo)..(r + 1) * (hi - lo)].copy_from_slice(src);
        }
        out
    }

    /// Gather the given columns into a new matrix, in the order given.
    pub fn gather_cols(&self, idx: &[usize]) -> Mat {
        assert!(!idx.is_empty());
        let mut out = Mat::zeros(self.rows, idx.len());
        for (j, &c) in idx.iter().enumerate() {
            for r in 0..self.rows {
                out[(r, j)] = self[(r, c)];
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Mat {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v *= s;
        }
        out
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }

    /// self + alpha * other, shapes must match.
    pub fn add_scaled(&self, alpha: f64, other: &Mat) -> Mat {
        assert_eq!(self.shape(), other.shape());
        let mut out = self.clone();
        for (v, &o) in out.data.iter_mut().zip(other.data.iter()) {
            *v += alpha * o;
        }
        out
    }

    /// self += alpha * other.
    pub fn axpy(&mut self, alpha: f64, other: &Mat) {
        assert_eq!(self.shape(), other.shape());
        for (v, &o) in self.data.iter_mut().zip(other.data.iter()) {
            *v += alpha * o;
        }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.add_scaled(-1.0, other)
    }

    /// Squared Euclidean norm of column `c`.
    pub fn col_norm_sq(&self, c: usize) -> f64 {
        (0..self.rows).map(|r| self[(r, c)] * self[(r, c)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// C = alpha * op(self) * op(other), allocating C.
    pub fn matmul_opts(&self, trans_self: bool, other: &Mat, trans_other: bool, alpha: f64) -> Mat {
        let (m, k1) = if trans_self {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        };
        let (k2, n) = if trans_other {
            (other.cols, other.rows)
        } else {
            (other.rows, other.cols)
        };
        assert_eq!(k1, k2, "inner dimensions must agree");
        let mut c = Mat::zeros(m, n);
        gemm(alpha, self, trans_self, other, trans_other, 0.0, &mut c);
        c
    }

    /// C = self * other.
    pub fn matmul(&self, other: &Mat) -> Mat {
        self.matmul_opts(false, other, false, 1.0)
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// C = alpha * op(a) * op(b) + beta * C.
pub fn gemm(alpha: f64, a: &Mat, ta: bool, b: &Mat, tb: bool, beta: f64, c: &mut Mat) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "inner dimensions must agree");
    assert_eq!(c.shape(), (m, n), "output shape must agree");
    // Row-major strides; a transposed view swaps them.
    let (rsa, csa) = if ta {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    let rsc = c.cols as isize;
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

/// Matrix-vector product op(a) * x.
pub fn matvec(a: &Mat, ta: bool, x: &[f64]) -> Vec<f64> {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    assert_eq!(x.len(), k);
    let mut y = vec![0.0; m];
    if ta {
        for r in 0..a.rows {
            let xr = x[r];
            if xr != 0.0 {
                let row = a.row(r);
                for c in 0..a.cols {
                    y[c] += row[c] * xr;
                }
            }
        }
    } else {
        for r in 0..a.rows {
            let row = a.row(r);
            let mut acc = 0.0;
            for c in 0..a.cols {
                acc += row[c] * x[c];
            }
            y[r] = acc;
        }
    }
    y
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(m: &Mat) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn vec_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of a spectral-norm estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    /// Estimated largest singular value.
    pub value: f64,
    /// Power-iteration steps taken.
    pub iterations: usize,
    /// Relative residual ‖Gv − σ²v‖ / σ² at the returned vector.
    pub residual: f64,
}

pub const SPECTRAL_TOL: f64 = 1e-10;
pub const SPECTRAL_MAX_ITER: usize = 10_000;

/// Largest singular value by power iteration on the Gram matrix, run in the
/// smaller of the row/column spaces. The start vector comes from a dedicated
/// fixed sub-seed, so the estimate is a pure function of the matrix.
pub fn spectral_norm(m: &Mat, tol: f64, max_iter: usize) -> Result<SpectralEstimate, LinalgError> {
    if !(tol > 0.0) {
        return Err(LinalgError::InvalidDimensions(format!(
            "tol must be positive, got {tol}"
        )));
    }
    if max_iter < 1 {
        return Err(LinalgError::InvalidDimensions(
            "max_iter must be at least 1".into(),
        ));
    }
    // Power iteration is undefined on the zero map.
    if m.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(SpectralEstimate {
            value: 0.0,
            iterations: 0,
            residual: 0.0,
        });
    }
    // Iterate v <- normalize(Gram v) in the smaller space.
    let tall = m.rows >= m.cols;
    let dim = m.rows.min(m.cols);
    let mut rng = seed::rng_from((m.rows as u64) << 32 | m.cols as u64, "power-start");
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let nv = vec_norm(&v);
    for x in v.iter_mut() {
        *x /= nv;
    }

    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        // w = Gram * v  (MᵀM v for tall matrices, MMᵀ v otherwise)
        let w = if tall {
            matvec(m, true, &matvec(m, false, &v))
        } else {
            matvec(m, false, &matvec(m, true, &v))
        };
        lambda = vec_dot(&v, &w).max(0.0);
        if lambda == 0.0 {
            // v landed exactly in the null space; redraw.
            v = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let n = vec_norm(&v);
            for x in v.iter_mut() {
                *x /= n;
            }
            continue;
        }
        let res: f64 = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - lambda * vi) * (wi - lambda * vi))
            .sum::<f64>()
            .sqrt();
        residual = res / lambda;
        if residual <= tol {
            return Ok(SpectralEstimate {
                value: lambda.sqrt(),
                iterations: it,
                residual,
            });
        }
        let nw = vec_norm(&w);
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Err(LinalgError::NotConverged {
        estimate: lambda.sqrt(),
        iterations: max_iter,
        residual,
    })
}

/// Spectral norm with default tolerance and iteration budget.
pub fn spectral_norm_default(m: &Mat) -> Result<SpectralEstimate, LinalgError> {
    spectral_norm(m, SPECTRAL_TOL, SPECTRAL_MAX_ITER)
}

/// Gaussian measurement matrix with i.i.d. N(0,1) entries scaled by 1/√m.
pub fn gaussian_measurement(m: usize, n: usize, seed: u64) -> Result<Mat, LinalgError> {
    if m < 1 || m >= n {
        return Err(LinalgError::InvalidDimensions(format!(
            "need 1 <= m < n, got m={m}, n={n}"
        )));
    }
    let mut rng = seed::rng(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let data = (0..m * n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    Mat::from_vec(m, n, data)
}

/// Scale `w` onto the spectral ball of radius `lambda_cap` if it sticks out.
///
/// The shrink factor carries a 1e-8 inset so the rescaled matrix measures
/// strictly inside the ball; a second application then takes the unchanged
/// branch, which makes the projection exactly idempotent.
pub fn project_spectral_ball(w: &Mat, lambda_cap: f64) -> Result<Mat, LinalgError> {
    assert!(lambda_cap > 0.0, "lambda_cap must be positive");
    let est = spectral_norm_default(w)?;
    if est.value <= lambda_cap {
        Ok(w.clone())
    } else {
        Ok(w.scale(lambda_cap / est.value * (1.0 - 1e-8)))
    }
}

const DMAT_MAGIC: &[u8; 4] = b"DMAT";
const DMAT_VERSION: u32 = 1;

/// Write `m` in the DMAT format: magic "DMAT", little-endian u32 version = 1,
/// u64 rows, u64 cols, then rows*cols little-endian f64 values in row-major
/// order. No padding, no compression.
pub fn write_dmat<P: AsRef<Path>>(path: P, m: &Mat) -> Result<(), LinalgError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DMAT_MAGIC)?;
    w.write_all(&DMAT_VERSION.to_le_bytes())?;
    w.write_all(&(m.rows as u64).to_le_bytes())?;
    w.write_all(&(m.cols as u64).to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a DMAT file; the round trip through [`write_dmat`] is bit-exact.
pub fn read_dmat<P: AsRef<Path>>(path: P) -> Result<Mat, LinalgError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DMAT_MAGIC {
        return Err(LinalgError::BadMagic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != DMAT_VERSION {
        return Err(LinalgError::BadVersion(version));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8);
    let count = rows
        .checked_mul(cols)
        .filter(|&c| c <= (usize::MAX / 8) as u64 && rows >= 1 && cols >= 1)
        .ok_or(LinalgError::DimOverflow { rows, cols })?;
    if rows < 1 || cols < 1 {
        return Err(LinalgError::DimOverflow { rows, cols });
    }
    let mut data = Vec::with_capacity(count as usize);
    for i in 0..count {
        if let Err(e) = r.read_exact(&mut b8) {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                return Err(LinalgError::Truncated {
                    expected: count,
                    got: i,
                });
            }
            return Err(e.into());
        }
        data.push(f64::from_le_bytes(b8));
    }
    Mat::from_vec(rows as usize, cols as usize, data)
}
