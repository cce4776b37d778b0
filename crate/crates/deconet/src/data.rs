//! Dataset synthesis, measurement, IDX ingestion, splits and batching.
//!
//! A dataset pairs signal columns X (n×s) with measurements Y = ÃX + E for a
//! normalized matrix Ã and i.i.d. Gaussian noise, and carries the derived
//! constants the decoder and the bounds need: the constraint level ε (mean
//! per-sample residual norm), B_in = max‖y_i‖₂ and B_out = max‖x_i‖₂.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Mat};
use crate::seed;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty dataset or split")]
    Empty,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("IDX: bad magic {found:#010x}, expected {expected:#010x}")]
    IdxBadMagic { found: u32, expected: u32 },
    #[error("IDX: truncated file ({0})")]
    IdxTruncated(String),
    #[error("IDX: dimensions overflow ({0})")]
    IdxOverflow(String),
    #[error("metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Signals, measurements and the derived constants of one experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Mat,
    pub y: Mat,
    pub eps: f64,
    /// Per-sample residual norms ‖y_i − Ãx_i‖₂ (ε is their mean).
    pub eps_per_sample: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    pub b_in: f64,
    pub b_out: f64,
}

/// i.i.d. standard normal signal columns.
pub fn gen_synthetic(n: usize, s: usize, seed_v: u64) -> Result<Mat, DataError> {
    if n < 1 || s < 1 {
        return Err(DataError::InvalidParameter(format!(
            "need n, s >= 1, got n={n}, s={s}"
        )));
    }
    let mut rng = seed::rng(seed_v);
    let data = (0..n * s)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(Mat::from_vec(n, s, data)?)
}

/// Measure X through the normalized matrix with additive N(0, std²) noise.
/// Returns (Y, ε, per-sample residual norms); ε is the mean residual norm,
/// which is the single scalar the solver thresholds take.
pub fn measure(
    x: &Mat,
    a: &Mat,
    noise_std: f64,
    seed_v: u64,
) -> Result<(Mat, f64, Vec<f64>), DataError> {
    if a.cols() != x.rows() {
        return Err(DataError::ShapeMismatch(format!(
            "A has {} columns, X has {} rows",
            a.cols(),
            x.rows()
        )));
    }
    if noise_std < 0.0 {
        return Err(DataError::InvalidParameter(format!(
            "noise_std must be nonnegative, got {noise_std}"
        )));
    }
    let mut y = a.matmul(x);
    let mut per_sample = vec![0.0; x.cols()];
    if noise_std > 0.0 {
        let mut rng = seed::rng(seed_v);
        // Column-major draw so each sample consumes a contiguous noise block.
        for j in 0..y.cols() {
            let mut sq = 0.0;
            for i in 0..y.rows() {
                let e = rng.sample::<f64, _>(StandardNormal) * noise_std;
                y[(i, j)] += e;
                sq += e * e;
            }
            per_sample[j] = sq.sqrt();
        }
    }
    let eps = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok((y, eps, per_sample))
}

/// Largest measurement and signal column norms over the given columns.
pub fn estimate_bounds_constants(x: &Mat, y: &Mat, cols: &[usize]) -> Result<(f64, f64), DataError> {
    if cols.is_empty() {
        return Err(DataError::Empty);
    }
    let mut b_in = 0.0f64;
    let mut b_out = 0.0f64;
    for &j in cols {
        b_in = b_in.max(y.col_norm_sq(j).sqrt());
        b_out = b_out.max(x.col_norm_sq(j).sqrt());
    }
    Ok((b_in, b_out))
}

/// Assemble a dataset: synthesize signals, measure them, derive constants.
/// B_in/B_out are estimated over all columns here; the training split's
/// values are re-estimated by the split consumer.
pub fn build_synthetic(
    a: &Mat,
    n: usize,
    s: usize,
    noise_std: f64,
    root_seed: u64,
) -> Result<Dataset, DataError> {
    let x = gen_synthetic(n, s, seed::sub_seed(root_seed, "signals"))?;
    let (y, eps, eps_per_sample) = measure(&x, a, noise_std, seed::sub_seed(root_seed, "noise"))?;
    let all: Vec<usize> = (0..s).collect();
    let (b_in, b_out) = estimate_bounds_constants(&x, &y, &all)?;
    Ok(Dataset {
        x,
        y,
        eps,
        eps_per_sample,
        noise_std,
        seed: root_seed,
        b_in,
        b_out,
    })
}

/// Train/test column split. The split point is deterministic (no shuffling
/// touches the test columns); only training batches are shuffled per epoch.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split the first round(s*train_frac) columns for training, rest for test.
pub fn split(s: usize, train_frac: f64) -> Result<Split, DataError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DataError::InvalidParameter(format!(
            "train_frac must lie in (0, 1), got {train_frac}"
        )));
    }
    let train_count = ((s as f64) * train_frac).round() as usize;
    if train_count == 0 || train_count >= s {
        return Err(DataError::Empty);
    }
    Ok(Split {
        train: (0..train_count).collect(),
        test: (train_count..s).collect(),
    })
}

/// Split, then batch the training side: seeded shuffle of the training
/// columns chopped into `batch`-sized groups (final partial batch retained);
/// the test side is returned untouched.
pub fn split_and_batch(
    s: usize,
    train_frac: f64,
    batch: usize,
    seed_v: u64,
) -> Result<(Split, Vec<Vec<usize>>), DataError> {
    let sp = split(s, train_frac)?;
    let b = batches(&sp.train, batch, seed_v)?;
    Ok((sp, b))
}

/// Seeded shuffle of the training columns chopped into batches; the final
/// partial batch is retained.
pub fn batches(train: &[usize], batch: usize, seed_v: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if train.is_empty() {
        return Err(DataError::Empty);
    }
    if batch == 0 {
        return Err(DataError::InvalidParameter("batch must be >= 1".into()));
    }
    use rand::seq::SliceRandom;
    let mut order = train.to_vec();
    let mut rng = seed::rng(seed_v);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch).map(|c| c.to_vec()).collect())
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(r: &mut impl Read, what: &str) -> Result<u32, DataError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| DataError::IdxTruncated(what.to_string()))?;
    Ok(u32::from_be_bytes(b))
}

/// Load an IDX image file (big-endian magic 0x00000803, u32 count, rows,
/// cols, then raster-order u8 pixels per image). Images become columns,
/// pixels scaled to [0, 1].
pub fn load_idx<P: AsRef<Path>>(path: P) -> Result<Mat, DataError> {
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    let magic = read_be_u32(&mut f, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::IdxBadMagic {
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = read_be_u32(&mut f, "count")? as usize;
    let rows = read_be_u32(&mut f, "rows")? as usize;
    let cols = read_be_u32(&mut f, "cols")? as usize;
    let pixels = rows
        .checked_mul(cols)
        .and_then(|p| p.checked_mul(count))
        .ok_or_else(|| DataError::IdxOverflow(format!("{count}x{rows}x{cols}")))?;
    if count == 0 || rows == 0 || cols == 0 {
        return Err(DataError::IdxOverflow("zero dimension".into()));
    }
    let mut raw = vec![0u8; pixels];
    f.read_exact(&mut raw)
        .map_err(|_| DataError::IdxTruncated(format!("{pixels} pixels")))?;
    let n = rows * cols;
    let mut m = Mat::zeros(n, count);
    for img in 0..count {
        for p in 0..n {
            m[(p, img)] = raw[img * n + p] as f64 / 255.0;
        }
    }
    Ok(m)
}

/// Load an IDX label file (magic 0x00000801) as a byte vector.
pub fn load_idx_labels<P: AsRef<Path>>(path: P) -> Result<Vec<u8>, DataError> {
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    let magic = read_be_u32(&mut f, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::IdxBadMagic {
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let count = read_be_u32(&mut f, "count")? as usize;
    let mut raw = vec![0u8; count];
    f.read_exact(&mut raw)
        .map_err(|_| DataError::IdxTruncated(format!("{count} labels")))?;
    Ok(raw)
}

/// 2×2 average-pool a stack of square images held as columns (desk-scale
/// downsampling; 28×28 becomes 14×14). Side length must be even.
pub fn downsample_2x2(images: &Mat, side: usize) -> Result<Mat, DataError> {
    if side * side != images.rows() {
        return Err(DataError::ShapeMismatch(format!(
            "{} rows is not {side}x{side}",
            images.rows()
        )));
    }
    if side % 2 != 0 {
        return Err(DataError::InvalidParameter(format!(
            "side {side} must be even"
        )));
    }
    let half = side / 2;
    let mut out = Mat::zeros(half * half, images.cols());
    for j in 0..images.cols() {
        for r in 0..half {
            for c in 0..half {
                let sum = images[(2 * r * side + 2 * c, j)]
                    + images[(2 * r * side + 2 * c + 1, j)]
                    + images[((2 * r + 1) * side + 2 * c, j)]
                    + images[((2 * r + 1) * side + 2 * c + 1, j)];
                out[(r * half + c, j)] = sum / 4.0;
            }
        }
    }
    Ok(out)
}

/// Sidecar stored next to the matrices of a persisted dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub eps: f64,
    pub eps_per_sample: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    pub b_in: f64,
    pub b_out: f64,
    pub a_path: String,
}

/// Write X.dmat, Y.dmat and meta.json into `dir`.
pub fn save_dataset(dir: &Path, ds: &Dataset, a_path: &str) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    linalg::write_dmat(dir.join("X.dmat"), &ds.x)?;
    linalg::write_dmat(dir.join("Y.dmat"), &ds.y)?;
    let meta = DatasetMeta {
        eps: ds.eps,
        eps_per_sample: ds.eps_per_sample.clone(),
        noise_std: ds.noise_std,
        seed: ds.seed,
        b_in: ds.b_in,
        b_out: ds.b_out,
        a_path: a_path.to_string(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| DataError::Meta(e.to_string()))?;
    fs::write(dir.join("meta.json"), json)?;
    Ok(())
}

/// Load a dataset persisted by [`save_dataset`]; returns it with the path of
/// the measurement matrix recorded in the sidecar.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, PathBuf), DataError> {
    let x = linalg::read_dmat(dir.join("X.dmat"))?;
    let y = linalg::read_dmat(dir.join("Y.dmat"))?;
    let raw = fs::read_to_string(dir.join("meta.json"))?;
    let meta: DatasetMeta =
        serde_json::from_str(&raw).map_err(|e| DataError::Meta(e.to_string()))?;
    if x.cols() != y.cols() {
        return Err(DataError::ShapeMismatch(
            "persisted X and Y column counts differ".into(),
        ));
    }
    let a_path = PathBuf::from(&meta.a_path);
    Ok((
        Dataset {
            x,
            y,
            eps: meta.eps,
            eps_per_sample: meta.eps_per_sample,
            noise_std: meta.noise_std,
            seed: meta.seed,
            b_in: meta.b_in,
            b_out: meta.b_out,
        },
        a_path,
    ))
}
