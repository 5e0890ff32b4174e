//! Dataset ingestion, preprocessing, and splits.
//!
//! Formats:
//! * `csv` — numeric comma-separated rows, last column is the target;
//! * `fbin` — header `(n, d)` as 64-bit little-endian counts, then `n·d`
//!   32-bit little-endian row-major values, then `n` 32-bit targets;
//! * `libsvm` — sparse text `label idx:val idx:val …`; column indices are
//!   taken as written.

mod model;

pub use model::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FalkonError, Result};
use crate::kernel::{DenseMatrix, Matrix, SparseMatrix};
use crate::real::Real;
use crate::solver::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Fbin,
    Libsvm,
}

impl std::str::FromStr for DataFormat {
    type Err = FalkonError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "fbin" => Ok(DataFormat::Fbin),
            "libsvm" => Ok(DataFormat::Libsvm),
            other => Err(FalkonError::InvalidArgument(format!(
                "unknown data format '{other}' (expected csv | fbin | libsvm)"
            ))),
        }
    }
}

pub fn load_dataset<T: Real>(path: &Path, format: DataFormat) -> Result<Dataset<T>> {
    match format {
        DataFormat::Csv => load_csv(path),
        DataFormat::Fbin => load_fbin(path),
        DataFormat::Libsvm => load_libsvm(path),
    }
}

fn load_csv<T: Real>(path: &Path) -> Result<Dataset<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut values: Vec<T> = Vec::new();
    let mut y = Vec::new();
    let mut d: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(FalkonError::Parse {
                line: lineno + 1,
                msg: "need at least one feature and a target".into(),
            });
        }
        let row_d = fields.len() - 1;
        match d {
            None => d = Some(row_d),
            Some(expect) if expect != row_d => {
                return Err(FalkonError::Parse {
                    line: lineno + 1,
                    msg: format!("row has {row_d} features, expected {expect}"),
                })
            }
            _ => {}
        }
        for f in &fields[..row_d] {
            let v: f64 = f.parse().map_err(|_| FalkonError::Parse {
                line: lineno + 1,
                msg: format!("invalid number '{f}'"),
            })?;
            values.push(T::from_f64(v));
        }
        let t: f64 = fields[row_d].parse().map_err(|_| FalkonError::Parse {
            line: lineno + 1,
            msg: format!("invalid target '{}'", fields[row_d]),
        })?;
        y.push(t);
    }
    let d = d.ok_or_else(|| FalkonError::Parse {
        line: 0,
        msg: "empty file".into(),
    })?;
    let x = DenseMatrix::new(y.len(), d, values)?;
    Dataset::new(Matrix::Dense(x), y)
}

fn read_u64_le(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32_le(r: &mut impl Read, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn load_fbin<T: Real>(path: &Path) -> Result<Dataset<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let n = read_u64_le(&mut r)? as usize;
    let d = read_u64_le(&mut r)? as usize;
    let total = n.checked_mul(d).ok_or_else(|| FalkonError::Parse {
        line: 0,
        msg: "fbin header overflows".into(),
    })?;
    let values = read_f32_le(&mut r, total)?;
    let targets = read_f32_le(&mut r, n)?;
    let x = DenseMatrix::new(n, d, values.into_iter().map(|v| T::from_f64(v as f64)).collect())?;
    Dataset::new(Matrix::Dense(x), targets.into_iter().map(|v| v as f64).collect())
}

/// Writes the `fbin` layout (values and targets stored in 32-bit precision).
pub fn save_fbin<T: Real>(path: &Path, data: &Dataset<T>) -> Result<()> {
    let Matrix::Dense(x) = &data.x else {
        return Err(FalkonError::InvalidArgument(
            "fbin stores dense matrices only".into(),
        ));
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(data.n() as u64).to_le_bytes())?;
    w.write_all(&(data.d() as u64).to_le_bytes())?;
    for v in x.values() {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    for &t in &data.y {
        w.write_all(&(t as f32).to_le_bytes())?;
    }
    Ok(())
}

fn load_libsvm<T: Real>(path: &Path) -> Result<Dataset<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut y = Vec::new();
    let mut row_offsets = vec![0usize];
    let mut col_indices: Vec<usize> = Vec::new();
    let mut values: Vec<T> = Vec::new();
    let mut max_col = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let label = parts.next().ok_or(FalkonError::Parse {
            line: lineno + 1,
            msg: "missing label".into(),
        })?;
        let t: f64 = label.parse().map_err(|_| FalkonError::Parse {
            line: lineno + 1,
            msg: format!("invalid label '{label}'"),
        })?;
        y.push(t);
        let mut last: Option<usize> = None;
        for tok in parts {
            let (idx, val) = tok.split_once(':').ok_or_else(|| FalkonError::Parse {
                line: lineno + 1,
                msg: format!("expected idx:value, got '{tok}'"),
            })?;
            let col: usize = idx.parse().map_err(|_| FalkonError::Parse {
                line: lineno + 1,
                msg: format!("invalid column index '{idx}'"),
            })?;
            let v: f64 = val.parse().map_err(|_| FalkonError::Parse {
                line: lineno + 1,
                msg: format!("invalid value '{val}'"),
            })?;
            if let Some(prev) = last {
                if col <= prev {
                    return Err(FalkonError::Parse {
                        line: lineno + 1,
                        msg: "column indices must be strictly increasing".into(),
                    });
                }
            }
            last = Some(col);
            col_indices.push(col);
            values.push(T::from_f64(v));
            max_col = max_col.max(col);
        }
        row_offsets.push(values.len());
    }
    if y.is_empty() {
        return Err(FalkonError::Parse {
            line: 0,
            msg: "empty file".into(),
        });
    }
    let cols = max_col + 1;
    let x = SparseMatrix::new(y.len(), cols, row_offsets, col_indices, values)?;
    Dataset::new(Matrix::Sparse(x), y)
}

/// Centers and scales each dense column to zero mean and unit population
/// standard deviation; constant columns map to zero with their recorded
/// standard deviation forced to one. Sparse data passes through unscaled.
pub fn standardize<T: Real>(data: Dataset<T>) -> (Dataset<T>, Vec<f64>, Vec<f64>) {
    match data.x {
        Matrix::Sparse(_) => {
            let d = data.d();
            (data, vec![0.0; d], vec![1.0; d])
        }
        Matrix::Dense(x) => {
            let (n, d) = (x.rows(), x.cols());
            let mut means = vec![0.0f64; d];
            for i in 0..n {
                for (j, v) in x.row(i).iter().enumerate() {
                    means[j] += v.as_f64();
                }
            }
            for m in means.iter_mut() {
                *m /= n as f64;
            }
            let mut vars = vec![0.0f64; d];
            for i in 0..n {
                for (j, v) in x.row(i).iter().enumerate() {
                    let c = v.as_f64() - means[j];
                    vars[j] += c * c;
                }
            }
            let stds: Vec<f64> = vars
                .iter()
                .map(|&v| {
                    let s = (v / n as f64).sqrt();
                    if s == 0.0 {
                        1.0
                    } else {
                        s
                    }
                })
                .collect();
            let mut values = Vec::with_capacity(n * d);
            for i in 0..n {
                for (j, v) in x.row(i).iter().enumerate() {
                    values.push(T::from_f64((v.as_f64() - means[j]) / stds[j]));
                }
            }
            let x = DenseMatrix::new(n, d, values).expect("shape preserved");
            (
                Dataset {
                    x: Matrix::Dense(x),
                    y: data.y,
                },
                means,
                stds,
            )
        }
    }
}

/// Disjoint covering split, deterministic per seed.
pub fn train_test_split<T: Real>(
    data: &Dataset<T>,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(FalkonError::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = data.n();
    if n < 2 {
        return Err(FalkonError::InvalidArgument(
            "need at least two rows to split".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut test_idx = order[..n_test].to_vec();
    let mut train_idx = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    let take = |idx: &[usize]| -> Dataset<T> {
        Dataset {
            x: data.x.gather_rows(idx),
            y: idx.iter().map(|&i| data.y[i]).collect(),
        }
    };
    Ok((take(&train_idx), take(&test_idx)))
}

/// Canonicalizes binary targets to ±1 ({0, 1} maps with 0 → −1).
pub fn canonicalize_binary_labels<T: Real>(data: &mut Dataset<T>) -> Result<()> {
    let pm_one = data.y.iter().all(|&v| v == 1.0 || v == -1.0);
    if pm_one {
        return Ok(());
    }
    let zero_one = data.y.iter().all(|&v| v == 0.0 || v == 1.0);
    if zero_one {
        for v in data.y.iter_mut() {
            if *v == 0.0 {
                *v = -1.0;
            }
        }
        return Ok(());
    }
    Err(FalkonError::InvalidLabel(
        "binary classification needs targets in {0, 1} or {−1, +1}".into(),
    ))
}

#[cfg(test)]
mod tests;
