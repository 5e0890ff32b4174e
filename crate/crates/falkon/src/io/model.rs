//! Model persistence: the `FLKN` binary format.
//!
//! Layout (all little-endian):
//!
//! | field            | type            |
//! |------------------|-----------------|
//! | magic            | 4 bytes `FLKN`  |
//! | format version   | u32             |
//! | kernel kind      | u8 (0 gaussian, 1 linear) |
//! | sigma            | f64 (0 for linear) |
//! | d                | u64             |
//! | m                | u64             |
//! | lambda           | f64             |
//! | inducing points  | m·d f64, row-major |
//! | alpha            | m f64           |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{FalkonError, Result};
use crate::kernel::{DenseMatrix, KernelSpec, Matrix};
use crate::real::Real;
use crate::solver::{FalkonModel, InducingSet};

pub const MODEL_MAGIC: [u8; 4] = *b"FLKN";
pub const MODEL_VERSION: u32 = 1;

pub fn save_model<T: Real>(path: &Path, model: &FalkonModel<T>) -> Result<()> {
    let Matrix::Dense(xm) = &model.inducing.x_m else {
        return Err(FalkonError::ModelFormat(
            "the FLKN format stores dense inducing points; sparse models are not persistable"
                .into(),
        ));
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    let (kind, sigma) = match model.kernel {
        KernelSpec::Gaussian { sigma } => (0u8, sigma),
        KernelSpec::Linear => (1u8, 0.0),
    };
    w.write_all(&[kind])?;
    w.write_all(&sigma.to_le_bytes())?;
    w.write_all(&(xm.cols() as u64).to_le_bytes())?;
    w.write_all(&(xm.rows() as u64).to_le_bytes())?;
    w.write_all(&model.lam.to_le_bytes())?;
    for v in xm.values() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    for &a in &model.alpha {
        w.write_all(&a.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn load_model<T: Real>(path: &Path) -> Result<FalkonModel<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact_array::<4>(&mut r)?;
    if magic != MODEL_MAGIC {
        return Err(FalkonError::ModelFormat("bad magic, not an FLKN file".into()));
    }
    let version = u32::from_le_bytes(read_exact_array::<4>(&mut r)?);
    if version != MODEL_VERSION {
        return Err(FalkonError::ModelFormat(format!(
            "unsupported format version {version}"
        )));
    }
    let kind = read_exact_array::<1>(&mut r)?[0];
    let sigma = f64::from_le_bytes(read_exact_array::<8>(&mut r)?);
    let kernel = match kind {
        0 => KernelSpec::gaussian(sigma)?,
        1 => KernelSpec::Linear,
        other => {
            return Err(FalkonError::ModelFormat(format!(
                "unknown kernel kind {other}"
            )))
        }
    };
    let d = u64::from_le_bytes(read_exact_array::<8>(&mut r)?) as usize;
    let m = u64::from_le_bytes(read_exact_array::<8>(&mut r)?) as usize;
    let lam = f64::from_le_bytes(read_exact_array::<8>(&mut r)?);

    let mut values = Vec::with_capacity(m * d);
    for _ in 0..m * d {
        values.push(T::from_f64(f64::from_le_bytes(read_exact_array::<8>(&mut r)?)));
    }
    let mut alpha = Vec::with_capacity(m);
    for _ in 0..m {
        alpha.push(f64::from_le_bytes(read_exact_array::<8>(&mut r)?));
    }
    let x_m = DenseMatrix::new(m, d, values)?;
    Ok(FalkonModel {
        inducing: InducingSet {
            x_m: Matrix::Dense(x_m),
            indices: Vec::new(),
            seed: 0,
        },
        alpha,
        kernel,
        lam,
        iters: 0,
        seed: 0,
    })
}
