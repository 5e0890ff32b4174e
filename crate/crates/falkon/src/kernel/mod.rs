//! Kernel block evaluation for dense and sparse inputs.
//!
//! The Gaussian kernel is computed by expanding the squared distance as
//! `‖x‖² − 2⟨x, x'⟩ + ‖x'‖²` so that whole blocks reduce to norm lookups plus
//! an inner-product pass. In 32-bit working precision that expansion cancels
//! catastrophically for data far from the origin, so the default precision
//! policy performs the expansion in 64-bit arithmetic and casts the result
//! back to working precision afterwards. Kernel values that underflow the
//! working precision become exact zeros.

mod matrix;

pub use matrix::{DenseMatrix, DenseRef, Matrix, RowsRef, SparseMatrix, SparseRef};

use crate::error::{FalkonError, Result};
use crate::real::Real;

/// Default feature-count cutoff below which the fused (non-materializing)
/// kernel-vector path is dispatched. Small enough that one row of each
/// operand stays cache/register resident in the inner loop.
pub const THIN_DATA_THRESHOLD: usize = 32;

/// Kernel function selector.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum KernelSpec {
    /// `exp(-‖x-x'‖² / (2σ²))`
    Gaussian { sigma: f64 },
    /// `⟨x, x'⟩`
    Linear,
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(FalkonError::InvalidArgument(format!(
                "gaussian length-scale must be positive, got {sigma}"
            )));
        }
        Ok(KernelSpec::Gaussian { sigma })
    }
}

/// How block evaluations accumulate intermediate sums.
///
/// The working precision itself is the scalar type `T` of the data; this
/// policy only controls whether norm expansions are accumulated in 64-bit
/// before being cast back. Disabling it reproduces the naive low-precision
/// path (useful to demonstrate why the default exists); production callers
/// should leave the default alone.
#[derive(Debug, Clone, Copy)]
pub struct PrecisionPolicy {
    pub accumulate_norms_high: bool,
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        Self {
            accumulate_norms_high: true,
        }
    }
}

#[inline]
fn dot_f64<T: Real>(a: &[T], b: &[T]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += x.as_f64() * y.as_f64();
    }
    acc
}

#[inline]
fn dot_working<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// Merge-join dot product of two sparse rows, accumulated in 64-bit.
#[inline]
fn sparse_dot_f64<T: Real>(ai: &[usize], av: &[T], bi: &[usize], bv: &[T]) -> f64 {
    let mut acc = 0.0f64;
    let (mut p, mut q) = (0, 0);
    while p < ai.len() && q < bi.len() {
        match ai[p].cmp(&bi[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                acc += av[p].as_f64() * bv[q].as_f64();
                p += 1;
                q += 1;
            }
        }
    }
    acc
}

#[inline]
fn sparse_dot_working<T: Real>(ai: &[usize], av: &[T], bi: &[usize], bv: &[T]) -> T {
    let mut acc = T::zero();
    let (mut p, mut q) = (0, 0);
    while p < ai.len() && q < bi.len() {
        match ai[p].cmp(&bi[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                acc += av[p] * bv[q];
                p += 1;
                q += 1;
            }
        }
    }
    acc
}

/// Per-row squared norms, accumulated in 64-bit regardless of working
/// precision.
pub fn row_squared_norms<T: Real>(x: &Matrix<T>) -> Vec<f64> {
    row_squared_norms_view(&x.view())
}

pub(crate) fn row_squared_norms_view<T: Real>(x: &RowsRef<'_, T>) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.rows());
    match x {
        RowsRef::Dense(v) => {
            for i in 0..v.rows {
                let r = v.row(i);
                out.push(dot_f64(r, r));
            }
        }
        RowsRef::Sparse(v) => {
            for i in 0..v.rows {
                let (_, vals) = v.row(i);
                let mut acc = 0.0f64;
                for &t in vals {
                    acc += t.as_f64() * t.as_f64();
                }
                out.push(acc);
            }
        }
    }
    out
}

fn row_squared_norms_working<T: Real>(x: &RowsRef<'_, T>) -> Vec<T> {
    let mut out = Vec::with_capacity(x.rows());
    match x {
        RowsRef::Dense(v) => {
            for i in 0..v.rows {
                let r = v.row(i);
                out.push(dot_working(r, r));
            }
        }
        RowsRef::Sparse(v) => {
            for i in 0..v.rows {
                let (_, vals) = v.row(i);
                let mut acc = T::zero();
                for &t in vals {
                    acc += t * t;
                }
                out.push(acc);
            }
        }
    }
    out
}

fn check_cols<T: Real>(a: &RowsRef<'_, T>, b: &RowsRef<'_, T>) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(FalkonError::DimensionMismatch(format!(
            "kernel operands have {} and {} columns",
            a.cols(),
            b.cols()
        )));
    }
    Ok(())
}

/// Fills `out` (row-major, `a.rows() × b.rows()`) with kernel values.
///
/// `na`/`nb` are 64-bit row norms of the operands; they are only read for the
/// Gaussian kernel on the high-accumulation path.
pub(crate) fn fill_block_with_norms<T: Real>(
    kernel: &KernelSpec,
    policy: PrecisionPolicy,
    a: &RowsRef<'_, T>,
    na: &[f64],
    b: &RowsRef<'_, T>,
    nb: &[f64],
    out: &mut [T],
) {
    debug_assert_eq!(out.len(), a.rows() * b.rows());
    let high = policy.accumulate_norms_high || T::BYTES == 8;
    if high {
        fill_block_high(kernel, a, na, b, nb, out);
    } else {
        fill_block_working(kernel, a, b, out);
    }
}

fn fill_block_high<T: Real>(
    kernel: &KernelSpec,
    a: &RowsRef<'_, T>,
    na: &[f64],
    b: &RowsRef<'_, T>,
    nb: &[f64],
    out: &mut [T],
) {
    let r = b.rows();
    match kernel {
        KernelSpec::Gaussian { sigma } => {
            let inv2s2 = 1.0 / (2.0 * sigma * sigma);
            for_each_pair_f64(a, b, |i, j, dot| {
                let d2 = na[i] - 2.0 * dot + nb[j];
                out[i * r + j] = T::from_f64(-d2 * inv2s2).exp();
            });
        }
        KernelSpec::Linear => {
            for_each_pair_f64(a, b, |i, j, dot| {
                out[i * r + j] = T::from_f64(dot);
            });
        }
    }
}

/// Naive path: every accumulation stays in working precision.
fn fill_block_working<T: Real>(
    kernel: &KernelSpec,
    a: &RowsRef<'_, T>,
    b: &RowsRef<'_, T>,
    out: &mut [T],
) {
    let r = b.rows();
    match kernel {
        KernelSpec::Gaussian { sigma } => {
            let na = row_squared_norms_working(a);
            let nb = row_squared_norms_working(b);
            let two = T::from_f64(2.0);
            let inv2s2 = T::from_f64(1.0 / (2.0 * sigma * sigma));
            for_each_pair_working(a, b, |i, j, dot| {
                let d2 = na[i] - two * dot + nb[j];
                out[i * r + j] = (-d2 * inv2s2).exp();
            });
        }
        KernelSpec::Linear => {
            for_each_pair_working(a, b, |i, j, dot| {
                out[i * r + j] = dot;
            });
        }
    }
}

fn for_each_pair_f64<T: Real>(
    a: &RowsRef<'_, T>,
    b: &RowsRef<'_, T>,
    mut f: impl FnMut(usize, usize, f64),
) {
    match (a, b) {
        (RowsRef::Dense(av), RowsRef::Dense(bv)) => {
            for i in 0..av.rows {
                let ar = av.row(i);
                for j in 0..bv.rows {
                    f(i, j, dot_f64(ar, bv.row(j)));
                }
            }
        }
        (RowsRef::Sparse(av), RowsRef::Sparse(bv)) => {
            for i in 0..av.rows {
                let (ai, avals) = av.row(i);
                for j in 0..bv.rows {
                    let (bi, bvals) = bv.row(j);
                    f(i, j, sparse_dot_f64(ai, avals, bi, bvals));
                }
            }
        }
        // Mixed layouts: densify the sparse row on the fly.
        (RowsRef::Dense(av), RowsRef::Sparse(bv)) => {
            for i in 0..av.rows {
                let ar = av.row(i);
                for j in 0..bv.rows {
                    let (bi, bvals) = bv.row(j);
                    let mut acc = 0.0f64;
                    for (&c, &v) in bi.iter().zip(bvals) {
                        acc += ar[c].as_f64() * v.as_f64();
                    }
                    f(i, j, acc);
                }
            }
        }
        (RowsRef::Sparse(av), RowsRef::Dense(bv)) => {
            for i in 0..av.rows {
                let (ai, avals) = av.row(i);
                for j in 0..bv.rows {
                    let br = bv.row(j);
                    let mut acc = 0.0f64;
                    for (&c, &v) in ai.iter().zip(avals) {
                        acc += v.as_f64() * br[c].as_f64();
                    }
                    f(i, j, acc);
                }
            }
        }
    }
}

fn for_each_pair_working<T: Real>(
    a: &RowsRef<'_, T>,
    b: &RowsRef<'_, T>,
    mut f: impl FnMut(usize, usize, T),
) {
    match (a, b) {
        (RowsRef::Dense(av), RowsRef::Dense(bv)) => {
            for i in 0..av.rows {
                let ar = av.row(i);
                for j in 0..bv.rows {
                    f(i, j, dot_working(ar, bv.row(j)));
                }
            }
        }
        (RowsRef::Sparse(av), RowsRef::Sparse(bv)) => {
            for i in 0..av.rows {
                let (ai, avals) = av.row(i);
                for j in 0..bv.rows {
                    let (bi, bvals) = bv.row(j);
                    f(i, j, sparse_dot_working(ai, avals, bi, bvals));
                }
            }
        }
        _ => unreachable!("mixed-format blocks always use the high path"),
    }
}

fn eval_block_view<T: Real>(
    kernel: &KernelSpec,
    a: RowsRef<'_, T>,
    b: RowsRef<'_, T>,
    policy: PrecisionPolicy,
) -> Result<DenseMatrix<T>> {
    check_cols(&a, &b)?;
    let high = policy.accumulate_norms_high || T::BYTES == 8;
    let (na, nb) = if high && matches!(kernel, KernelSpec::Gaussian { .. }) {
        (row_squared_norms_view(&a), row_squared_norms_view(&b))
    } else {
        (Vec::new(), Vec::new())
    };
    let mut out = DenseMatrix::zeros(a.rows(), b.rows());
    fill_block_with_norms(kernel, policy, &a, &na, &b, &nb, out.values_mut());
    Ok(out)
}

/// Dense kernel block `k(X1, X2)`, entry `(i, j) = k(x1_i, x2_j)`.
pub fn eval_kernel_block<T: Real>(
    kernel: &KernelSpec,
    x1: &DenseMatrix<T>,
    x2: &DenseMatrix<T>,
    policy: PrecisionPolicy,
) -> Result<DenseMatrix<T>> {
    eval_block_view(
        kernel,
        RowsRef::Dense(x1.view()),
        RowsRef::Dense(x2.view()),
        policy,
    )
}

/// Kernel block on CSR inputs; inner products use sparse-sparse row dots and
/// the output block is dense.
pub fn kernel_block_sparse<T: Real>(
    kernel: &KernelSpec,
    x1: &SparseMatrix<T>,
    x2: &SparseMatrix<T>,
    policy: PrecisionPolicy,
) -> Result<DenseMatrix<T>> {
    eval_block_view(
        kernel,
        RowsRef::Sparse(x1.view()),
        RowsRef::Sparse(x2.view()),
        policy,
    )
}

/// Fused kernel-vector product `k(X1, X2)·v` for thin data.
///
/// Never materializes the `q × r` kernel block: each output entry is
/// accumulated row by row, with only `O(r)` norm lookups as auxiliary state.
/// Intended for `d ≤ max_thin_d` where the per-row inner products stay
/// register resident.
pub fn kernel_vecmul_fused<T: Real>(
    kernel: &KernelSpec,
    x1: &DenseMatrix<T>,
    x2: &DenseMatrix<T>,
    v: &[T],
    max_thin_d: usize,
) -> Result<Vec<T>> {
    if x1.cols() != x2.cols() {
        return Err(FalkonError::DimensionMismatch(format!(
            "fused product operands have {} and {} columns",
            x1.cols(),
            x2.cols()
        )));
    }
    if v.len() != x2.rows() {
        return Err(FalkonError::DimensionMismatch(format!(
            "fused product vector has length {}, expected {}",
            v.len(),
            x2.rows()
        )));
    }
    if x1.cols() > max_thin_d {
        return Err(FalkonError::InvalidArgument(format!(
            "fused path is reserved for thin data: d = {} exceeds threshold {}",
            x1.cols(),
            max_thin_d
        )));
    }
    let nb = match kernel {
        KernelSpec::Gaussian { .. } => row_squared_norms_view(&RowsRef::Dense(x2.view())),
        KernelSpec::Linear => Vec::new(),
    };
    let mut out = Vec::with_capacity(x1.rows());
    for i in 0..x1.rows() {
        let ar = x1.row(i);
        let acc = match kernel {
            KernelSpec::Gaussian { sigma } => {
                let inv2s2 = 1.0 / (2.0 * sigma * sigma);
                let na = dot_f64(ar, ar);
                let mut acc = 0.0f64;
                for j in 0..x2.rows() {
                    let d2 = na - 2.0 * dot_f64(ar, x2.row(j)) + nb[j];
                    let k = T::from_f64(-d2 * inv2s2).exp();
                    acc += k.as_f64() * v[j].as_f64();
                }
                acc
            }
            KernelSpec::Linear => {
                let mut acc = 0.0f64;
                for j in 0..x2.rows() {
                    let k = T::from_f64(dot_f64(ar, x2.row(j)));
                    acc += k.as_f64() * v[j].as_f64();
                }
                acc
            }
        };
        out.push(T::from_f64(acc));
    }
    Ok(out)
}

/// One kernel row `k(a_row, B)` evaluated straight into an `f64` buffer.
///
/// Streaming products use this to visit a row twice (forward and transposed
/// accumulation) without ever materializing a block. `na_i`/`nb` are 64-bit
/// squared norms; `a_row` must be dense.
pub(crate) fn kernel_row_f64<T: Real>(
    kernel: &KernelSpec,
    a_row: &[T],
    na_i: f64,
    b: &RowsRef<'_, T>,
    nb: &[f64],
    out: &mut [f64],
) {
    match (kernel, b) {
        (KernelSpec::Gaussian { sigma }, RowsRef::Dense(bv)) => {
            let inv2s2 = 1.0 / (2.0 * sigma * sigma);
            for j in 0..bv.rows {
                let d2 = na_i - 2.0 * dot_f64(a_row, bv.row(j)) + nb[j];
                out[j] = T::from_f64(-d2 * inv2s2).exp().as_f64();
            }
        }
        (KernelSpec::Linear, RowsRef::Dense(bv)) => {
            for j in 0..bv.rows {
                out[j] = T::from_f64(dot_f64(a_row, bv.row(j))).as_f64();
            }
        }
        _ => unreachable!("row-fused path requires dense operands"),
    }
}
