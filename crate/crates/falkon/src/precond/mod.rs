//! The two-triangle preconditioner, built in place inside a single `m×m`
//! host buffer.
//!
//! Build pipeline (all on the one allocation):
//!
//! 1. allocate the `m×m` buffer;
//! 2. fill its upper triangle with `K_mm`, blockwise, within the scratch
//!    budget;
//! 3. in-place out-of-core Cholesky of the upper triangle → `T` with
//!    `K_mm = Tᵀ·T`;
//! 4. `(1/m)·T·Tᵀ + λ·I` written blockwise into the lower triangle through
//!    the transposed LAUUM sink;
//! 5. in-place out-of-core Cholesky of the lower triangle → `Aᵀ` with
//!    `(1/m)·T·Tᵀ + λ·I = Aᵀ·A`.
//!
//! The buffer's main diagonal can hold only one factor's diagonal, so both
//! are kept in side vectors (`diag_t`, `diag_a`) and the stored diagonal is
//! never read back. A failed factorization is retried with escalating
//! diagonal jitter after refilling the affected triangle.
//!
//! The weighted variant replaces step 4 by `(1/m)·T·D·Tᵀ + μ·I`, where the
//! curvature weights `D` come from streamed predictions on the inducing
//! points themselves.

use std::sync::Arc;

use crate::error::{FalkonError, Result};
use crate::kernel::{self, KernelSpec, Matrix, PrecisionPolicy, RowsRef};
use crate::ooc::{
    ooc_cholesky_uplo, ooc_lauum_core, ExecCtx, HostMat, LauumSink, LauumSpec, ScratchArena,
    TileLayout, TransferLedger, Triangle,
};
use crate::real::Real;

/// Which triangular factor of the preconditioner to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    /// `T`, upper triangular, `K_mm = Tᵀ·T`.
    T,
    /// `A`, upper triangular, `(1/m)·T·D·Tᵀ + λ·I = Aᵀ·A`.
    A,
}

/// The shared `m×m` buffer holding `T` (upper triangle) and `Aᵀ` (lower
/// triangle) plus the two factor diagonals.
pub struct PreconditionerBuffer<T> {
    buf: HostMat<T>,
    diag_t: Vec<f64>,
    diag_a: Vec<f64>,
    m: usize,
    n: usize,
    lam: f64,
    ledger: Arc<TransferLedger>,
    aux_registered: usize,
}

impl<T: Real> PreconditionerBuffer<T> {
    pub fn m(&self) -> usize {
        self.m
    }

    /// Row count of the dataset this preconditioner was built for (the `λ·n`
    /// scaling of the operator uses it).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lam(&self) -> f64 {
        self.lam
    }

    pub fn diag_t(&self) -> &[f64] {
        &self.diag_t
    }

    pub fn diag_a(&self) -> &[f64] {
        &self.diag_a
    }

    /// Entry (i, j), i ≤ j, of the requested upper-triangular factor.
    #[inline]
    fn entry(&self, which: Factor, i: usize, j: usize) -> f64 {
        debug_assert!(i <= j);
        if i == j {
            match which {
                Factor::T => self.diag_t[i],
                Factor::A => self.diag_a[i],
            }
        } else {
            // Safety: the buffer is frozen once built.
            match which {
                Factor::T => unsafe { self.buf.get_unsync(i, j).as_f64() },
                Factor::A => unsafe { self.buf.get_unsync(j, i).as_f64() },
            }
        }
    }

    /// Applies the requested triangular action to `v`; inverse actions are
    /// triangular solves against the stored triangle plus its diagonal.
    pub fn apply(&self, v: &[f64], which: Factor, transpose: bool, inverse: bool) -> Result<Vec<f64>> {
        apply_prec(self, v, which, transpose, inverse)
    }
}

impl<T> Drop for PreconditionerBuffer<T> {
    fn drop(&mut self) {
        self.ledger.unregister_mm_buffer();
        self.ledger.unregister_aux_host(self.aux_registered);
    }
}

/// Triangular matrix-vector product / solve against one stored factor.
pub fn apply_prec<T: Real>(
    prec: &PreconditionerBuffer<T>,
    v: &[f64],
    which: Factor,
    transpose: bool,
    inverse: bool,
) -> Result<Vec<f64>> {
    let m = prec.m;
    if v.len() != m {
        return Err(FalkonError::DimensionMismatch(format!(
            "vector length {} does not match m = {m}",
            v.len()
        )));
    }
    if inverse {
        for i in 0..m {
            if prec.entry(which, i, i) == 0.0 {
                return Err(FalkonError::ZeroDiagonal { row: i });
            }
        }
    }
    let mut out = vec![0.0f64; m];
    match (transpose, inverse) {
        (false, false) => {
            // y = U·v
            for i in 0..m {
                let mut acc = prec.entry(which, i, i) * v[i];
                for j in (i + 1)..m {
                    acc += prec.entry(which, i, j) * v[j];
                }
                out[i] = acc;
            }
        }
        (true, false) => {
            // y = Uᵀ·v
            for j in 0..m {
                let mut acc = prec.entry(which, j, j) * v[j];
                for i in 0..j {
                    acc += prec.entry(which, i, j) * v[i];
                }
                out[j] = acc;
            }
        }
        (false, true) => {
            // Solve U·x = v (back substitution).
            for i in (0..m).rev() {
                let mut s = v[i];
                for j in (i + 1)..m {
                    s -= prec.entry(which, i, j) * out[j];
                }
                out[i] = s / prec.entry(which, i, i);
            }
        }
        (true, true) => {
            // Solve Uᵀ·x = v (forward substitution).
            for j in 0..m {
                let mut s = v[j];
                for i in 0..j {
                    s -= prec.entry(which, i, j) * out[i];
                }
                out[j] = s / prec.entry(which, j, j);
            }
        }
    }
    Ok(out)
}

/// Builds the squared-loss preconditioner from the inducing rows.
pub fn build_preconditioner<T: Real>(
    x_m: &Matrix<T>,
    kernel: &KernelSpec,
    lam: f64,
    n: usize,
    ctx: &ExecCtx,
) -> Result<PreconditionerBuffer<T>> {
    build_impl(x_m, kernel, lam, n, None, ctx)
}

/// Curvature-weighted variant: step 4 computes `(1/m)·T·D·Tᵀ + μ·I` with
/// `D = diag(curvature(z_j, y_j))` and `z = K_mm·alpha0` the predictions on
/// the inducing points themselves.
pub fn build_weighted_preconditioner<T: Real>(
    x_m: &Matrix<T>,
    y_m: &[f64],
    alpha0: &[f64],
    curvature: &dyn Fn(f64, f64) -> f64,
    mu: f64,
    kernel: &KernelSpec,
    ctx: &ExecCtx,
) -> Result<PreconditionerBuffer<T>> {
    let m = x_m.rows();
    if y_m.len() != m || alpha0.len() != m {
        return Err(FalkonError::DimensionMismatch(
            "weighted preconditioner needs y_m and alpha0 of length m".into(),
        ));
    }
    build_impl(
        x_m,
        kernel,
        mu,
        0,
        Some(WeightedInputs {
            y_m,
            alpha0,
            curvature,
        }),
        ctx,
    )
}

struct WeightedInputs<'a> {
    y_m: &'a [f64],
    alpha0: &'a [f64],
    curvature: &'a dyn Fn(f64, f64) -> f64,
}

fn build_impl<T: Real>(
    x_m: &Matrix<T>,
    kernel: &KernelSpec,
    lam: f64,
    n: usize,
    weighted: Option<WeightedInputs<'_>>,
    ctx: &ExecCtx,
) -> Result<PreconditionerBuffer<T>> {
    let m = x_m.rows();
    if m == 0 {
        return Err(FalkonError::InvalidArgument("m must be ≥ 1".into()));
    }
    if lam < 0.0 {
        return Err(FalkonError::InvalidArgument(
            "regularization must be nonnegative".into(),
        ));
    }

    // Step (a): the single m×m allocation of the build.
    let mut buf = HostMat::<T>::zeros(m, m);
    ctx.ledger.register_mm_buffer();
    let layout = TileLayout::plan(m, &ctx.budget)?;
    let arena = ctx.arena::<T>(0);

    // 64-bit row norms; the O(m) side vectors of the layout.
    let norms = kernel::row_squared_norms(x_m);
    ctx.ledger.register_aux_host(norms.len());

    // Step (b): K_mm into the upper triangle, blockwise.
    let trace = fill_kmm_upper(&mut buf, x_m, kernel, &norms, 0.0, &arena)?;

    // Weighted curvature needs z = K_mm·α₀ before the factorization
    // overwrites the kernel matrix.
    let weights: Option<Vec<f64>> = match &weighted {
        None => None,
        Some(w) => {
            let z = symmetric_matvec_upper(&mut buf, w.alpha0);
            let mut d = Vec::with_capacity(m);
            for j in 0..m {
                let v = (w.curvature)(z[j], w.y_m[j]);
                if !(v >= 0.0) {
                    return Err(FalkonError::LossContract(format!(
                        "second derivative must be nonnegative, got {v} at inducing point {j}"
                    )));
                }
                d.push(v);
            }
            Some(d)
        }
    };
    if weights.is_some() {
        ctx.ledger.register_aux_host(m);
    }

    // Step (c): in-place OOC Cholesky of the upper triangle → T.
    let base_jitter = 1e-8 * trace / m as f64;
    let mut attempt = 0usize;
    loop {
        match ooc_cholesky_uplo(&mut buf, Triangle::Upper, &layout, ctx) {
            Ok(_) => break,
            Err(FalkonError::NotPositiveDefinite { block_col }) if attempt < 3 => {
                attempt += 1;
                let jitter = base_jitter * 10f64.powi(attempt as i32 - 1);
                log::warn!(
                    "K_mm factorization failed at block column {block_col}; retrying with jitter {jitter:e}"
                );
                fill_kmm_upper(&mut buf, x_m, kernel, &norms, jitter, &arena)?;
            }
            Err(e) => return Err(e),
        }
    }
    let diag_t: Vec<f64> = (0..m).map(|i| buf.get(i, i).as_f64()).collect();
    ctx.ledger.register_aux_host(m);

    // Step (d): (1/m)·T·D·Tᵀ + λ·I into the lower triangle, and
    // step (e): in-place OOC Cholesky of the lower triangle → Aᵀ.
    let run_lauum = |buf: &HostMat<T>, shift: f64| -> Result<()> {
        let spec = LauumSpec {
            input: buf,
            diag_override: Some(&diag_t),
            weights: weights.as_deref(),
            sink: LauumSink::TransposedLower(buf),
            scale: 1.0 / m as f64,
            diag_shift: shift,
        };
        ooc_lauum_core(spec, &layout, ctx).map(|_| ())
    };
    run_lauum(&buf, lam)?;
    let trace_m: f64 = (0..m).map(|i| buf.get(i, i).as_f64()).sum();
    let base_jitter_a = 1e-8 * trace_m / m as f64;
    let mut attempt = 0usize;
    loop {
        match ooc_cholesky_uplo(&mut buf, Triangle::Lower, &layout, ctx) {
            Ok(_) => break,
            Err(FalkonError::NotPositiveDefinite { block_col }) if attempt < 3 => {
                attempt += 1;
                let jitter = base_jitter_a * 10f64.powi(attempt as i32 - 1);
                log::warn!(
                    "inner factorization failed at block column {block_col}; retrying with jitter {jitter:e}"
                );
                run_lauum(&buf, lam + jitter)?;
            }
            Err(e) => return Err(e),
        }
    }
    let diag_a: Vec<f64> = (0..m).map(|i| buf.get(i, i).as_f64()).collect();
    ctx.ledger.register_aux_host(m);

    ctx.ledger.unregister_aux_host(norms.len());
    if weights.is_some() {
        ctx.ledger.unregister_aux_host(m);
    }
    Ok(PreconditionerBuffer {
        buf,
        diag_t,
        diag_a,
        m,
        n,
        lam,
        ledger: ctx.ledger.clone(),
        // The two factor diagonals stay alive with the buffer.
        aux_registered: 2 * m,
    })
}

/// Fills the upper triangle (diagonal blocks fully) with `K_mm + jitter·I`,
/// streaming operand blocks through scratch. Returns `trace(K_mm)`.
fn fill_kmm_upper<T: Real>(
    buf: &mut HostMat<T>,
    x_m: &Matrix<T>,
    kernel: &KernelSpec,
    norms: &[f64],
    jitter: f64,
    arena: &ScratchArena,
) -> Result<f64> {
    let m = x_m.rows();
    let trace = match kernel {
        KernelSpec::Gaussian { .. } => m as f64,
        KernelSpec::Linear => norms.iter().sum(),
    };

    match x_m {
        Matrix::Dense(xd) => {
            let d = xd.cols();
            let g = arena.cap();
            // Block size b and feature-slice width s such that one f64
            // accumulator block, one output block, and two operand slices fit.
            let f64_per_elem = 8usize.div_ceil(T::BYTES);
            let mut b = ((g / (f64_per_elem + 2)) as f64).sqrt() as usize;
            b = b.clamp(1, m);
            let s_budget = g.saturating_sub(b * b * (f64_per_elem + 1)) / (2 * b).max(1);
            let s = s_budget.clamp(1, d.max(1));
            let blocks = m.div_ceil(b);
            for bi in 0..blocks {
                let (r0, ei) = (bi * b, b.min(m - bi * b));
                for bj in bi..blocks {
                    let (c0, ej) = (bj * b, b.min(m - bj * b));
                    let mut acc = arena.alloc::<f64>(ei * ej)?;
                    let mut s0 = 0;
                    while s0 < d {
                        let sw = s.min(d - s0);
                        let xi = load_feature_slice(xd, r0, ei, s0, sw, arena)?;
                        let xj = load_feature_slice(xd, c0, ej, s0, sw, arena)?;
                        for a in 0..ei {
                            for c in 0..ej {
                                let mut dot = 0.0f64;
                                for k in 0..sw {
                                    dot += xi[a * sw + k] * xj[c * sw + k];
                                }
                                acc[a * ej + c] += dot;
                            }
                        }
                        s0 += sw;
                    }
                    let mut out = arena.alloc::<T>(ei * ej)?;
                    finalize_kernel_block(
                        kernel,
                        &acc,
                        &norms[r0..r0 + ei],
                        &norms[c0..c0 + ej],
                        &mut out,
                    );
                    if bi == bj && jitter != 0.0 {
                        for a in 0..ei {
                            out[a * ej + a] += T::from_f64(jitter);
                        }
                    }
                    unsafe {
                        buf.write_rect(r0, c0, ei, ej, &out);
                    }
                    arena.note_store(ei * ej);
                }
            }
        }
        Matrix::Sparse(xs) => {
            // Sparse inducing rows: blocks are computed from the host CSR
            // directly; the transfer of both row blocks is still charged.
            let layout_b = 256usize;
            let blocks = m.div_ceil(layout_b);
            for bi in 0..blocks {
                let (r0, ei) = (bi * layout_b, layout_b.min(m - bi * layout_b));
                for bj in bi..blocks {
                    let (c0, ej) = (bj * layout_b, layout_b.min(m - bj * layout_b));
                    let a_view = RowsRef::Sparse(xs.row_range(r0, r0 + ei));
                    let b_view = RowsRef::Sparse(xs.row_range(c0, c0 + ej));
                    arena.note_load(a_view.stored_elements() + b_view.stored_elements());
                    let mut out = arena.alloc::<T>(ei * ej)?;
                    kernel::fill_block_with_norms(
                        kernel,
                        PrecisionPolicy::default(),
                        &a_view,
                        &norms[r0..r0 + ei],
                        &b_view,
                        &norms[c0..c0 + ej],
                        &mut out,
                    );
                    if bi == bj && jitter != 0.0 {
                        for a in 0..ei {
                            out[a * ej + a] += T::from_f64(jitter);
                        }
                    }
                    unsafe {
                        buf.write_rect(r0, c0, ei, ej, &out);
                    }
                    arena.note_store(ei * ej);
                }
            }
        }
    }
    Ok(trace)
}

fn load_feature_slice<T: Real>(
    x: &crate::kernel::DenseMatrix<T>,
    r0: usize,
    rows: usize,
    c0: usize,
    width: usize,
    arena: &ScratchArena,
) -> Result<crate::ooc::ScratchBuf<f64>> {
    let mut buf = arena.alloc::<f64>(rows * width)?;
    for r in 0..rows {
        let row = x.row(r0 + r);
        for k in 0..width {
            buf[r * width + k] = row[c0 + k].as_f64();
        }
    }
    arena.note_load(rows * width);
    Ok(buf)
}

fn finalize_kernel_block<T: Real>(
    kernel: &KernelSpec,
    acc: &[f64],
    na: &[f64],
    nb: &[f64],
    out: &mut [T],
) {
    match kernel {
        KernelSpec::Gaussian { sigma } => {
            let inv2s2 = 1.0 / (2.0 * sigma * sigma);
            for a in 0..na.len() {
                for c in 0..nb.len() {
                    let d2 = na[a] - 2.0 * acc[a * nb.len() + c] + nb[c];
                    out[a * nb.len() + c] = T::from_f64(-d2 * inv2s2).exp();
                }
            }
        }
        KernelSpec::Linear => {
            for (o, &v) in out.iter_mut().zip(acc) {
                *o = T::from_f64(v);
            }
        }
    }
}

/// `K·v` using only the upper triangle of the symmetric matrix stored in
/// `buf` (valid between fill and the first factorization).
fn symmetric_matvec_upper<T: Real>(buf: &mut HostMat<T>, v: &[f64]) -> Vec<f64> {
    let m = buf.rows();
    let mut out = vec![0.0f64; m];
    let data = buf.as_slice();
    for i in 0..m {
        let mut acc = data[i * m + i].as_f64() * v[i];
        for j in (i + 1)..m {
            let k = data[i * m + j].as_f64();
            acc += k * v[j];
            out[j] += k * v[i];
        }
        out[i] += acc;
    }
    out
}
