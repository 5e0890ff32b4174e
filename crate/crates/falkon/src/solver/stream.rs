//! Batched, pipelined streaming of kernel-block products.
//!
//! Every product against `K_nm` runs through this engine. The data matrix is
//! split into `B` row batches which fan out to `P` workers block-cyclically;
//! each worker drives a load → compute → store pipeline whose stages overlap
//! across consecutive batches through bounded queues of depth 2 (enough to
//! keep all three stages busy, so `B` batches take ≈ `B+2` stage times
//! instead of `3B`). Kernel blocks exist only in worker scratch; per-batch
//! partial results reduce into the output in batch-index order under the
//! single reducer, which makes runs bitwise reproducible for any worker
//! count.
//!
//! For thin dense data (`d ≤` threshold) the compute stage switches to a
//! fused row-at-a-time path that never materializes the batch block at all:
//! each kernel row is built once in registers/L1 and consumed by both the
//! forward products and the transposed accumulation.

use std::ops::Range;
use std::sync::mpsc;
use std::time::Duration;

use crate::error::{FalkonError, Result};
use crate::kernel::{self, KernelSpec, Matrix, PrecisionPolicy, RowsRef};
use crate::ooc::{ExecCtx, ScratchArena, ScratchBuf};
use crate::real::Real;

use super::BatchPlan;

/// Per-row contribution of a streamed operation.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RowResult {
    /// Weight of this row in the transposed accumulation `Σᵢ wᵢ·kᵢ`.
    pub weight: f64,
    /// Value scattered into the n-length output vector.
    pub output: f64,
    /// Contribution to the scalar reduction.
    pub scalar: f64,
}

/// A streamed operation: which forward products it needs and what it does
/// with each row's results.
pub(crate) struct StreamOp<'a> {
    /// Vectors `f` (length m) for which the engine computes `kᵢ·f` per row.
    pub forward: Vec<&'a [f64]>,
    /// Maps (global row index, forward products) to this row's contribution.
    pub per_row: &'a (dyn Fn(usize, &[f64]) -> RowResult + Sync),
    /// Accumulate `Σ wᵢ·kᵢ` (an m-vector) across all rows.
    pub wants_transpose: bool,
    /// Collect per-row outputs into an n-vector.
    pub wants_output: bool,
}

pub(crate) struct StreamResult {
    /// `Σᵢ wᵢ·kᵢ`, accumulated in 64-bit in batch-index order.
    pub transpose_accum: Vec<f64>,
    pub outputs: Option<Vec<f64>>,
    pub scalar: f64,
}

struct ComputedBatch {
    index: usize,
    range: Range<usize>,
    partial: Option<Vec<f64>>,
    outputs: Option<Vec<f64>>,
    scalar: f64,
}

/// A batch loaded into worker scratch.
struct LoadedBatch<T> {
    index: usize,
    range: Range<usize>,
    /// Dense rows (fused path) or per-slice feature blocks (blocked path).
    dense_rows: Option<ScratchBuf<T>>,
    /// Row squared norms of the batch rows (Gaussian only).
    norms: Vec<f64>,
}

pub(crate) fn validate_plan(plan: &BatchPlan, n: usize, m: usize, d: usize, g: usize) -> Result<()> {
    if plan.q == 0 || plan.q > n || plan.r == 0 || plan.r > m || plan.s == 0 || plan.s > d.max(1) {
        return Err(FalkonError::InfeasibleBudget(format!(
            "plan (q={}, r={}, s={}) out of range for n={n}, m={m}, d={d}",
            plan.q, plan.r, plan.s
        )));
    }
    if plan.q * plan.s + d * plan.s > g {
        return Err(FalkonError::InfeasibleBudget(format!(
            "plan violates the budget: q·s + d·s = {} > G = {g}",
            plan.q * plan.s + d * plan.s
        )));
    }
    Ok(())
}

/// Runs a streamed operation over all batches of `x` against the inducing
/// rows `xm`.
pub(crate) fn run_stream<T: Real>(
    x: &Matrix<T>,
    xm: &Matrix<T>,
    kernel: &KernelSpec,
    plan: &BatchPlan,
    ctx: &ExecCtx,
    op: &StreamOp<'_>,
) -> Result<StreamResult> {
    let n = x.rows();
    let m = xm.rows();
    let d = x.cols();
    if xm.cols() != d {
        return Err(FalkonError::DimensionMismatch(format!(
            "data has {d} features, inducing rows have {}",
            xm.cols()
        )));
    }
    for f in &op.forward {
        if f.len() != m {
            return Err(FalkonError::DimensionMismatch(
                "forward vectors must have length m".into(),
            ));
        }
    }
    validate_plan(plan, n, m, d, ctx.budget.scratch_elements_per_worker)?;

    // Inducing-point norms are shared by every batch.
    let nm_norms = match kernel {
        KernelSpec::Gaussian { .. } => kernel::row_squared_norms(xm),
        KernelSpec::Linear => Vec::new(),
    };
    ctx.ledger.register_aux_host(nm_norms.len());

    let fused = x.is_dense() && xm.is_dense() && d <= ctx.stream.thin_data_threshold;
    let batches: Vec<Range<usize>> = (0..n)
        .step_by(plan.q)
        .map(|s| s..(s + plan.q).min(n))
        .collect();
    let workers = ctx.budget.workers;
    let (tx, rx) = mpsc::channel::<Result<ComputedBatch>>();

    let shared = Shared {
        x,
        xm,
        kernel,
        plan,
        op,
        nm_norms: &nm_norms,
        fused,
        m,
        d,
        delay: ctx.stream.stage_delay,
    };

    let result: Result<StreamResult> = std::thread::scope(|scope| {
        for w in 0..workers {
            let my_batches: Vec<(usize, Range<usize>)> = batches
                .iter()
                .cloned()
                .enumerate()
                .skip(w)
                .step_by(workers)
                .collect();
            let tx = tx.clone();
            let arena = ctx.stream_arena::<T>(w);
            let shared = &shared;
            let overlap = ctx.stream.overlap;
            scope.spawn(move || {
                let out = if overlap {
                    worker_pipelined(shared, my_batches, arena, tx.clone())
                } else {
                    worker_serial(shared, my_batches, arena, tx.clone())
                };
                if let Err(e) = out {
                    // Deliver the failure through the result channel so the
                    // reducer stops waiting.
                    let _ = tx.send(Err(e));
                }
            });
        }
        drop(tx);

        reduce(rx, batches.len(), n, m, op)
    });

    ctx.ledger.unregister_aux_host(nm_norms.len());
    result
}

struct Shared<'a, T> {
    x: &'a Matrix<T>,
    xm: &'a Matrix<T>,
    kernel: &'a KernelSpec,
    plan: &'a BatchPlan,
    op: &'a StreamOp<'a>,
    nm_norms: &'a [f64],
    fused: bool,
    m: usize,
    d: usize,
    delay: Option<Duration>,
}

fn stage_delay(delay: Option<Duration>) {
    if let Some(d) = delay {
        std::thread::sleep(d);
    }
}

fn worker_serial<T: Real>(
    shared: &Shared<'_, T>,
    my_batches: Vec<(usize, Range<usize>)>,
    arena: ScratchArena,
    tx: mpsc::Sender<Result<ComputedBatch>>,
) -> Result<()> {
    for (index, range) in my_batches {
        stage_delay(shared.delay);
        let loaded = load_batch(shared, index, range, &arena)?;
        stage_delay(shared.delay);
        let computed = compute_batch(shared, loaded, &arena)?;
        stage_delay(shared.delay);
        tx.send(Ok(computed)).ok();
    }
    Ok(())
}

/// Three stages connected by bounded queues of depth 2 per worker.
fn worker_pipelined<T: Real>(
    shared: &Shared<'_, T>,
    my_batches: Vec<(usize, Range<usize>)>,
    arena: ScratchArena,
    tx: mpsc::Sender<Result<ComputedBatch>>,
) -> Result<()> {
    let (load_tx, load_rx) = mpsc::sync_channel::<LoadedBatch<T>>(2);
    let (comp_tx, comp_rx) = mpsc::sync_channel::<ComputedBatch>(2);

    std::thread::scope(|s| -> Result<()> {
        let loader = s.spawn({
            let arena = arena.clone();
            move || -> Result<()> {
                for (index, range) in my_batches {
                    stage_delay(shared.delay);
                    let loaded = load_batch(shared, index, range, &arena)?;
                    if load_tx.send(loaded).is_err() {
                        break;
                    }
                }
                Ok(())
            }
        });
        let computer = s.spawn({
            let arena = arena.clone();
            move || -> Result<()> {
                while let Ok(loaded) = load_rx.recv() {
                    stage_delay(shared.delay);
                    let computed = compute_batch(shared, loaded, &arena)?;
                    if comp_tx.send(computed).is_err() {
                        break;
                    }
                }
                Ok(())
            }
        });
        let storer = s.spawn(move || -> Result<()> {
            while let Ok(computed) = comp_rx.recv() {
                stage_delay(shared.delay);
                tx.send(Ok(computed)).ok();
            }
            Ok(())
        });
        let mut first_err = None;
        for h in [loader, computer, storer] {
            if let Err(e) = h.join().expect("pipeline stage panicked") {
                first_err.get_or_insert(e);
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    })
}

/// Load stage: batch rows (and their norms) into worker scratch.
fn load_batch<'a, T: Real>(
    shared: &Shared<'a, T>,
    index: usize,
    range: Range<usize>,
    arena: &ScratchArena,
) -> Result<LoadedBatch<T>> {
    let q = range.len();
    let needs_norms = matches!(shared.kernel, KernelSpec::Gaussian { .. });
    match (shared.x, shared.fused) {
        (Matrix::Dense(xd), true) => {
            // Thin data: the whole row block is small, load it verbatim.
            let mut rows = arena.alloc::<T>(q * shared.d)?;
            let src = xd.row_range(range.start, range.end);
            rows.copy_from_slice(src.values);
            arena.note_load(q * shared.d);
            let norms = if needs_norms {
                (0..q)
                    .map(|i| {
                        let r = &rows[i * shared.d..(i + 1) * shared.d];
                        r.iter().map(|v| v.as_f64() * v.as_f64()).sum()
                    })
                    .collect()
            } else {
                Vec::new()
            };
            Ok(LoadedBatch {
                index,
                range,
                dense_rows: Some(rows),
                norms,
            })
        }
        (Matrix::Dense(_), false) => {
            // Blocked path loads feature slices during compute; only the
            // batch norms are prepared here (one slice pass).
            Ok(LoadedBatch {
                index,
                range,
                dense_rows: None,
                norms: Vec::new(),
            })
        }
        (Matrix::Sparse(xs), _) => {
            let view = xs.row_range(range.start, range.end);
            arena.note_load(view.range_nnz());
            let norms = if needs_norms {
                kernel::row_squared_norms_view(&RowsRef::Sparse(view))
            } else {
                Vec::new()
            };
            Ok(LoadedBatch {
                index,
                range,
                dense_rows: None,
                norms,
            })
        }
    }
}

/// Compute stage: evaluate kernel rows or a materialized block and fold the
/// per-row results.
fn compute_batch<T: Real>(
    shared: &Shared<'_, T>,
    loaded: LoadedBatch<T>,
    arena: &ScratchArena,
) -> Result<ComputedBatch> {
    let q = loaded.range.len();
    let m = shared.m;
    let nf = shared.op.forward.len();
    let mut partial = shared.op.wants_transpose.then(|| vec![0.0f64; m]);
    let mut outputs = shared.op.wants_output.then(|| vec![0.0f64; q]);
    let mut scalar = 0.0f64;
    let mut z = vec![0.0f64; nf];

    if shared.fused {
        // Row-at-a-time: one kernel row in scratch, visited by the forward
        // products and the transposed accumulation while hot.
        let rows = loaded.dense_rows.as_ref().expect("fused path loads rows");
        let xm_dense = match shared.xm {
            Matrix::Dense(mm) => mm.view(),
            Matrix::Sparse(_) => unreachable!("fused path requires dense inducing rows"),
        };
        let mut krow = arena.alloc::<f64>(m)?;
        for i in 0..q {
            let a_row = &rows[i * shared.d..(i + 1) * shared.d];
            let na = if loaded.norms.is_empty() {
                0.0
            } else {
                loaded.norms[i]
            };
            kernel::kernel_row_f64(
                shared.kernel,
                a_row,
                na,
                &RowsRef::Dense(xm_dense),
                shared.nm_norms,
                &mut krow,
            );
            for (k, f) in shared.op.forward.iter().enumerate() {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += krow[j] * f[j];
                }
                z[k] = acc;
            }
            let rr = (shared.op.per_row)(loaded.range.start + i, &z);
            scalar += rr.scalar;
            if let Some(out) = outputs.as_mut() {
                out[i] = rr.output;
            }
            if let Some(p) = partial.as_mut() {
                if rr.weight != 0.0 {
                    for j in 0..m {
                        p[j] += rr.weight * krow[j];
                    }
                }
            }
        }
    } else {
        // Materialize the batch block in scratch (working precision), then
        // run the forward products and the transposed accumulation on it.
        let block = materialize_block(shared, &loaded, arena)?;
        let mut weights = vec![0.0f64; q];
        for i in 0..q {
            let krow = &block[i * m..(i + 1) * m];
            for (k, f) in shared.op.forward.iter().enumerate() {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += krow[j].as_f64() * f[j];
                }
                z[k] = acc;
            }
            let rr = (shared.op.per_row)(loaded.range.start + i, &z);
            scalar += rr.scalar;
            if let Some(out) = outputs.as_mut() {
                out[i] = rr.output;
            }
            weights[i] = rr.weight;
        }
        if let Some(p) = partial.as_mut() {
            for i in 0..q {
                let w = weights[i];
                if w != 0.0 {
                    let krow = &block[i * m..(i + 1) * m];
                    for j in 0..m {
                        p[j] += w * krow[j].as_f64();
                    }
                }
            }
        }
    }

    Ok(ComputedBatch {
        index: loaded.index,
        range: loaded.range,
        partial,
        outputs,
        scalar,
    })
}

/// Builds the `q×m` kernel block for a batch in scratch, streaming feature
/// slices of width `s` for dense data.
fn materialize_block<T: Real>(
    shared: &Shared<'_, T>,
    loaded: &LoadedBatch<T>,
    arena: &ScratchArena,
) -> Result<ScratchBuf<T>> {
    let q = loaded.range.len();
    let m = shared.m;
    let mut block = arena.alloc::<T>(q * m)?;
    match (shared.x, shared.xm) {
        (Matrix::Dense(xd), Matrix::Dense(xmd)) => {
            // Accumulate cross products over feature slices in 64-bit.
            let mut acc = arena.alloc::<f64>(q * m)?;
            let mut na = vec![0.0f64; q];
            let d = shared.d;
            let s = shared.plan.s;
            let mut c0 = 0;
            while c0 < d {
                let sw = s.min(d - c0);
                let xb = load_slice_f64(xd, loaded.range.start, q, c0, sw, arena)?;
                let xm = load_slice_f64(xmd, 0, m, c0, sw, arena)?;
                for i in 0..q {
                    let xi = &xb[i * sw..(i + 1) * sw];
                    for k in 0..sw {
                        na[i] += xi[k] * xi[k];
                    }
                    for j in 0..m {
                        let xj = &xm[j * sw..(j + 1) * sw];
                        let mut dot = 0.0;
                        for k in 0..sw {
                            dot += xi[k] * xj[k];
                        }
                        acc[i * m + j] += dot;
                    }
                }
                c0 += sw;
            }
            finalize_block(shared.kernel, &acc, &na, shared.nm_norms, &mut block);
        }
        (x, xm) => {
            // Sparse operands: evaluate through the shared block path.
            let a = x.row_range(loaded.range.start, loaded.range.end);
            let b = xm.view();
            kernel::fill_block_with_norms(
                shared.kernel,
                PrecisionPolicy::default(),
                &a,
                &loaded.norms,
                &b,
                shared.nm_norms,
                &mut block,
            );
        }
    }
    Ok(block)
}

fn load_slice_f64<T: Real>(
    x: &crate::kernel::DenseMatrix<T>,
    r0: usize,
    rows: usize,
    c0: usize,
    width: usize,
    arena: &ScratchArena,
) -> Result<ScratchBuf<f64>> {
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

fn finalize_block<T: Real>(
    kernel: &KernelSpec,
    acc: &[f64],
    na: &[f64],
    nb: &[f64],
    out: &mut [T],
) {
    match kernel {
        KernelSpec::Gaussian { sigma } => {
            let inv2s2 = 1.0 / (2.0 * sigma * sigma);
            let cols = nb.len();
            for i in 0..na.len() {
                for j in 0..cols {
                    let d2 = na[i] - 2.0 * acc[i * cols + j] + nb[j];
                    out[i * cols + j] = T::from_f64(-d2 * inv2s2).exp();
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

/// Single reducer: applies per-batch results in batch-index order.
fn reduce(
    rx: mpsc::Receiver<Result<ComputedBatch>>,
    n_batches: usize,
    n: usize,
    m: usize,
    op: &StreamOp<'_>,
) -> Result<StreamResult> {
    let mut accum = vec![0.0f64; m];
    let mut outputs = op.wants_output.then(|| vec![0.0f64; n]);
    let mut scalar = 0.0f64;
    let mut pending: Vec<Option<ComputedBatch>> = (0..n_batches).map(|_| None).collect();
    let mut next = 0usize;
    let mut seen = 0usize;
    let mut failure: Option<FalkonError> = None;

    while seen < n_batches {
        let msg = match rx.recv() {
            Ok(Ok(msg)) => msg,
            Ok(Err(e)) => {
                failure.get_or_insert(e);
                break;
            }
            Err(_) => break,
        };
        seen += 1;
        let slot = msg.index;
        pending[slot] = Some(msg);
        while next < n_batches {
            let Some(batch) = pending[next].take() else {
                break;
            };
            if let Some(p) = &batch.partial {
                for j in 0..m {
                    accum[j] += p[j];
                }
            }
            if let (Some(all), Some(part)) = (outputs.as_mut(), batch.outputs.as_ref()) {
                all[batch.range.clone()].copy_from_slice(part);
            }
            scalar += batch.scalar;
            next += 1;
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    if next < n_batches {
        return Err(FalkonError::Aborted);
    }
    Ok(StreamResult {
        transpose_accum: accum,
        outputs,
        scalar,
    })
}
