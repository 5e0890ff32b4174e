//! Out-of-core, in-place, multi-worker Cholesky factorization.
//!
//! The operand is split into `N×N` tiles; block rows are owned 1D
//! block-cyclically by `P` workers. Each block column is processed in three
//! steps — factorize the diagonal tile, triangular-solve the sub-column,
//! rank-update the trailing submatrix — with readiness between workers gated
//! purely by the per-tile work table: a tile may be consumed once its counter
//! reaches the statically known update count for the current step. The tile
//! update order is therefore identical for every worker count, which makes
//! the factor bitwise reproducible across `P`.

use std::sync::atomic::{AtomicBool, Ordering};

use super::access::{Tile, TriAccess};
use super::backend::{HostBackend, TileBackend, Triangle};
use super::host::HostMat;
use super::layout::{TileLayout, WorkTable};
use super::ExecCtx;
use crate::error::{FalkonError, Result};
use crate::real::Real;

/// In-place Cholesky of the lower triangle: `A = L·Lᵀ` with `L` overwriting
/// the lower triangle; the upper triangle is untouched. Returns the final
/// work table for inspection.
pub fn ooc_cholesky_inplace<T: Real>(
    a: &mut HostMat<T>,
    layout: &TileLayout,
    ctx: &ExecCtx,
) -> Result<WorkTable> {
    ooc_cholesky_uplo(a, Triangle::Lower, layout, ctx)
}

/// Same factorization with the operand (and factor) living in the chosen
/// triangle. `Upper` factors `A = Uᵀ·U`, writing `U` to the upper triangle.
pub(crate) fn ooc_cholesky_uplo<T: Real>(
    a: &mut HostMat<T>,
    uplo: Triangle,
    layout: &TileLayout,
    ctx: &ExecCtx,
) -> Result<WorkTable> {
    if a.rows() != a.cols() || a.rows() != layout.n() {
        return Err(FalkonError::DimensionMismatch(format!(
            "cholesky operand {}x{} does not match layout side {}",
            a.rows(),
            a.cols(),
            layout.n()
        )));
    }
    ctx.check_layout(layout)?;

    let table = WorkTable::new(layout.n_tiles());
    let abort = AtomicBool::new(false);
    let backend = HostBackend;
    let access = TriAccess {
        mat: &*a,
        transposed: uplo == Triangle::Upper,
    };

    let workers = layout.workers();
    let results: Vec<Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let access = &access;
                let table = &table;
                let abort = &abort;
                let backend = &backend;
                s.spawn(move || {
                    cholesky_worker(access, layout, ctx, table, abort, backend, w)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("cholesky worker panicked"))
            .collect()
    });

    merge_worker_results(results)?;
    Ok(table)
}

pub(super) fn merge_worker_results(results: Vec<Result<()>>) -> Result<()> {
    let mut first: Option<FalkonError> = None;
    for r in results {
        if let Err(e) = r {
            match (&first, &e) {
                // A real failure beats the secondary aborts it caused.
                (None, _) => first = Some(e),
                (Some(FalkonError::Aborted), _) => first = Some(e),
                _ => {}
            }
        }
    }
    match first {
        None => Ok(()),
        Some(e) => Err(e),
    }
}

fn cholesky_worker<T: Real, B: TileBackend<T>>(
    access: &TriAccess<'_, T>,
    layout: &TileLayout,
    ctx: &ExecCtx,
    table: &WorkTable,
    abort: &AtomicBool,
    backend: &B,
    worker: usize,
) -> Result<()> {
    let arena = ctx.arena::<T>(worker);
    let ledger = arena.ledger().clone();
    let timeout = ctx.wait_timeout;
    let n_tiles = layout.n_tiles();
    let owned = layout.owned_rows(worker);

    let run = || -> Result<()> {
        for k in 0..n_tiles {
            // Step 1: factorize the diagonal tile of column k (owner only).
            if layout.owner_of_row(k) == worker {
                table.wait_for(k, k, k as u32, abort, &ledger, timeout)?;
                let mut diag = access.load(&arena, layout, k, k)?;
                let dn = diag.rows;
                backend
                    .potrf_lower(diag.as_mut_slice(), dn)
                    .map_err(|_| FalkonError::NotPositiveDefinite { block_col: k })?;
                access.store(&arena, layout, k, k, &diag);
                table.bump(k, k, &ledger);
            }

            // Step 2: triangular solves of the sub-column tiles this worker owns.
            {
                let mut diag_cache: Option<Tile<T>> = None;
                for &j in owned.iter().filter(|&&j| j > k) {
                    table.wait_for(k, k, k as u32 + 1, abort, &ledger, timeout)?;
                    let diag = match &diag_cache {
                        Some(d) => d,
                        None => {
                            diag_cache = Some(access.load(&arena, layout, k, k)?);
                            diag_cache.as_ref().unwrap()
                        }
                    };
                    table.wait_for(j, k, k as u32, abort, &ledger, timeout)?;
                    let mut c = access.load(&arena, layout, j, k)?;
                    let cr = c.rows;
                    backend.trsm_right_lower_transpose(diag.as_slice(), diag.rows, c.as_mut_slice(), cr);
                    access.store(&arena, layout, j, k, &c);
                    table.bump(j, k, &ledger);
                }
            }

            // Step 3: trailing-submatrix update A[j,y] ← A[j,y] − L[j,k]·L[y,k]ᵀ.
            for &j in owned.iter().filter(|&&j| j > k) {
                table.wait_for(j, k, k as u32 + 1, abort, &ledger, timeout)?;
                let c = access.load(&arena, layout, j, k)?;
                for y in (k + 1)..=j {
                    table.wait_for(j, y, k as u32, abort, &ledger, timeout)?;
                    let mut e = access.load(&arena, layout, j, y)?;
                    let (er, ec) = (e.rows, e.cols);
                    if y == j {
                        backend.syrk_sub_lower(e.as_mut_slice(), er, c.as_slice(), c.cols);
                    } else {
                        table.wait_for(y, k, k as u32 + 1, abort, &ledger, timeout)?;
                        let d = access.load(&arena, layout, y, k)?;
                        backend.gemm_nt_sub(e.as_mut_slice(), c.as_slice(), d.as_slice(), er, ec, c.cols);
                    }
                    access.store(&arena, layout, j, y, &e);
                    table.bump(j, y, &ledger);
                }
            }
        }
        Ok(())
    };

    let out = run();
    if out.is_err() {
        abort.store(true, Ordering::Release);
        // Unblock peers spinning on counters that will never advance.
        ledger.tick_progress();
    }
    out
}

/// Static total update count per tile at completion (lower triangle):
/// column `j` tiles see `j` trailing updates plus one factorization or solve.
pub fn cholesky_expected_counts(layout: &TileLayout) -> Vec<u32> {
    let n = layout.n_tiles();
    let mut out = vec![0u32; n * n];
    for i in 0..n {
        for j in 0..=i {
            out[i * n + j] = j as u32 + 1;
        }
    }
    out
}
