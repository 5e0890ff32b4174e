//! Out-of-core LAUUM: the (upper) triangle of `U·Uᵀ` for triangular `U`.
//!
//! Tiles obey `U_ij = Σ_{k≥j} U_ik·U_jkᵀ`. Diagonal results split into an
//! in-core LAUUM plus a symmetric rank-k accumulation; off-diagonal results
//! split into a triangular multiply plus general multiplies. Block rows are
//! processed top to bottom; for the in-place variant all workers rendezvous
//! on a barrier once per block row after loading its original tiles, so no
//! worker ever reads a partially overwritten row. The out-of-place variant
//! needs no rendezvous.
//!
//! A crate-internal entry point also supports column weights (`U·D·Uᵀ`), an
//! affine transform at write time, and a transposed sink targeting the other
//! triangle of the same buffer; the preconditioner build is its only user.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Barrier;

use super::access::Tile;
use super::backend::{HostBackend, TileBackend};
use super::cholesky::merge_worker_results;
use super::host::HostMat;
use super::layout::{TileLayout, WorkTable};
use super::ledger::ScratchArena;
use super::ExecCtx;
use crate::error::{FalkonError, Result};
use crate::real::Real;

pub(crate) enum LauumSink<'a, T> {
    /// Overwrite the upper triangle of the input (requires the barrier).
    InPlace,
    /// Write the upper triangle of a distinct buffer.
    OutOfPlace(&'a HostMat<T>),
    /// Write the result transposed into the lower triangle of this buffer
    /// (which may be the input buffer itself: reads then touch only the
    /// strict upper triangle because the diagonal is supplied separately).
    TransposedLower(&'a HostMat<T>),
}

pub(crate) struct LauumSpec<'a, T> {
    pub input: &'a HostMat<T>,
    /// Replaces the stored diagonal of the operand when the buffer's
    /// diagonal belongs to another factor.
    pub diag_override: Option<&'a [f64]>,
    /// Column weights: computes `U·diag(w)·Uᵀ`.
    pub weights: Option<&'a [f64]>,
    pub sink: LauumSink<'a, T>,
    /// Result is `scale·(U·D·Uᵀ)` with `diag_shift` added on the diagonal.
    pub scale: f64,
    pub diag_shift: f64,
}

/// In-place LAUUM on the upper triangle; the strictly-lower triangle is
/// untouched. Returns the final work table.
pub fn ooc_lauum_inplace<T: Real>(
    u: &mut HostMat<T>,
    layout: &TileLayout,
    ctx: &ExecCtx,
) -> Result<WorkTable> {
    let spec = LauumSpec {
        input: &*u,
        diag_override: None,
        weights: None,
        sink: LauumSink::InPlace,
        scale: 1.0,
        diag_shift: 0.0,
    };
    ooc_lauum_core(spec, layout, ctx)
}

/// Out-of-place LAUUM: same result written to the upper triangle of `out`.
pub fn ooc_lauum_outofplace<T: Real>(
    u: &HostMat<T>,
    out: &mut HostMat<T>,
    layout: &TileLayout,
    ctx: &ExecCtx,
) -> Result<WorkTable> {
    if std::ptr::eq(u.data_ptr(), out.data_ptr()) {
        return Err(FalkonError::Aliasing);
    }
    if out.rows() != u.rows() || out.cols() != u.cols() {
        return Err(FalkonError::DimensionMismatch(
            "out-of-place LAUUM output must match the operand shape".into(),
        ));
    }
    let spec = LauumSpec {
        input: u,
        diag_override: None,
        weights: None,
        sink: LauumSink::OutOfPlace(&*out),
        scale: 1.0,
        diag_shift: 0.0,
    };
    ooc_lauum_core(spec, layout, ctx)
}

pub(crate) fn ooc_lauum_core<T: Real>(
    spec: LauumSpec<'_, T>,
    layout: &TileLayout,
    ctx: &ExecCtx,
) -> Result<WorkTable> {
    let n = spec.input.rows();
    if spec.input.cols() != n || n != layout.n() {
        return Err(FalkonError::DimensionMismatch(format!(
            "LAUUM operand {}x{} does not match layout side {}",
            spec.input.rows(),
            spec.input.cols(),
            layout.n()
        )));
    }
    if matches!(spec.sink, LauumSink::TransposedLower(_)) && spec.diag_override.is_none() {
        return Err(FalkonError::InvalidArgument(
            "transposed LAUUM sink requires an external operand diagonal".into(),
        ));
    }
    ctx.check_layout(layout)?;

    let table = WorkTable::new(layout.n_tiles());
    let abort = AtomicBool::new(false);
    let backend = HostBackend;
    let barrier = match spec.sink {
        LauumSink::InPlace => Some(Barrier::new(layout.workers())),
        _ => None,
    };

    let workers = layout.workers();
    let spec_ref = &spec;
    let results: Vec<Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let table = &table;
                let abort = &abort;
                let backend = &backend;
                let barrier = barrier.as_ref();
                s.spawn(move || {
                    lauum_worker(spec_ref, layout, ctx, table, abort, barrier, backend, w)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("LAUUM worker panicked"))
            .collect()
    });

    merge_worker_results(results)?;
    Ok(table)
}

/// Loads logical upper tile (i, j), i ≤ j. Diagonal tiles come back upper
/// triangular; their stored diagonal is replaced by the override when given.
fn load_upper_tile<T: Real>(
    spec: &LauumSpec<'_, T>,
    arena: &ScratchArena,
    layout: &TileLayout,
    i: usize,
    j: usize,
) -> Result<Tile<T>> {
    let (ei, ej) = (layout.tile_extent(i), layout.tile_extent(j));
    let mut buf = arena.alloc::<T>(ei * ej)?;
    let (r0, c0) = (layout.tile_start(i), layout.tile_start(j));
    if i == j {
        unsafe {
            match spec.diag_override {
                None => spec
                    .input
                    .read_rect_masked(r0, c0, ei, ej, &mut buf, |r, c| c >= r),
                Some(_) => spec
                    .input
                    .read_rect_masked(r0, c0, ei, ej, &mut buf, |r, c| c > r),
            }
        }
        if let Some(d) = spec.diag_override {
            for r in 0..ei {
                buf[r * ej + r] = T::from_f64(d[r0 + r]);
            }
        }
    } else {
        unsafe {
            spec.input.read_rect(r0, c0, ei, ej, &mut buf);
        }
    }
    arena.note_load(ei * ej);
    Ok(Tile {
        buf,
        rows: ei,
        cols: ej,
    })
}

/// Applies the affine write transform and stores logical tile (i, j).
fn store_result_tile<T: Real>(
    spec: &LauumSpec<'_, T>,
    arena: &ScratchArena,
    layout: &TileLayout,
    i: usize,
    j: usize,
    tile: &mut Tile<T>,
) {
    let (ei, ej) = (tile.rows, tile.cols);
    let (r0, c0) = (layout.tile_start(i), layout.tile_start(j));
    let scale = T::from_f64(spec.scale);
    let shift = T::from_f64(spec.diag_shift);
    if spec.scale != 1.0 || spec.diag_shift != 0.0 {
        let buf = tile.as_mut_slice();
        for r in 0..ei {
            for c in 0..ej {
                let mut v = buf[r * ej + c] * scale;
                if i == j && r == c {
                    v += shift;
                }
                buf[r * ej + c] = v;
            }
        }
    }
    let diag = i == j;
    unsafe {
        match spec.sink {
            LauumSink::InPlace => {
                if diag {
                    spec.input
                        .write_rect_masked(r0, c0, ei, ej, tile.as_slice(), |r, c| c >= r);
                } else {
                    spec.input.write_rect(r0, c0, ei, ej, tile.as_slice());
                }
            }
            LauumSink::OutOfPlace(out) => {
                if diag {
                    out.write_rect_masked(r0, c0, ei, ej, tile.as_slice(), |r, c| c >= r);
                } else {
                    out.write_rect(r0, c0, ei, ej, tile.as_slice());
                }
            }
            LauumSink::TransposedLower(out) => {
                out.write_rect_transposed_masked(
                    c0,
                    r0,
                    ei,
                    ej,
                    tile.as_slice(),
                    |r, c| !diag || c >= r,
                    |_, _, v| v,
                );
            }
        }
    }
    arena.note_store(ei * ej);
}

#[allow(clippy::too_many_arguments)]
fn lauum_worker<T: Real, B: TileBackend<T>>(
    spec: &LauumSpec<'_, T>,
    layout: &TileLayout,
    ctx: &ExecCtx,
    table: &WorkTable,
    abort: &AtomicBool,
    barrier: Option<&Barrier>,
    backend: &B,
    worker: usize,
) -> Result<()> {
    let arena = ctx.arena::<T>(worker);
    let ledger = arena.ledger().clone();
    let n_tiles = layout.n_tiles();
    let owned = layout.owned_rows(worker);
    let weights_of = |k: usize| -> Option<&[f64]> {
        spec.weights.map(|w| {
            let s = layout.tile_start(k);
            &w[s..s + layout.tile_extent(k)]
        })
    };

    let mut my_err: Option<FalkonError> = None;
    for i in 0..n_tiles {
        // Tiles of row i this worker will read: suffix starting at its first
        // owned block row ≥ i (the diagonal owner needs the whole row).
        let first = owned.iter().copied().find(|&j| j >= i);
        let mut row: Vec<Option<Tile<T>>> = Vec::new();
        if my_err.is_none() && !abort.load(Ordering::Acquire) {
            if let Some(jmin) = first {
                let load = || -> Result<Vec<Option<Tile<T>>>> {
                    let mut row: Vec<Option<Tile<T>>> = (i..n_tiles).map(|_| None).collect();
                    for k in jmin..n_tiles {
                        row[k - i] = Some(load_upper_tile(spec, &arena, layout, i, k)?);
                    }
                    Ok(row)
                };
                match load() {
                    Ok(r) => row = r,
                    Err(e) => {
                        abort.store(true, Ordering::Release);
                        ledger.tick_progress();
                        my_err = Some(e);
                    }
                }
            }
        }

        // All workers hold the original row before anyone overwrites it.
        if let Some(b) = barrier {
            b.wait();
        }

        if my_err.is_some() || abort.load(Ordering::Acquire) {
            continue;
        }

        let mut work = || -> Result<()> {
            for &j in owned.iter().filter(|&&j| j >= i) {
                if j == i {
                    // Diagonal result: U_ii·U_iiᵀ plus the rank-k of the row tail.
                    let ei = layout.tile_extent(i);
                    if spec.weights.is_some() {
                        let mut acc = Tile {
                            buf: arena.alloc::<T>(ei * ei)?,
                            rows: ei,
                            cols: ei,
                        };
                        for k in i..n_tiles {
                            let ck = row[k - i].as_ref().unwrap();
                            backend.gemm_nt_add_weighted(
                                acc.as_mut_slice(),
                                ck.as_slice(),
                                ck.as_slice(),
                                ei,
                                ei,
                                ck.cols,
                                weights_of(k),
                            );
                        }
                        store_result_tile(spec, &arena, layout, i, i, &mut acc);
                    } else {
                        {
                            let mut tmp = arena.alloc::<T>(ei * ei)?;
                            let c0 = row[0].as_mut().unwrap();
                            backend.lauum_upper(c0.as_mut_slice(), ei, &mut tmp);
                        }
                        for k in (i + 1)..n_tiles {
                            // Split borrows: diagonal accumulator vs row tail.
                            let (head, tail) = row.split_at_mut(k - i);
                            let c0 = head[0].as_mut().unwrap();
                            let ck = tail[0].as_ref().unwrap();
                            backend.syrk_add_upper(
                                c0.as_mut_slice(),
                                ei,
                                ck.as_slice(),
                                ck.cols,
                            );
                        }
                        let mut c0 = row[0].take().unwrap();
                        store_result_tile(spec, &arena, layout, i, i, &mut c0);
                        row[0] = Some(c0);
                    }
                } else {
                    // Off-diagonal result, accumulated in place of row[j-i].
                    {
                        let djj = load_upper_tile(spec, &arena, layout, j, j)?;
                        let cj = row[j - i].as_mut().unwrap();
                        let cr = cj.rows;
                        backend.trmm_right_upper_transpose_weighted(
                            cj.as_mut_slice(),
                            cr,
                            djj.as_slice(),
                            djj.rows,
                            weights_of(j),
                        );
                    }
                    for k in (j + 1)..n_tiles {
                        let djk = load_upper_tile(spec, &arena, layout, j, k)?;
                        let (head, tail) = row.split_at_mut(k - i);
                        let cj = head[j - i].as_mut().unwrap();
                        let ck = tail[0].as_ref().unwrap();
                        let (cr, cc) = (cj.rows, cj.cols);
                        backend.gemm_nt_add_weighted(
                            cj.as_mut_slice(),
                            ck.as_slice(),
                            djk.as_slice(),
                            cr,
                            cc,
                            ck.cols,
                            weights_of(k),
                        );
                    }
                    let mut cj = row[j - i].take().unwrap();
                    store_result_tile(spec, &arena, layout, i, j, &mut cj);
                    row[j - i] = Some(cj);
                }
                table.bump(i, j, &ledger);
            }
            Ok(())
        };
        if let Err(e) = work() {
            abort.store(true, Ordering::Release);
            ledger.tick_progress();
            my_err = Some(e);
        }
    }

    match my_err {
        Some(e) => Err(e),
        None if abort.load(Ordering::Acquire) => Err(FalkonError::Aborted),
        None => Ok(()),
    }
}

/// Final work-table counts: each stored (upper) tile sees exactly one update.
pub fn lauum_expected_counts(layout: &TileLayout) -> Vec<u32> {
    let n = layout.n_tiles();
    let mut out = vec![0u32; n * n];
    for i in 0..n {
        for j in i..n {
            out[i * n + j] = 1;
        }
    }
    out
}
