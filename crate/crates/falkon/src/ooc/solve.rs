//! Budget-streamed triangular solves against a host-resident matrix.
//!
//! Realizes the `T⁻¹`, `T⁻ᵀ`, `A⁻¹`, `A⁻ᵀ` applications on multi-column
//! right-hand sides: the triangle streams through scratch one tile at a
//! time while the right-hand side moves in row/column blocks sized to the
//! remaining budget.

use super::backend::{HostBackend, TileBackend, Triangle};
use super::host::HostMat;
use super::layout::TileLayout;
use super::ExecCtx;
use crate::error::{FalkonError, Result};
use crate::kernel::DenseMatrix;
use crate::real::Real;

/// Overwrites `b` (n×k) with `op(Tri)⁻¹·B` where `op` is plain or transposed
/// and `Tri`'s data lives in the `uplo` triangle of the host buffer.
pub fn host_triangular_solve<T: Real>(
    tri: &HostMat<T>,
    uplo: Triangle,
    transpose: bool,
    b: &mut DenseMatrix<T>,
    layout: &TileLayout,
    ctx: &ExecCtx,
) -> Result<()> {
    let n = tri.rows();
    if tri.cols() != n || layout.n() != n {
        return Err(FalkonError::DimensionMismatch(
            "triangular operand must be square and match the layout".into(),
        ));
    }
    if b.rows() != n {
        return Err(FalkonError::DimensionMismatch(format!(
            "right-hand side has {} rows, triangle has {n}",
            b.rows()
        )));
    }
    ctx.check_layout(layout)?;

    let k = b.cols();
    if k == 0 {
        return Ok(());
    }
    let backend = HostBackend;
    let arena = ctx.arena::<T>(0);
    let t = layout.tile_size();
    let g = ctx.budget.scratch_elements_per_worker;
    // One streamed triangle tile plus two RHS blocks must fit.
    let w_max = ((g.saturating_sub(t * t)) / (2 * t)).max(1).min(k);

    // Row-block update order depends on the effective orientation.
    let forward = matches!(
        (uplo, transpose),
        (Triangle::Lower, false) | (Triangle::Upper, true)
    );
    let n_tiles = layout.n_tiles();

    let mut col0 = 0;
    while col0 < k {
        let w = w_max.min(k - col0);
        let order: Vec<usize> = if forward {
            (0..n_tiles).collect()
        } else {
            (0..n_tiles).rev().collect()
        };
        for &bi in &order {
            let ei = layout.tile_extent(bi);
            let mut bi_block = load_rhs_block(&arena, b, layout, bi, col0, w)?;

            // Blocks already solved in this sweep couple into block `bi`.
            let couplings: Vec<usize> = order.iter().copied().take_while(|&x| x != bi).collect();
            for bj in couplings {
                let ej = layout.tile_extent(bj);
                let bj_block = load_rhs_block(&arena, b, layout, bj, col0, w)?;
                // Coupling tile of the effective system: op(Tri)[bi, bj].
                if !transpose {
                    let tile = load_tri_tile(&arena, tri, layout, bi, bj)?;
                    backend.gemm_nn_sub(&mut bi_block, &tile, &bj_block, ei, w, ej);
                } else {
                    let tile = load_tri_tile(&arena, tri, layout, bj, bi)?;
                    backend.gemm_tn_sub(&mut bi_block, &tile, &bj_block, ei, w, ej);
                }
            }

            let diag = load_tri_tile(&arena, tri, layout, bi, bi)?;
            backend
                .trsm_left(&diag, ei, uplo, transpose, &mut bi_block, w)
                .map_err(|local| FalkonError::ZeroDiagonal {
                    row: layout.tile_start(bi) + local,
                })?;
            store_rhs_block(&arena, b, layout, bi, col0, w, &bi_block);
        }
        col0 += w;
    }
    Ok(())
}

fn load_rhs_block<T: Real>(
    arena: &super::ledger::ScratchArena,
    b: &DenseMatrix<T>,
    layout: &TileLayout,
    bi: usize,
    col0: usize,
    w: usize,
) -> Result<super::ledger::ScratchBuf<T>> {
    let ei = layout.tile_extent(bi);
    let r0 = layout.tile_start(bi);
    let mut buf = arena.alloc::<T>(ei * w)?;
    for r in 0..ei {
        let row = b.row(r0 + r);
        buf[r * w..(r + 1) * w].copy_from_slice(&row[col0..col0 + w]);
    }
    arena.note_load(ei * w);
    Ok(buf)
}

fn store_rhs_block<T: Real>(
    arena: &super::ledger::ScratchArena,
    b: &mut DenseMatrix<T>,
    layout: &TileLayout,
    bi: usize,
    col0: usize,
    w: usize,
    buf: &[T],
) {
    let ei = layout.tile_extent(bi);
    let r0 = layout.tile_start(bi);
    let cols = b.cols();
    for r in 0..ei {
        let dst = &mut b.values_mut()[(r0 + r) * cols + col0..(r0 + r) * cols + col0 + w];
        dst.copy_from_slice(&buf[r * w..(r + 1) * w]);
    }
    arena.note_store(ei * w);
}

/// Loads stored tile (bi, bj) of the triangle. Off-diagonal coupling tiles
/// lie entirely inside the stored triangle; diagonal tiles may carry stale
/// data on their dead side, which the in-core solve never reads.
fn load_tri_tile<T: Real>(
    arena: &super::ledger::ScratchArena,
    tri: &HostMat<T>,
    layout: &TileLayout,
    bi: usize,
    bj: usize,
) -> Result<super::ledger::ScratchBuf<T>> {
    let (ei, ej) = (layout.tile_extent(bi), layout.tile_extent(bj));
    let (r0, c0) = (layout.tile_start(bi), layout.tile_start(bj));
    let mut buf = arena.alloc::<T>(ei * ej)?;
    unsafe {
        tri.read_rect(r0, c0, ei, ej, &mut buf);
    }
    arena.note_load(ei * ej);
    Ok(buf)
}
