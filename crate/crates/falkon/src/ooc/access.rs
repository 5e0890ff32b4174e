//! Tile-granular access to a host triangle, optionally through a transposed
//! mapping so the same lower-triangle algorithm can run on data stored in
//! the upper triangle of a shared buffer.

use super::host::HostMat;
use super::layout::TileLayout;
use super::ledger::{ScratchArena, ScratchBuf};
use crate::error::Result;
use crate::real::Real;

pub(crate) struct Tile<T> {
    pub buf: ScratchBuf<T>,
    pub rows: usize,
    pub cols: usize,
}

impl<T> Tile<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.buf
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.buf
    }
}

/// View of the logical *lower* triangle of a square host buffer.
///
/// With `transposed` set, logical element (i, j) lives at buffer (j, i), so
/// the identical scheduling code factorizes data stored in the upper
/// triangle.
pub(crate) struct TriAccess<'a, T> {
    pub mat: &'a HostMat<T>,
    pub transposed: bool,
}

impl<'a, T: Real> TriAccess<'a, T> {
    /// Loads logical tile (i, j), i ≥ j. Diagonal tiles come back
    /// lower-triangular with zeros above the diagonal.
    pub fn load(
        &self,
        arena: &ScratchArena,
        layout: &TileLayout,
        i: usize,
        j: usize,
    ) -> Result<Tile<T>> {
        let (ei, ej) = (layout.tile_extent(i), layout.tile_extent(j));
        let mut buf = arena.alloc::<T>(ei * ej)?;
        let (r0, c0) = (layout.tile_start(i), layout.tile_start(j));
        unsafe {
            if self.transposed {
                // Logical (i, j) is stored at buffer rect (j, i) of size ej×ei.
                self.mat.read_rect_transposed(c0, r0, ej, ei, &mut buf);
            } else {
                self.mat.read_rect(r0, c0, ei, ej, &mut buf);
            }
        }
        if i == j {
            for r in 0..ei {
                for c in (r + 1)..ej {
                    buf[r * ej + c] = T::zero();
                }
            }
        }
        arena.note_load(ei * ej);
        Ok(Tile {
            buf,
            rows: ei,
            cols: ej,
        })
    }

    /// Stores logical tile (i, j); diagonal tiles write only their
    /// lower-including-diagonal part so the other triangle of the buffer is
    /// never touched.
    pub fn store(&self, arena: &ScratchArena, layout: &TileLayout, i: usize, j: usize, tile: &Tile<T>) {
        let (ei, ej) = (tile.rows, tile.cols);
        let (r0, c0) = (layout.tile_start(i), layout.tile_start(j));
        let diag = i == j;
        unsafe {
            if self.transposed {
                self.mat.write_rect_transposed_masked(
                    c0,
                    r0,
                    ei,
                    ej,
                    tile.as_slice(),
                    |r, c| !diag || c <= r,
                    |_, _, v| v,
                );
            } else if diag {
                self.mat
                    .write_rect_masked(r0, c0, ei, ej, tile.as_slice(), |r, c| c <= r);
            } else {
                self.mat.write_rect(r0, c0, ei, ej, tile.as_slice());
            }
        }
        arena.note_store(ei * ej);
    }
}
