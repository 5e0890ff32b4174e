//! Shared host-resident matrix buffer for out-of-core operations.
//!
//! Workers copy tiles in and out of this buffer concurrently. Exclusive
//! access to each tile region is guaranteed by the scheduling protocol
//! (work-table gating for the Cholesky, per-row barriers or triangle
//! disjointness for LAUUM), not by the type system, which is why the raw
//! rectangle accessors are `unsafe`.

use std::cell::UnsafeCell;

use crate::kernel::DenseMatrix;
use crate::real::Real;

#[derive(Debug)]
pub struct HostMat<T> {
    rows: usize,
    cols: usize,
    data: UnsafeCell<Vec<T>>,
}

// Safety: concurrent access happens only through the tile protocol described
// in the module docs; disjoint element ranges are read/written between
// synchronization points established by atomics or barriers.
unsafe impl<T: Send> Sync for HostMat<T> {}

impl<T: Real> HostMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: UnsafeCell::new(vec![T::zero(); rows * cols]),
        }
    }

    pub fn from_dense(m: &DenseMatrix<T>) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: UnsafeCell::new(m.values().to_vec()),
        }
    }

    pub fn to_dense(&mut self) -> DenseMatrix<T> {
        DenseMatrix::new(self.rows, self.cols, self.as_slice().to_vec()).unwrap()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&mut self) -> &[T] {
        self.data.get_mut()
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        self.data.get_mut()
    }

    #[inline]
    pub fn get(&mut self, i: usize, j: usize) -> T {
        self.data.get_mut()[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let cols = self.cols;
        self.data.get_mut()[i * cols + j] = v;
    }

    /// Address identity, used for aliasing checks.
    pub(crate) fn data_ptr(&self) -> *const T {
        unsafe { (*self.data.get()).as_ptr() }
    }

    /// Single-element read without synchronization.
    ///
    /// # Safety
    /// No concurrent writer may touch the element (e.g. the buffer is
    /// logically frozen after a build).
    #[inline]
    pub(crate) unsafe fn get_unsync(&self, i: usize, j: usize) -> T {
        let base = (*self.data.get()).as_ptr();
        *base.add(i * self.cols + j)
    }

    /// Copies the rectangle at (`r0`, `c0`) of size `nr×nc` into `dst`
    /// (row-major).
    ///
    /// # Safety
    /// No concurrent writer may touch any element of the rectangle.
    pub(crate) unsafe fn read_rect(&self, r0: usize, c0: usize, nr: usize, nc: usize, dst: &mut [T]) {
        debug_assert!(r0 + nr <= self.rows && c0 + nc <= self.cols);
        let base = (*self.data.get()).as_ptr();
        for i in 0..nr {
            std::ptr::copy_nonoverlapping(
                base.add((r0 + i) * self.cols + c0),
                dst.as_mut_ptr().add(i * nc),
                nc,
            );
        }
    }

    /// Transposing read: `dst[j·nr + i] = self[r0+i, c0+j]`.
    ///
    /// # Safety
    /// As for [`HostMat::read_rect`].
    pub(crate) unsafe fn read_rect_transposed(
        &self,
        r0: usize,
        c0: usize,
        nr: usize,
        nc: usize,
        dst: &mut [T],
    ) {
        debug_assert!(r0 + nr <= self.rows && c0 + nc <= self.cols);
        let base = (*self.data.get()).as_ptr();
        for i in 0..nr {
            let row = base.add((r0 + i) * self.cols + c0);
            for j in 0..nc {
                *dst.get_unchecked_mut(j * nr + i) = *row.add(j);
            }
        }
    }

    /// Writes a row-major rectangle.
    ///
    /// # Safety
    /// No concurrent reader or writer may touch any element of the rectangle.
    pub(crate) unsafe fn write_rect(&self, r0: usize, c0: usize, nr: usize, nc: usize, src: &[T]) {
        debug_assert!(r0 + nr <= self.rows && c0 + nc <= self.cols);
        let base = (*self.data.get()).as_mut_ptr();
        for i in 0..nr {
            std::ptr::copy_nonoverlapping(
                src.as_ptr().add(i * nc),
                base.add((r0 + i) * self.cols + c0),
                nc,
            );
        }
    }

    /// Copies only the elements of the rectangle selected by `keep`
    /// (`keep(i, j)` over local indices); other destination elements are
    /// left untouched.
    ///
    /// # Safety
    /// No concurrent access to the selected elements.
    pub(crate) unsafe fn write_rect_masked(
        &self,
        r0: usize,
        c0: usize,
        nr: usize,
        nc: usize,
        src: &[T],
        keep: impl Fn(usize, usize) -> bool,
    ) {
        debug_assert!(r0 + nr <= self.rows && c0 + nc <= self.cols);
        let base = (*self.data.get()).as_mut_ptr();
        for i in 0..nr {
            for j in 0..nc {
                if keep(i, j) {
                    *base.add((r0 + i) * self.cols + c0 + j) = *src.get_unchecked(i * nc + j);
                }
            }
        }
    }

    /// Reads only selected elements of a rectangle into `dst`; unselected
    /// destination entries are zeroed.
    ///
    /// # Safety
    /// No concurrent writer may touch the selected elements.
    pub(crate) unsafe fn read_rect_masked(
        &self,
        r0: usize,
        c0: usize,
        nr: usize,
        nc: usize,
        dst: &mut [T],
        keep: impl Fn(usize, usize) -> bool,
    ) {
        debug_assert!(r0 + nr <= self.rows && c0 + nc <= self.cols);
        let base = (*self.data.get()).as_ptr();
        for i in 0..nr {
            for j in 0..nc {
                dst[i * nc + j] = if keep(i, j) {
                    *base.add((r0 + i) * self.cols + c0 + j)
                } else {
                    T::zero()
                };
            }
        }
    }

    /// Transposed masked write: `self[r0+j, c0+i] = src[i·nc + j]` for kept
    /// local (i, j).
    ///
    /// # Safety
    /// No concurrent access to the written elements.
    pub(crate) unsafe fn write_rect_transposed_masked(
        &self,
        r0: usize,
        c0: usize,
        nr: usize,
        nc: usize,
        src: &[T],
        keep: impl Fn(usize, usize) -> bool,
        map: impl Fn(usize, usize, T) -> T,
    ) {
        // src is nr×nc (logical tile); destination rectangle is nc×nr at (r0, c0).
        debug_assert!(r0 + nc <= self.rows && c0 + nr <= self.cols);
        let base = (*self.data.get()).as_mut_ptr();
        for i in 0..nr {
            for j in 0..nc {
                if keep(i, j) {
                    let v = map(i, j, *src.get_unchecked(i * nc + j));
                    *base.add((r0 + j) * self.cols + c0 + i) = v;
                }
            }
        }
    }
}
