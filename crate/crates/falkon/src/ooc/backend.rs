//! In-core tile primitives behind the scheduling layer.
//!
//! The out-of-core algorithms only ever touch tiles through this trait, so
//! an accelerator implementation can replace the host compute without
//! changing any scheduling or accounting. The reference backend runs the
//! primitives on host threads inside the scratch accounting.

use crate::real::Real;

/// Which triangle of a matrix an operation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Triangle {
    Lower,
    Upper,
}

/// In-core primitives on row-major tiles.
///
/// All slices are row-major with exact extents (ragged tiles are passed at
/// their true size). `Result`-returning primitives report the local index on
/// numerical failure.
pub trait TileBackend<T: Real>: Send + Sync {
    /// Cholesky of the lower triangle of `a` (n×n): `A = L·Lᵀ`, `L` written
    /// to the lower triangle. Elements above the diagonal are not read.
    fn potrf_lower(&self, a: &mut [T], n: usize) -> Result<(), usize>;

    /// `C ← C·L⁻ᵀ` for lower-triangular `L` (n×n); `c` is rows×n.
    fn trsm_right_lower_transpose(&self, l: &[T], n: usize, c: &mut [T], rows: usize);

    /// `E ← E − C·Cᵀ` on the lower triangle of `e` (rows×rows); `c` is
    /// rows×inner.
    fn syrk_sub_lower(&self, e: &mut [T], rows: usize, c: &[T], inner: usize);

    /// `E ← E − A·Bᵀ`; `e` rows×cols, `a` rows×inner, `b` cols×inner.
    fn gemm_nt_sub(&self, e: &mut [T], a: &[T], b: &[T], rows: usize, cols: usize, inner: usize);

    /// `acc ← acc + A·diag(w)·Bᵀ` (plain `A·Bᵀ` when `w` is `None`).
    fn gemm_nt_add_weighted(
        &self,
        acc: &mut [T],
        a: &[T],
        b: &[T],
        rows: usize,
        cols: usize,
        inner: usize,
        w: Option<&[f64]>,
    );

    /// `E ← E + C·Cᵀ` on the upper triangle of `e` (rows×rows).
    fn syrk_add_upper(&self, e: &mut [T], rows: usize, c: &[T], inner: usize);

    /// Upper triangle of `U·Uᵀ` overwrites the upper triangle of `u` (n×n);
    /// `tmp` must hold at least n·n elements.
    fn lauum_upper(&self, u: &mut [T], n: usize, tmp: &mut [T]);

    /// `C ← C·diag(w)·Uᵀ` in place for upper-triangular `U` (n×n); `c` is
    /// rows×n. `w` weights the shared inner dimension.
    fn trmm_right_upper_transpose_weighted(
        &self,
        c: &mut [T],
        rows: usize,
        u: &[T],
        n: usize,
        w: Option<&[f64]>,
    );

    /// Solves `op(Tri)·X = B` in place of `b` (n×w row-major); returns the
    /// local row index of a zero diagonal entry on failure.
    fn trsm_left(
        &self,
        tri: &[T],
        n: usize,
        uplo: Triangle,
        transpose: bool,
        b: &mut [T],
        w: usize,
    ) -> Result<(), usize>;

    /// `E ← E − A·B`; `e` rows×cols, `a` rows×inner, `b` inner×cols.
    fn gemm_nn_sub(&self, e: &mut [T], a: &[T], b: &[T], rows: usize, cols: usize, inner: usize);

    /// `E ← E − Aᵀ·B`; `e` rows×cols, `a` inner×rows, `b` inner×cols.
    fn gemm_tn_sub(&self, e: &mut [T], a: &[T], b: &[T], rows: usize, cols: usize, inner: usize);
}

/// Multi-accumulator dot product; the unroll gives the optimizer independent
/// chains without changing the result across call sites.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut s0 = T::zero();
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    let mut s3 = T::zero();
    let mut k = 0;
    while k + 4 <= n {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
        k += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while k < n {
        s += a[k] * b[k];
        k += 1;
    }
    s
}

#[inline]
fn dot_weighted<T: Real>(a: &[T], b: &[T], w: &[f64]) -> T {
    let mut s = T::zero();
    for k in 0..a.len() {
        s += a[k] * T::from_f64(w[k]) * b[k];
    }
    s
}

/// Reference backend: host compute.
#[derive(Debug, Default, Clone, Copy)]
pub struct HostBackend;

impl<T: Real> TileBackend<T> for HostBackend {
    fn potrf_lower(&self, a: &mut [T], n: usize) -> Result<(), usize> {
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= a[j * n + k] * a[j * n + k];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(j);
            }
            let dj = d.sqrt();
            a[j * n + j] = dj;
            for i in (j + 1)..n {
                let (top, bottom) = a.split_at_mut(i * n);
                let row_j = &top[j * n..j * n + j];
                let row_i = &mut bottom[..n];
                let s = row_i[j] - dot(&row_i[..j], row_j);
                row_i[j] = s / dj;
            }
        }
        Ok(())
    }

    fn trsm_right_lower_transpose(&self, l: &[T], n: usize, c: &mut [T], rows: usize) {
        for a in 0..rows {
            let row = &mut c[a * n..(a + 1) * n];
            for j in 0..n {
                let s = row[j] - dot(&row[..j], &l[j * n..j * n + j]);
                row[j] = s / l[j * n + j];
            }
        }
    }

    fn syrk_sub_lower(&self, e: &mut [T], rows: usize, c: &[T], inner: usize) {
        for i in 0..rows {
            let ci = &c[i * inner..(i + 1) * inner];
            for j in 0..=i {
                let cj = &c[j * inner..(j + 1) * inner];
                e[i * rows + j] -= dot(ci, cj);
            }
        }
    }

    fn gemm_nt_sub(&self, e: &mut [T], a: &[T], b: &[T], rows: usize, cols: usize, inner: usize) {
        for i in 0..rows {
            let ai = &a[i * inner..(i + 1) * inner];
            for j in 0..cols {
                let bj = &b[j * inner..(j + 1) * inner];
                e[i * cols + j] -= dot(ai, bj);
            }
        }
    }

    fn gemm_nt_add_weighted(
        &self,
        acc: &mut [T],
        a: &[T],
        b: &[T],
        rows: usize,
        cols: usize,
        inner: usize,
        w: Option<&[f64]>,
    ) {
        for i in 0..rows {
            let ai = &a[i * inner..(i + 1) * inner];
            for j in 0..cols {
                let bj = &b[j * inner..(j + 1) * inner];
                acc[i * cols + j] += match w {
                    None => dot(ai, bj),
                    Some(w) => dot_weighted(ai, bj, w),
                };
            }
        }
    }

    fn syrk_add_upper(&self, e: &mut [T], rows: usize, c: &[T], inner: usize) {
        for i in 0..rows {
            let ci = &c[i * inner..(i + 1) * inner];
            for j in i..rows {
                let cj = &c[j * inner..(j + 1) * inner];
                e[i * rows + j] += dot(ci, cj);
            }
        }
    }

    fn lauum_upper(&self, u: &mut [T], n: usize, tmp: &mut [T]) {
        for i in 0..n {
            for j in i..n {
                // Σ_{k ≥ j} U[i,k]·U[j,k]; both slices start at column j.
                tmp[i * n + j] = dot(&u[i * n + j..(i + 1) * n], &u[j * n + j..(j + 1) * n]);
            }
        }
        for i in 0..n {
            for j in i..n {
                u[i * n + j] = tmp[i * n + j];
            }
        }
    }

    fn trmm_right_upper_transpose_weighted(
        &self,
        c: &mut [T],
        rows: usize,
        u: &[T],
        n: usize,
        w: Option<&[f64]>,
    ) {
        for a in 0..rows {
            let row = &mut c[a * n..(a + 1) * n];
            // Ascending b: result column b reads row entries ≥ b, all still
            // original because earlier iterations only wrote columns < b.
            for b_col in 0..n {
                let ub = &u[b_col * n + b_col..(b_col + 1) * n];
                let rb = &row[b_col..];
                row[b_col] = match w {
                    None => dot(rb, ub),
                    Some(w) => dot_weighted(rb, ub, &w[b_col..]),
                };
            }
        }
    }

    fn trsm_left(
        &self,
        tri: &[T],
        n: usize,
        uplo: Triangle,
        transpose: bool,
        b: &mut [T],
        w: usize,
    ) -> Result<(), usize> {
        // Effective orientation of the system matrix after the transpose flag.
        let forward = matches!(
            (uplo, transpose),
            (Triangle::Lower, false) | (Triangle::Upper, true)
        );
        let coeff = |i: usize, k: usize| -> T {
            if transpose {
                tri[k * n + i]
            } else {
                tri[i * n + k]
            }
        };
        let order: Box<dyn Iterator<Item = usize>> = if forward {
            Box::new(0..n)
        } else {
            Box::new((0..n).rev())
        };
        for i in order {
            let d = coeff(i, i);
            if d == T::zero() {
                return Err(i);
            }
            let ks: Box<dyn Iterator<Item = usize>> = if forward {
                Box::new(0..i)
            } else {
                Box::new((i + 1)..n)
            };
            for k in ks {
                let lik = coeff(i, k);
                if lik != T::zero() {
                    let (kr, ir) = (k * w, i * w);
                    for c in 0..w {
                        let v = b[kr + c];
                        b[ir + c] -= lik * v;
                    }
                }
            }
            for c in 0..w {
                b[i * w + c] /= d;
            }
        }
        Ok(())
    }

    fn gemm_nn_sub(&self, e: &mut [T], a: &[T], b: &[T], rows: usize, cols: usize, inner: usize) {
        for i in 0..rows {
            for k in 0..inner {
                let aik = a[i * inner + k];
                if aik == T::zero() {
                    continue;
                }
                let brow = &b[k * cols..(k + 1) * cols];
                let erow = &mut e[i * cols..(i + 1) * cols];
                for j in 0..cols {
                    erow[j] -= aik * brow[j];
                }
            }
        }
    }

    fn gemm_tn_sub(&self, e: &mut [T], a: &[T], b: &[T], rows: usize, cols: usize, inner: usize) {
        for k in 0..inner {
            for i in 0..rows {
                let aki = a[k * rows + i];
                if aki == T::zero() {
                    continue;
                }
                let brow = &b[k * cols..(k + 1) * cols];
                let erow = &mut e[i * cols..(i + 1) * cols];
                for j in 0..cols {
                    erow[j] -= aki * brow[j];
                }
            }
        }
    }
}
