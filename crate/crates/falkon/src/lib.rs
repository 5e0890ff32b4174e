//! Out-of-core kernel solver built around the Nyström-preconditioned
//! conjugate-gradient method.
//!
//! The crate is organized along the data path of the solver:
//!
//! * [`kernel`] — kernel block evaluation for dense and CSR inputs, with a
//!   precision policy for 32-bit working data and a fused thin-data path.
//! * [`ooc`] — tiled, memory-budgeted out-of-core linear algebra (in-place
//!   Cholesky, LAUUM, triangular solves) driven by cooperating workers and an
//!   instrumented transfer ledger.
//! * [`precond`] — the two-triangle preconditioner built inside a single
//!   `m×m` buffer, plus its curvature-weighted variant.
//! * [`solver`] — batched streaming kernel-vector products, the preconditioned
//!   operator, conjugate gradient, fit and predict for the squared loss.
//! * [`gsc`] — generalized self-concordant losses and the approximate-Newton
//!   outer loop for them.
//! * [`io`] / [`metrics`] — dataset ingestion, model persistence, metrics.
//!
//! The `book/` directory of the repository walks through the same layers with
//! runnable examples; those snippets compile as doc-tests of this crate.

pub mod error;
pub mod gsc;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod ooc;
pub mod precond;
pub mod real;
pub mod solver;

pub use error::{FalkonError, Result};
pub use real::Real;

/// Guide chapters compiled as doc-tests (`cargo test --doc`) so the book and
/// the API never drift apart.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/out_of_core.md")]
    mod out_of_core {}
    #[doc = include_str!("../../../book/src/preconditioner.md")]
    mod preconditioner {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
