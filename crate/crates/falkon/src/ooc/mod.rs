//! Tiled, memory-budgeted, multi-worker out-of-core linear algebra.
//!
//! A large operand lives in a host buffer; `P` workers stream tiles through
//! scratch arenas capped at `G` working-precision elements each. Every
//! transfer and every byte of scratch residency is charged to a
//! [`TransferLedger`], so the memory-footprint claims of the design are
//! assertable after every run. Inter-worker tile handoff is modeled as a
//! host round-trip (write by the producer, read by the consumer) and charged
//! accordingly; waiting is bounded by deadlock detection.

mod access;
pub mod backend;
mod cholesky;
mod host;
mod lauum;
mod layout;
mod ledger;
mod solve;

pub use backend::{HostBackend, TileBackend, Triangle};
pub use cholesky::{cholesky_expected_counts, ooc_cholesky_inplace};
pub use host::HostMat;
pub use lauum::{lauum_expected_counts, ooc_lauum_inplace, ooc_lauum_outofplace};
pub use layout::{TileLayout, WorkTable};
pub use ledger::{LedgerSnapshot, MemoryBudget, ScratchArena, ScratchBuf, TransferLedger};
pub use solve::host_triangular_solve;

pub(crate) use cholesky::ooc_cholesky_uplo;
pub(crate) use lauum::{ooc_lauum_core, LauumSink, LauumSpec};

use std::sync::Arc;
use std::time::Duration;

use crate::error::{FalkonError, Result};
use crate::real::Real;

/// Knobs for the streaming product pipeline; see the solver module.
#[derive(Debug, Clone, Copy)]
pub struct StreamOptions {
    /// Overlap load/compute/store stages across consecutive batches.
    pub overlap: bool,
    /// Synthetic per-stage delay injected by the reference backend
    /// (benchmarks and pipeline tests only).
    pub stage_delay: Option<Duration>,
    /// Feature-count cutoff for dispatching the fused kernel-vector path.
    pub thin_data_threshold: usize,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            overlap: true,
            stage_delay: None,
            thin_data_threshold: crate::kernel::THIN_DATA_THRESHOLD,
        }
    }
}

/// Runtime context shared by the out-of-core operations: the memory budget,
/// the instrumentation ledger, and scheduling knobs.
#[derive(Clone)]
pub struct ExecCtx {
    pub budget: MemoryBudget,
    pub ledger: Arc<TransferLedger>,
    /// Wall-clock bound on a wait with no global progress.
    pub wait_timeout: Duration,
    pub stream: StreamOptions,
}

impl ExecCtx {
    pub fn new(budget: MemoryBudget) -> Self {
        Self {
            budget,
            ledger: TransferLedger::new(budget.workers),
            wait_timeout: Duration::from_secs(30),
            stream: StreamOptions::default(),
        }
    }

    /// Scratch arena for `worker`, capped at the budget `G`, with element
    /// units of the working precision `T`.
    pub fn arena<T: Real>(&self, worker: usize) -> ScratchArena {
        ScratchArena::new(
            self.ledger.clone(),
            worker,
            self.budget.scratch_elements_per_worker,
            T::BYTES,
        )
    }

    /// Arena for the streaming product path. Residency is still tracked per
    /// worker, but the hard cap is off: the kernel block a batch materializes
    /// is sized by the batch plan, not by the tile budget (the plan's
    /// `q·s + d·s ≤ G` constraint governs the streamed transfer buffers).
    pub fn stream_arena<T: Real>(&self, worker: usize) -> ScratchArena {
        ScratchArena::new(self.ledger.clone(), worker, usize::MAX, T::BYTES)
    }

    /// Validates that a layout can run under this context.
    pub fn check_layout(&self, layout: &TileLayout) -> Result<()> {
        if layout.workers() != self.budget.workers {
            return Err(FalkonError::InvalidArgument(format!(
                "layout built for {} workers, context has {}",
                layout.workers(),
                self.budget.workers
            )));
        }
        if layout.required_scratch() > self.budget.scratch_elements_per_worker {
            return Err(FalkonError::BudgetTooSmall(format!(
                "layout needs {} scratch elements per worker, budget grants {}",
                layout.required_scratch(),
                self.budget.scratch_elements_per_worker
            )));
        }
        Ok(())
    }
}

/// Largest tile size whose block column plus one tile fits the budget.
pub fn plan_tiles(n: usize, budget: &MemoryBudget) -> Result<TileLayout> {
    TileLayout::plan(n, budget)
}
