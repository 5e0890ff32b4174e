//! Transfer and residency instrumentation.
//!
//! Every out-of-core operation charges its host↔scratch traffic and scratch
//! residency here, which is what makes the memory-footprint design testable:
//! per-worker scratch peaks are compared against the budget `G`, and the
//! audit counters expose how many kernel-block elements and `m×m` buffers
//! ever live in host memory.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{FalkonError, Result};

/// Scratch budget per worker (in working-precision elements) and worker count.
#[derive(Debug, Clone, Copy)]
pub struct MemoryBudget {
    /// `G`: elements of working precision a single worker may hold at once.
    pub scratch_elements_per_worker: usize,
    /// `P`: cooperating workers.
    pub workers: usize,
}

impl MemoryBudget {
    pub fn new(scratch_elements_per_worker: usize, workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(FalkonError::InvalidArgument("workers must be ≥ 1".into()));
        }
        if scratch_elements_per_worker == 0 {
            return Err(FalkonError::BudgetTooSmall(
                "scratch budget must be positive".into(),
            ));
        }
        Ok(Self {
            scratch_elements_per_worker,
            workers,
        })
    }

    /// Smallest budget that runs tiled operations at tile size `t` on an
    /// `n×n` operand: one block column plus one tile.
    pub fn for_tile_size(n: usize, t: usize, workers: usize) -> Result<Self> {
        let tiles_per_side = n.div_ceil(t);
        Self::new((tiles_per_side + 1) * t * t, workers)
    }
}

#[derive(Debug, Default)]
struct WorkerCounters {
    current: AtomicU64,
    peak: AtomicU64,
}

/// Shared instrumentation for one or more operations.
#[derive(Debug)]
pub struct TransferLedger {
    host_to_scratch: AtomicU64,
    scratch_to_host: AtomicU64,
    workers: Vec<WorkerCounters>,
    knm_host_current: AtomicU64,
    knm_host_peak: AtomicU64,
    mm_live: AtomicU64,
    mm_peak: AtomicU64,
    mm_total: AtomicU64,
    aux_host_current: AtomicU64,
    aux_host_peak: AtomicU64,
    /// Bumped on every tile-state change; wait loops use it for deadlock
    /// detection.
    progress: AtomicU64,
}

/// Plain copy of the ledger counters.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LedgerSnapshot {
    pub host_to_scratch_elements: u64,
    pub scratch_to_host_elements: u64,
    pub peak_scratch_per_worker: Vec<u64>,
    pub current_scratch_per_worker: Vec<u64>,
    pub knm_host_resident_elements: u64,
    pub knm_host_resident_peak: u64,
    pub mm_buffers_live: u64,
    pub mm_buffers_peak: u64,
    pub mm_buffers_total: u64,
    pub aux_host_elements: u64,
    pub aux_host_peak: u64,
}

impl TransferLedger {
    pub fn new(workers: usize) -> Arc<Self> {
        Arc::new(Self {
            host_to_scratch: AtomicU64::new(0),
            scratch_to_host: AtomicU64::new(0),
            workers: (0..workers).map(|_| WorkerCounters::default()).collect(),
            knm_host_current: AtomicU64::new(0),
            knm_host_peak: AtomicU64::new(0),
            mm_live: AtomicU64::new(0),
            mm_peak: AtomicU64::new(0),
            mm_total: AtomicU64::new(0),
            aux_host_current: AtomicU64::new(0),
            aux_host_peak: AtomicU64::new(0),
            progress: AtomicU64::new(0),
        })
    }

    pub fn worker_count(&self) -> usize {
        self.workers.len()
    }

    pub fn charge_load(&self, elements: usize) {
        self.host_to_scratch
            .fetch_add(elements as u64, Ordering::Relaxed);
    }

    pub fn charge_store(&self, elements: usize) {
        self.scratch_to_host
            .fetch_add(elements as u64, Ordering::Relaxed);
    }

    fn scratch_alloc(&self, worker: usize, elements: usize, cap: usize) -> Result<()> {
        let w = &self.workers[worker];
        let new = w.current.fetch_add(elements as u64, Ordering::Relaxed) + elements as u64;
        if new > cap as u64 {
            w.current.fetch_sub(elements as u64, Ordering::Relaxed);
            return Err(FalkonError::BudgetExceeded {
                worker,
                requested: new as usize,
                cap,
            });
        }
        w.peak.fetch_max(new, Ordering::Relaxed);
        Ok(())
    }

    fn scratch_free(&self, worker: usize, elements: usize) {
        self.workers[worker]
            .current
            .fetch_sub(elements as u64, Ordering::Relaxed);
    }

    /// Registers `elements` of K_nm block data living in *host* memory.
    /// Production paths never call this; it exists so tests can prove the
    /// counter is live and so that any future host materialization is caught.
    pub fn register_knm_host(&self, elements: usize) {
        let new = self
            .knm_host_current
            .fetch_add(elements as u64, Ordering::Relaxed)
            + elements as u64;
        self.knm_host_peak.fetch_max(new, Ordering::Relaxed);
    }

    pub fn unregister_knm_host(&self, elements: usize) {
        self.knm_host_current
            .fetch_sub(elements as u64, Ordering::Relaxed);
    }

    pub fn register_mm_buffer(&self) {
        let new = self.mm_live.fetch_add(1, Ordering::Relaxed) + 1;
        self.mm_peak.fetch_max(new, Ordering::Relaxed);
        self.mm_total.fetch_add(1, Ordering::Relaxed);
    }

    pub fn unregister_mm_buffer(&self) {
        self.mm_live.fetch_sub(1, Ordering::Relaxed);
    }

    pub fn register_aux_host(&self, elements: usize) {
        let new = self
            .aux_host_current
            .fetch_add(elements as u64, Ordering::Relaxed)
            + elements as u64;
        self.aux_host_peak.fetch_max(new, Ordering::Relaxed);
    }

    pub fn unregister_aux_host(&self, elements: usize) {
        self.aux_host_current
            .fetch_sub(elements as u64, Ordering::Relaxed);
    }

    pub fn tick_progress(&self) {
        self.progress.fetch_add(1, Ordering::Release);
    }

    pub fn progress(&self) -> u64 {
        self.progress.load(Ordering::Acquire)
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            host_to_scratch_elements: self.host_to_scratch.load(Ordering::Relaxed),
            scratch_to_host_elements: self.scratch_to_host.load(Ordering::Relaxed),
            peak_scratch_per_worker: self
                .workers
                .iter()
                .map(|w| w.peak.load(Ordering::Relaxed))
                .collect(),
            current_scratch_per_worker: self
                .workers
                .iter()
                .map(|w| w.current.load(Ordering::Relaxed))
                .collect(),
            knm_host_resident_elements: self.knm_host_current.load(Ordering::Relaxed),
            knm_host_resident_peak: self.knm_host_peak.load(Ordering::Relaxed),
            mm_buffers_live: self.mm_live.load(Ordering::Relaxed),
            mm_buffers_peak: self.mm_peak.load(Ordering::Relaxed),
            mm_buffers_total: self.mm_total.load(Ordering::Relaxed),
            aux_host_elements: self.aux_host_current.load(Ordering::Relaxed),
            aux_host_peak: self.aux_host_peak.load(Ordering::Relaxed),
        }
    }
}

/// Per-worker scratch allocator enforcing the cap the operation declared.
///
/// All allocation units are working-precision elements; 64-bit auxiliary
/// buffers are charged at their byte-equivalent element count.
#[derive(Clone)]
pub struct ScratchArena {
    ledger: Arc<TransferLedger>,
    worker: usize,
    cap: usize,
    elem_bytes: usize,
}

impl ScratchArena {
    pub fn new(ledger: Arc<TransferLedger>, worker: usize, cap: usize, elem_bytes: usize) -> Self {
        Self {
            ledger,
            worker,
            cap,
            elem_bytes,
        }
    }

    pub fn worker(&self) -> usize {
        self.worker
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn ledger(&self) -> &Arc<TransferLedger> {
        &self.ledger
    }

    /// Allocates a zeroed scratch buffer, charged in working-precision
    /// element units (`ceil(len · sizeof(S) / elem_bytes)`).
    pub fn alloc<S: Copy + Default>(&self, len: usize) -> Result<ScratchBuf<S>> {
        let charged = (len * std::mem::size_of::<S>()).div_ceil(self.elem_bytes);
        self.ledger.scratch_alloc(self.worker, charged, self.cap)?;
        Ok(ScratchBuf {
            data: vec![S::default(); len],
            charged,
            ledger: self.ledger.clone(),
            worker: self.worker,
        })
    }

    /// Charges a host→scratch transfer of `elements`.
    pub fn note_load(&self, elements: usize) {
        self.ledger.charge_load(elements);
    }

    /// Charges a scratch→host transfer of `elements`.
    pub fn note_store(&self, elements: usize) {
        self.ledger.charge_store(elements);
    }
}

/// RAII scratch buffer; releases its residency charge on drop.
pub struct ScratchBuf<S> {
    data: Vec<S>,
    charged: usize,
    ledger: Arc<TransferLedger>,
    worker: usize,
}

impl<S> Drop for ScratchBuf<S> {
    fn drop(&mut self) {
        self.ledger.scratch_free(self.worker, self.charged);
    }
}

impl<S> std::ops::Deref for ScratchBuf<S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.data
    }
}

impl<S> std::ops::DerefMut for ScratchBuf<S> {
    fn deref_mut(&mut self) -> &mut [S] {
        &mut self.data
    }
}
