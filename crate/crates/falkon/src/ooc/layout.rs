//! Tile geometry, block-cyclic ownership, and the per-tile progress table.

use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::time::{Duration, Instant};

use super::ledger::{MemoryBudget, TransferLedger};
use crate::error::{FalkonError, Result};

/// Tile geometry for an `n×n` operand plus 1D block-cyclic row ownership.
#[derive(Debug, Clone)]
pub struct TileLayout {
    n: usize,
    tile: usize,
    n_tiles: usize,
    workers: usize,
}

impl TileLayout {
    /// Largest tile size such that one block column plus a single tile fits
    /// the per-worker budget: `(N + 1)·t² ≤ G` with `N = ⌈n/t⌉`.
    pub fn plan(n: usize, budget: &MemoryBudget) -> Result<Self> {
        Self::plan_with_extra_tiles(n, budget, 0)
    }

    /// Like [`TileLayout::plan`] but reserving `extra` additional tiles of
    /// headroom (used by operations that keep a temporary tile alive while a
    /// whole block column is resident).
    pub fn plan_with_extra_tiles(n: usize, budget: &MemoryBudget, extra: usize) -> Result<Self> {
        if n == 0 {
            return Err(FalkonError::InvalidArgument(
                "matrix side must be ≥ 1".into(),
            ));
        }
        let g = budget.scratch_elements_per_worker;
        let t_max = n.min(isqrt(g / 2).max(1));
        for t in (1..=t_max).rev() {
            let n_tiles = n.div_ceil(t);
            if (n_tiles + 1 + extra) * t * t <= g {
                return Ok(Self {
                    n,
                    tile: t,
                    n_tiles,
                    workers: budget.workers,
                });
            }
        }
        Err(FalkonError::BudgetTooSmall(format!(
            "no tile size ≥ 1 satisfies (⌈{n}/t⌉+1{})·t² ≤ {g}",
            if extra > 0 { "+extra" } else { "" }
        )))
    }

    /// Fixed tile size (tests and benchmarks pick `t` explicitly).
    pub fn with_tile_size(n: usize, t: usize, workers: usize) -> Result<Self> {
        if n == 0 || t == 0 || t > n {
            return Err(FalkonError::InvalidArgument(format!(
                "invalid tile size {t} for side {n}"
            )));
        }
        if workers == 0 {
            return Err(FalkonError::InvalidArgument("workers must be ≥ 1".into()));
        }
        Ok(Self {
            n,
            tile: t,
            n_tiles: n.div_ceil(t),
            workers,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn tile_size(&self) -> usize {
        self.tile
    }

    /// Tiles per side (`N`).
    #[inline]
    pub fn n_tiles(&self) -> usize {
        self.n_tiles
    }

    #[inline]
    pub fn workers(&self) -> usize {
        self.workers
    }

    #[inline]
    pub fn tile_start(&self, i: usize) -> usize {
        i * self.tile
    }

    /// Extent of tile `i` along one side; the last tile may be ragged.
    #[inline]
    pub fn tile_extent(&self, i: usize) -> usize {
        if i + 1 == self.n_tiles {
            self.n - i * self.tile
        } else {
            self.tile
        }
    }

    /// 1D block-cyclic owner of block row `i`.
    #[inline]
    pub fn owner_of_row(&self, i: usize) -> usize {
        i % self.workers
    }

    /// Block rows owned by `worker`, ascending.
    pub fn owned_rows(&self, worker: usize) -> Vec<usize> {
        (worker..self.n_tiles).step_by(self.workers).collect()
    }

    /// Ownership lists for every worker (a partition of `0..N`).
    pub fn block_allocs(&self) -> Vec<Vec<usize>> {
        (0..self.workers).map(|w| self.owned_rows(w)).collect()
    }

    /// Scratch needed (elements of working precision) to run tiled ops:
    /// one block column plus one tile.
    pub fn required_scratch(&self) -> usize {
        (self.n_tiles + 1) * self.tile * self.tile
    }
}

fn isqrt(x: usize) -> usize {
    if x == 0 {
        return 0;
    }
    let mut r = (x as f64).sqrt() as usize;
    while (r + 1) * (r + 1) <= x {
        r += 1;
    }
    while r * r > x {
        r -= 1;
    }
    r
}

/// Per-tile progress counters gating data-dependent updates across workers.
///
/// Counters only ever increment (atomically), so they are monotone by
/// construction; a tile's counter equals the number of completed updates
/// applied to it.
#[derive(Debug)]
pub struct WorkTable {
    n_tiles: usize,
    counters: Vec<AtomicU32>,
}

impl WorkTable {
    pub fn new(n_tiles: usize) -> Self {
        Self {
            n_tiles,
            counters: (0..n_tiles * n_tiles).map(|_| AtomicU32::new(0)).collect(),
        }
    }

    #[inline]
    pub fn n_tiles(&self) -> usize {
        self.n_tiles
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.counters[i * self.n_tiles + j].load(Ordering::Acquire)
    }

    /// Marks one more completed update on tile `(i, j)`.
    pub fn bump(&self, i: usize, j: usize, ledger: &TransferLedger) {
        self.counters[i * self.n_tiles + j].fetch_add(1, Ordering::Release);
        ledger.tick_progress();
    }

    /// Spins (yielding) until tile `(i, j)` has seen at least `expected`
    /// updates. Errors out if a peer aborted or if no counter in the whole
    /// table advances within `timeout`.
    pub fn wait_for(
        &self,
        i: usize,
        j: usize,
        expected: u32,
        abort: &AtomicBool,
        ledger: &TransferLedger,
        timeout: Duration,
    ) -> Result<()> {
        let cell = &self.counters[i * self.n_tiles + j];
        if cell.load(Ordering::Acquire) >= expected {
            return Ok(());
        }
        let mut last_progress = ledger.progress();
        let mut stall_start = Instant::now();
        loop {
            if cell.load(Ordering::Acquire) >= expected {
                return Ok(());
            }
            if abort.load(Ordering::Acquire) {
                return Err(FalkonError::Aborted);
            }
            std::thread::yield_now();
            let p = ledger.progress();
            if p != last_progress {
                last_progress = p;
                stall_start = Instant::now();
            } else if stall_start.elapsed() > timeout {
                return Err(FalkonError::DeadlockTimeout {
                    tile_row: i,
                    tile_col: j,
                    waited_ms: stall_start.elapsed().as_millis() as u64,
                });
            }
        }
    }

    pub fn snapshot(&self) -> Vec<u32> {
        self.counters
            .iter()
            .map(|c| c.load(Ordering::Acquire))
            .collect()
    }
}
