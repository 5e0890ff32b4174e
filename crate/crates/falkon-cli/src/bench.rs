//! Micro-benchmarks: tiled factorizations against an in-process dense
//! reference, the streamed kernel-vector product in both dispatch modes,
//! and the load/compute/store pipeline overlap.

use std::time::{Duration, Instant};

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use falkon::kernel::{DenseMatrix, Matrix};
use falkon::ooc::{
    ooc_cholesky_inplace, ooc_lauum_inplace, ExecCtx, HostMat, MemoryBudget, TileLayout,
};
use falkon::solver::{knm_vec_product, BatchPlan, Dataset, InducingSet};

pub fn run(
    kind: &str,
    size: usize,
    tile: usize,
    workers: usize,
    budget_mb: usize,
    json: bool,
) -> anyhow::Result<()> {
    match kind {
        "cholesky" => bench_cholesky(size, tile, workers, json),
        "lauum" => bench_lauum(size, tile, workers, json),
        "mvm" => bench_mvm(size, workers, budget_mb, json),
        "pipeline" => bench_pipeline(size, workers, json),
        other => anyhow::bail!("bench: unknown kind '{other}' (cholesky | lauum | mvm | pipeline)"),
    }
}

fn randn(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller is plenty for benchmark inputs.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_spd(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b: Vec<f64> = (0..n * n).map(|_| randn(&mut rng)).collect();
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..n {
                acc += b[i * n + k] * b[j * n + k];
            }
            a[i * n + j] = acc;
            a[j * n + i] = acc;
        }
        a[i * n + i] += n as f64;
    }
    a
}

/// Textbook dense lower Cholesky, the bench reference.
fn dense_cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0f64; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / dj;
        }
    }
    l
}

fn report(pairs: &[(&str, String)], json: bool) {
    for (k, v) in pairs {
        println!("{k}={v}");
    }
    if json {
        let map: serde_json::Map<String, serde_json::Value> = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.clone())))
            .collect();
        println!("{}", serde_json::Value::Object(map));
    }
}

fn bench_cholesky(n: usize, tile: usize, workers: usize, json: bool) -> anyhow::Result<()> {
    let a = random_spd(n, 1);
    let budget = MemoryBudget::for_tile_size(n, tile, workers).context("bench")?;
    let layout = TileLayout::with_tile_size(n, tile, workers).context("bench")?;
    let ctx = ExecCtx::new(budget);

    let mut host = HostMat::from_dense(&DenseMatrix::new(n, n, a.clone()).context("bench")?);
    let t0 = Instant::now();
    ooc_cholesky_inplace(&mut host, &layout, &ctx).context("bench")?;
    let ooc_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let reference = dense_cholesky(&a, n);
    let ref_seconds = t1.elapsed().as_secs_f64();

    let got = host.to_dense();
    let mut max_abs = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            max_abs = max_abs.max((got.get(i, j) - reference[i * n + j]).abs());
        }
    }
    let snap = ctx.ledger.snapshot();
    report(
        &[
            ("bench", "cholesky".into()),
            ("size", n.to_string()),
            ("tile", tile.to_string()),
            ("workers", workers.to_string()),
            ("ooc_seconds", format!("{ooc_seconds:.6}")),
            ("reference_seconds", format!("{ref_seconds:.6}")),
            ("max_abs_error", format!("{max_abs:.3e}")),
            (
                "peak_scratch_per_worker",
                format!("{:?}", snap.peak_scratch_per_worker),
            ),
            (
                "budget_elements",
                ctx.budget.scratch_elements_per_worker.to_string(),
            ),
        ],
        json,
    );
    Ok(())
}

fn bench_lauum(n: usize, tile: usize, workers: usize, json: bool) -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut u = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            u[i * n + j] = randn(&mut rng);
        }
        u[i * n + i] = u[i * n + i].abs() + 1.0;
    }
    let budget = MemoryBudget::for_tile_size(n, tile, workers).context("bench")?;
    let layout = TileLayout::with_tile_size(n, tile, workers).context("bench")?;
    let ctx = ExecCtx::new(budget);

    let mut host = HostMat::from_dense(&DenseMatrix::new(n, n, u.clone()).context("bench")?);
    let t0 = Instant::now();
    ooc_lauum_inplace(&mut host, &layout, &ctx).context("bench")?;
    let ooc_seconds = t0.elapsed().as_secs_f64();

    // Reference: upper triangle of U·Uᵀ.
    let t1 = Instant::now();
    let got = host.to_dense();
    let mut max_abs = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in j..n {
                acc += u[i * n + k] * u[j * n + k];
            }
            max_abs = max_abs.max((got.get(i, j) - acc).abs());
        }
    }
    let ref_seconds = t1.elapsed().as_secs_f64();
    report(
        &[
            ("bench", "lauum".into()),
            ("size", n.to_string()),
            ("tile", tile.to_string()),
            ("workers", workers.to_string()),
            ("ooc_seconds", format!("{ooc_seconds:.6}")),
            ("reference_seconds", format!("{ref_seconds:.6}")),
            ("max_abs_error", format!("{max_abs:.3e}")),
        ],
        json,
    );
    Ok(())
}

/// Fused vs materialize-then-multiply kernel-vector product on thin data.
fn bench_mvm(n: usize, workers: usize, budget_mb: usize, json: bool) -> anyhow::Result<()> {
    let d = 8usize;
    let m = (n / 5).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f32> = (0..n * d).map(|_| randn(&mut rng) as f32).collect();
    let data = Dataset::new(
        Matrix::Dense(DenseMatrix::new(n, d, x.clone()).context("bench")?),
        vec![0.0; n],
    )
    .context("bench")?;
    let indices: Vec<usize> = (0..m).collect();
    let xm: Vec<f32> = x[..m * d].to_vec();
    let inducing = InducingSet {
        x_m: Matrix::Dense(DenseMatrix::new(m, d, xm).context("bench")?),
        indices,
        seed: 0,
    };
    let kernel = falkon::kernel::KernelSpec::gaussian(1.0).context("bench")?;
    let v: Vec<f64> = (0..m).map(|_| randn(&mut rng)).collect();
    let budget = MemoryBudget::new(budget_mb * (1 << 20) / 4, workers).context("bench")?;
    let q = n.div_ceil(8).max(1);
    let plan = BatchPlan {
        q,
        r: m,
        s: d,
        batches: n.div_ceil(q),
    };

    let mut fused_ctx = ExecCtx::new(budget);
    fused_ctx.stream.thin_data_threshold = d;
    let t0 = Instant::now();
    let fused = knm_vec_product(&data, &inducing, &kernel, &v, &plan, &fused_ctx).context("bench")?;
    let fused_seconds = t0.elapsed().as_secs_f64();

    let mut blocked_ctx = ExecCtx::new(budget);
    blocked_ctx.stream.thin_data_threshold = 0;
    let t1 = Instant::now();
    let blocked =
        knm_vec_product(&data, &inducing, &kernel, &v, &plan, &blocked_ctx).context("bench")?;
    let blocked_seconds = t1.elapsed().as_secs_f64();

    let max_abs = fused
        .iter()
        .zip(&blocked)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    report(
        &[
            ("bench", "mvm".into()),
            ("n", n.to_string()),
            ("m", m.to_string()),
            ("d", d.to_string()),
            ("batches", plan.batches.to_string()),
            ("fused_seconds", format!("{fused_seconds:.6}")),
            ("blocked_seconds", format!("{blocked_seconds:.6}")),
            ("ratio", format!("{:.3}", fused_seconds / blocked_seconds)),
            ("max_abs_diff", format!("{max_abs:.3e}")),
        ],
        json,
    );
    Ok(())
}

/// Overlapped vs forced-serial schedule with equal injected stage delays.
fn bench_pipeline(n: usize, workers: usize, json: bool) -> anyhow::Result<()> {
    let d = 4usize;
    let m = 16usize;
    let batches = 16usize;
    let n = n.max(batches);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..n * d).map(|_| randn(&mut rng)).collect();
    let data = Dataset::new(
        Matrix::Dense(DenseMatrix::new(n, d, x.clone()).context("bench")?),
        vec![0.0; n],
    )
    .context("bench")?;
    let inducing = InducingSet {
        x_m: Matrix::Dense(DenseMatrix::new(m, d, x[..m * d].to_vec()).context("bench")?),
        indices: (0..m).collect(),
        seed: 0,
    };
    let kernel = falkon::kernel::KernelSpec::gaussian(1.0).context("bench")?;
    let v: Vec<f64> = (0..m).map(|_| randn(&mut rng)).collect();
    let q = n.div_ceil(batches);
    let plan = BatchPlan {
        q,
        r: m,
        s: d,
        batches: n.div_ceil(q),
    };
    let budget = MemoryBudget::new(1 << 22, workers).context("bench")?;
    let delay = Duration::from_millis(25);

    let mut serial_ctx = ExecCtx::new(budget);
    serial_ctx.stream.overlap = false;
    serial_ctx.stream.stage_delay = Some(delay);
    let t0 = Instant::now();
    knm_vec_product(&data, &inducing, &kernel, &v, &plan, &serial_ctx).context("bench")?;
    let serial_seconds = t0.elapsed().as_secs_f64();

    let mut overlap_ctx = ExecCtx::new(budget);
    overlap_ctx.stream.stage_delay = Some(delay);
    let t1 = Instant::now();
    knm_vec_product(&data, &inducing, &kernel, &v, &plan, &overlap_ctx).context("bench")?;
    let overlap_seconds = t1.elapsed().as_secs_f64();

    report(
        &[
            ("bench", "pipeline".into()),
            ("batches", plan.batches.to_string()),
            ("stage_delay_ms", "25".into()),
            ("serial_seconds", format!("{serial_seconds:.6}")),
            ("overlapped_seconds", format!("{overlap_seconds:.6}")),
            ("ratio", format!("{:.3}", overlap_seconds / serial_seconds)),
            (
                "model_prediction",
                format!("{:.3}", (plan.batches as f64 + 2.0) / (3.0 * plan.batches as f64)),
            ),
        ],
        json,
    );
    Ok(())
}
