//! The squared-loss solver: inducing-point subsampling, batch planning,
//! streaming `K_nm` products, the preconditioned operator, conjugate
//! gradient, fit and predict.

mod cg;
pub(crate) mod stream;

pub use cg::{conjugate_gradient, CgConfig, CgHistory};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FalkonError, Result};
use crate::kernel::{KernelSpec, Matrix};
use crate::ooc::ExecCtx;
use crate::precond::{apply_prec, build_preconditioner, Factor, PreconditionerBuffer};
use crate::real::Real;

use stream::{run_stream, RowResult, StreamOp};

/// Design matrix plus targets.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub x: Matrix<T>,
    /// Real targets for regression, ±1 for binary classification.
    pub y: Vec<f64>,
}

impl<T: Real> Dataset<T> {
    pub fn new(x: Matrix<T>, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(FalkonError::DimensionMismatch(format!(
                "{} data rows but {} targets",
                x.rows(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }
}

/// Inducing rows sampled from the dataset.
#[derive(Debug, Clone)]
pub struct InducingSet<T> {
    pub x_m: Matrix<T>,
    /// Source rows in the dataset (sorted, distinct).
    pub indices: Vec<usize>,
    pub seed: u64,
}

impl<T: Real> InducingSet<T> {
    pub fn m(&self) -> usize {
        self.x_m.rows()
    }
}

/// Uniform subsample of `m` distinct rows, deterministic per seed.
pub fn subsample_inducing<T: Real>(
    data: &Dataset<T>,
    m: usize,
    seed: u64,
) -> Result<InducingSet<T>> {
    let n = data.n();
    if m == 0 || m > n {
        return Err(FalkonError::InvalidArgument(format!(
            "cannot sample m = {m} inducing rows from n = {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, n, m).into_vec();
    indices.sort_unstable();
    let x_m = data.x.gather_rows(&indices);
    Ok(InducingSet { x_m, indices, seed })
}

/// Block extents of the streamed kernel products along `n`, `m`, `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct BatchPlan {
    pub q: usize,
    pub r: usize,
    pub s: usize,
    /// `⌈n/q⌉` row batches.
    pub batches: usize,
}

/// Picks `(q, r, s)` maximizing the compute-to-transfer ratio
/// `q·r·s / (q·s + d·s)` subject to `q·s + d·s ≤ G`, with `r` capped at `m`;
/// ties break toward larger `q`, then larger `s`.
pub fn plan_batches(n: usize, m: usize, d: usize, g: usize) -> Result<BatchPlan> {
    if n == 0 || m == 0 {
        return Err(FalkonError::InvalidArgument(
            "empty problem in batch planning".into(),
        ));
    }
    let d_eff = d.max(1);
    if g < d_eff + 1 {
        return Err(FalkonError::InfeasibleBudget(format!(
            "budget {g} cannot hold one data row plus one feature column (d = {d_eff})"
        )));
    }
    let r = m;
    let s_hi = d_eff.min(g / (d_eff + 1));
    let mut best: Option<(f64, usize, usize)> = None;
    for s in 1..=s_hi {
        let q = (g / s).saturating_sub(d_eff).min(n);
        if q == 0 {
            continue;
        }
        let obj = (q * r) as f64 / (q + d_eff) as f64;
        let cand = (obj, q, s);
        let better = match best {
            None => true,
            Some(b) => cand.0 > b.0 || (cand.0 == b.0 && (cand.1, cand.2) > (b.1, b.2)),
        };
        if better {
            best = Some(cand);
        }
    }
    let (_, q, s) = best.ok_or_else(|| {
        FalkonError::InfeasibleBudget(format!("no feasible (q, s) under budget {g}"))
    })?;
    Ok(BatchPlan {
        q,
        r,
        s,
        batches: n.div_ceil(q),
    })
}

/// `Σ_b k(X_b, X_m)ᵀ·(k(X_b, X_m)·v)`, accumulated in 64-bit across batches.
/// Kernel blocks live only in worker scratch.
pub fn knm_vec_product<T: Real>(
    data: &Dataset<T>,
    inducing: &InducingSet<T>,
    kernel: &KernelSpec,
    v: &[f64],
    plan: &BatchPlan,
    ctx: &ExecCtx,
) -> Result<Vec<f64>> {
    let op = StreamOp {
        forward: vec![v],
        per_row: &|_, z| RowResult {
            weight: z[0],
            ..RowResult::default()
        },
        wants_transpose: true,
        wants_output: false,
    };
    Ok(run_stream(&data.x, &inducing.x_m, kernel, plan, ctx, &op)?.transpose_accum)
}

/// `K_nmᵀ·w = Σ_b k(X_b, X_m)ᵀ·w_b` with the same residency guarantees.
pub fn knm_transpose_vec<T: Real>(
    data: &Dataset<T>,
    inducing: &InducingSet<T>,
    kernel: &KernelSpec,
    w: &[f64],
    plan: &BatchPlan,
    ctx: &ExecCtx,
) -> Result<Vec<f64>> {
    if w.len() != data.n() {
        return Err(FalkonError::DimensionMismatch(format!(
            "weight vector has length {}, expected n = {}",
            w.len(),
            data.n()
        )));
    }
    let op = StreamOp {
        forward: vec![],
        per_row: &|g, _| RowResult {
            weight: w[g],
            ..RowResult::default()
        },
        wants_transpose: true,
        wants_output: false,
    };
    Ok(run_stream(&data.x, &inducing.x_m, kernel, plan, ctx, &op)?.transpose_accum)
}

/// The preconditioned operator of the squared-loss system:
/// `β ↦ A⁻ᵀ[T⁻ᵀ·K_nmᵀK_nm·T⁻¹ + λ·n·I]·A⁻¹·β`.
pub fn linop_apply<T: Real>(
    prec: &PreconditionerBuffer<T>,
    data: &Dataset<T>,
    inducing: &InducingSet<T>,
    kernel: &KernelSpec,
    lam: f64,
    beta: &[f64],
    plan: &BatchPlan,
    ctx: &ExecCtx,
) -> Result<Vec<f64>> {
    let v = apply_prec(prec, beta, Factor::A, false, true)?;
    let u = apply_prec(prec, &v, Factor::T, false, true)?;
    let c = knm_vec_product(data, inducing, kernel, &u, plan, ctx)?;
    let mut w = apply_prec(prec, &c, Factor::T, true, true)?;
    // The regularization term lives inside the bracket: the final A⁻ᵀ
    // applies to it too, otherwise the operator loses symmetry.
    let lam_n = lam * data.n() as f64;
    for (wi, vi) in w.iter_mut().zip(&v) {
        *wi += lam_n * vi;
    }
    apply_prec(prec, &w, Factor::A, true, true)
}

/// Nyström model: inducing rows plus coefficients.
#[derive(Debug, Clone)]
pub struct FalkonModel<T> {
    pub inducing: InducingSet<T>,
    pub alpha: Vec<f64>,
    pub kernel: KernelSpec,
    pub lam: f64,
    pub iters: usize,
    pub seed: u64,
}

/// Wall-clock and convergence report of a fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub preconditioner_seconds: f64,
    pub iterations_seconds: f64,
    pub residual_norms: Vec<f64>,
    pub plan: BatchPlan,
}

/// Full squared-loss fit: subsample, build the preconditioner, form the
/// right-hand side, run preconditioned CG, and map back to coefficients.
/// In the limit of exact CG the returned `α` solves
/// `(K_nmᵀK_nm + λ·n·K_mm)·α = K_nmᵀ·y`.
pub fn falkon_fit<T: Real>(
    data: &Dataset<T>,
    kernel: &KernelSpec,
    lam: f64,
    m: usize,
    t: usize,
    seed: u64,
    ctx: &ExecCtx,
) -> Result<(FalkonModel<T>, FitReport)> {
    let n = data.n();
    if lam < 0.0 {
        return Err(FalkonError::InvalidArgument(
            "regularization must be nonnegative".into(),
        ));
    }
    if lam == 0.0 {
        log::warn!("λ = 0: the reduced system may be singular; proceed at your own risk");
    }

    let inducing = subsample_inducing(data, m, seed)?;

    let t0 = Instant::now();
    let prec = build_preconditioner(&inducing.x_m, kernel, lam, n, ctx)?;
    let precond_seconds = t0.elapsed().as_secs_f64();

    let plan = plan_batches(n, m, data.d(), ctx.budget.scratch_elements_per_worker)?;

    let t1 = Instant::now();
    // R = A⁻ᵀ·T⁻ᵀ·K_nmᵀ·y
    let kty = knm_transpose_vec(data, &inducing, kernel, &data.y, &plan, ctx)?;
    let tt = apply_prec(&prec, &kty, Factor::T, true, true)?;
    let rhs = apply_prec(&prec, &tt, Factor::A, true, true)?;

    let cfg = CgConfig {
        max_iters: t,
        record_history: true,
        ..CgConfig::default()
    };
    let (beta, history) = conjugate_gradient(
        |b| linop_apply(&prec, data, &inducing, kernel, lam, b, &plan, ctx),
        &rhs,
        &cfg,
        None,
    )?;

    // α = T⁻¹·A⁻¹·β
    let ainv = apply_prec(&prec, &beta, Factor::A, false, true)?;
    let alpha = apply_prec(&prec, &ainv, Factor::T, false, true)?;
    let iterations_seconds = t1.elapsed().as_secs_f64();

    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(FalkonError::Divergence { iteration: t });
    }

    Ok((
        FalkonModel {
            inducing,
            alpha,
            kernel: *kernel,
            lam,
            iters: t,
            seed,
        },
        FitReport {
            preconditioner_seconds: precond_seconds,
            iterations_seconds,
            residual_norms: history.residual_norms,
            plan,
        },
    ))
}

/// `k(X_new, X_m)·α`, streamed within the budget.
pub fn predict<T: Real>(
    model: &FalkonModel<T>,
    x_new: &Matrix<T>,
    ctx: &ExecCtx,
) -> Result<Vec<f64>> {
    if x_new.cols() != model.inducing.x_m.cols() {
        return Err(FalkonError::DimensionMismatch(format!(
            "model expects {} features, input has {}",
            model.inducing.x_m.cols(),
            x_new.cols()
        )));
    }
    let plan = plan_batches(
        x_new.rows(),
        model.inducing.m(),
        x_new.cols(),
        ctx.budget.scratch_elements_per_worker,
    )?;
    let op = StreamOp {
        forward: vec![&model.alpha],
        per_row: &|_, z| RowResult {
            output: z[0],
            ..RowResult::default()
        },
        wants_transpose: false,
        wants_output: true,
    };
    let res = run_stream(x_new, &model.inducing.x_m, &model.kernel, &plan, ctx, &op)?;
    Ok(res.outputs.expect("predict requested outputs"))
}
