//! Generalized self-concordant losses and the approximate-Newton outer loop.
//!
//! A GSC loss exposes its value and first two derivatives in the prediction
//! argument. Each outer step solves the curvature-weighted, preconditioned
//! Newton system at the current level `μ` with a few CG iterations, warm
//! started from the previous coefficients; the level decays geometrically
//! down to the target regularization. Curvature weights are computed from
//! streamed predictions one batch at a time and never materialize as an
//! n-length array.
//!
//! With the warm start `β₀ = A·T·α₀`, solving against the working-response
//! right-hand side `K_nmᵀ(D·K_nm·α₀ − g)` is algebraically identical to
//! solving the gradient system for the Newton increment: at a stationary
//! point of the level-`μ` objective the step returns `α₀` unchanged, and an
//! exact solve reproduces `α₀ − H⁻¹∇` for the regularized Hessian
//! `H = K_nmᵀ·D·K_nm + μ·n·K_mm`.

use crate::error::{FalkonError, Result};
use crate::kernel::KernelSpec;
use crate::ooc::ExecCtx;
use crate::precond::{apply_prec, build_weighted_preconditioner, Factor, PreconditionerBuffer};
use crate::real::Real;
use crate::solver::stream::{run_stream, RowResult, StreamOp};
use crate::solver::{
    conjugate_gradient, plan_batches, BatchPlan, CgConfig, CgHistory, Dataset, FalkonModel,
    InducingSet,
};

/// Loss with value, first, and second derivative in the prediction argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum GscLoss {
    /// `ℓ(z, y) = log(1 + exp(−y·z))`, `y ∈ {−1, +1}`.
    Logistic,
    /// `ℓ(z, y) = φ(z − y)` with `φ(u) = log(eᵘ + e⁻ᵘ)`, `y ∈ ℝ`.
    Robust,
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

impl GscLoss {
    pub fn value(&self, z: f64, y: f64) -> f64 {
        match self {
            GscLoss::Logistic => softplus(-y * z),
            GscLoss::Robust => {
                let u = z - y;
                u.abs() + (-2.0 * u.abs()).exp().ln_1p()
            }
        }
    }

    /// `ℓ⁽¹⁾` in the prediction argument.
    pub fn d1(&self, z: f64, y: f64) -> f64 {
        match self {
            GscLoss::Logistic => -y / (1.0 + (y * z).exp()),
            GscLoss::Robust => (z - y).tanh(),
        }
    }

    /// `ℓ⁽²⁾` in the prediction argument; nonnegative everywhere.
    pub fn d2(&self, z: f64, y: f64) -> f64 {
        match self {
            GscLoss::Logistic => {
                let a = 1.0 / (1.0 + (y * z).exp());
                a * (1.0 - a)
            }
            GscLoss::Robust => {
                // sech²(u) = 4t/(1+t)² with t = e^{−2|u|}, overflow-free.
                let t = (-2.0 * (z - y).abs()).exp();
                4.0 * t / ((1.0 + t) * (1.0 + t))
            }
        }
    }

    fn validate_label(&self, y: f64) -> Result<()> {
        match self {
            GscLoss::Logistic if y != 1.0 && y != -1.0 => Err(FalkonError::InvalidLabel(format!(
                "logistic loss needs labels in {{-1, +1}}, got {y}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Numerically stable evaluation of `(value, ℓ⁽¹⁾, ℓ⁽²⁾)` with label
/// validation.
pub fn loss_eval(loss: &GscLoss, z: f64, y: f64) -> Result<(f64, f64, f64)> {
    loss.validate_label(y)?;
    Ok((loss.value(z, y), loss.d1(z, y), loss.d2(z, y)))
}

/// Decreasing sequence of regularization levels for the Newton path.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct NewtonPath {
    pub mu0: f64,
    /// Geometric decay factor in (0, 1).
    pub q: f64,
    pub lam_final: f64,
    /// CG iterations per intermediate step.
    pub t_inner: usize,
    /// CG iterations for the final solve at `lam_final`.
    pub t_final: usize,
}

impl NewtonPath {
    pub fn new(mu0: f64, q: f64, lam_final: f64, t_inner: usize, t_final: usize) -> Result<Self> {
        if !(lam_final > 0.0) || !(mu0 >= lam_final) {
            return Err(FalkonError::InvalidArgument(format!(
                "need mu0 ≥ lam_final > 0, got mu0 = {mu0}, lam_final = {lam_final}"
            )));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(FalkonError::InvalidArgument(format!(
                "decay factor must lie in (0, 1), got {q}"
            )));
        }
        if t_inner == 0 || t_final == 0 {
            return Err(FalkonError::InvalidArgument(
                "CG iteration counts must be ≥ 1".into(),
            ));
        }
        Ok(Self {
            mu0,
            q,
            lam_final,
            t_inner,
            t_final,
        })
    }

    /// Path from `μ₀ = 1` reaching `lam_final` in exactly `steps` outer
    /// steps (default knobs: 10 inner / 20 final CG iterations).
    pub fn with_steps(lam_final: f64, steps: usize) -> Result<Self> {
        if !(lam_final > 0.0) || steps == 0 {
            return Err(FalkonError::InvalidArgument(
                "need lam_final > 0 and steps ≥ 1".into(),
            ));
        }
        let mu0 = 1f64.max(lam_final);
        if steps == 1 || mu0 == lam_final {
            return Self::new(lam_final, 0.5, lam_final, 10, 20);
        }
        let q = (lam_final / mu0).powf(1.0 / (steps - 1) as f64);
        Self::new(mu0, q, lam_final, 10, 20)
    }

    /// Levels strictly above `lam_final`, in execution order; the final
    /// solve at `lam_final` is appended by the fit.
    pub fn levels(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut mu = self.mu0;
        while mu > self.lam_final * (1.0 + 1e-9) {
            out.push(mu);
            mu *= self.q;
        }
        out
    }
}

/// The curvature-weighted preconditioned operator:
/// `β ↦ A⁻ᵀ[T⁻ᵀ·K_nmᵀ·D_k·K_nm·T⁻¹ + μ·n·I]·A⁻¹·β` with
/// `D_k = diag(ℓ⁽²⁾(f(xᵢ), yᵢ))` computed per batch from streamed
/// predictions (`f_current` are the coefficients of the current iterate).
#[allow(clippy::too_many_arguments)]
pub fn weighted_linop_apply<T: Real>(
    prec: &PreconditionerBuffer<T>,
    data: &Dataset<T>,
    inducing: &InducingSet<T>,
    kernel: &KernelSpec,
    loss: &GscLoss,
    f_current: &[f64],
    mu: f64,
    beta: &[f64],
    plan: &BatchPlan,
    ctx: &ExecCtx,
) -> Result<Vec<f64>> {
    let v = apply_prec(prec, beta, Factor::A, false, true)?;
    let u = apply_prec(prec, &v, Factor::T, false, true)?;
    let y = &data.y;
    let op = StreamOp {
        forward: vec![&u, f_current],
        per_row: &|g, z| RowResult {
            weight: loss.d2(z[1], y[g]) * z[0],
            ..RowResult::default()
        },
        wants_transpose: true,
        wants_output: false,
    };
    let c = run_stream(&data.x, &inducing.x_m, kernel, plan, ctx, &op)?.transpose_accum;
    let mut w = apply_prec(prec, &c, Factor::T, true, true)?;
    let mu_n = mu * data.n() as f64;
    for (wi, vi) in w.iter_mut().zip(&v) {
        *wi += mu_n * vi;
    }
    apply_prec(prec, &w, Factor::A, true, true)
}

/// One approximate Newton step at level `mu`: builds the weighted
/// preconditioner at `alpha0`, forms the Newton right-hand side from the
/// streamed gradient, warm-starts CG at `β₀ = A·T·α₀`, and maps the solution
/// back through `α = T⁻¹·A⁻¹·β`.
#[allow(clippy::too_many_arguments)]
pub fn weighted_falkon_step<T: Real>(
    data: &Dataset<T>,
    inducing: &InducingSet<T>,
    loss: &GscLoss,
    mu: f64,
    t: usize,
    alpha0: &[f64],
    kernel: &KernelSpec,
    ctx: &ExecCtx,
) -> Result<Vec<f64>> {
    let cfg = CgConfig::fixed(t);
    weighted_falkon_step_cfg(data, inducing, loss, mu, &cfg, alpha0, kernel, ctx).map(|(a, _)| a)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn weighted_falkon_step_cfg<T: Real>(
    data: &Dataset<T>,
    inducing: &InducingSet<T>,
    loss: &GscLoss,
    mu: f64,
    cfg: &CgConfig,
    alpha0: &[f64],
    kernel: &KernelSpec,
    ctx: &ExecCtx,
) -> Result<(Vec<f64>, CgHistory)> {
    let m = inducing.m();
    if alpha0.len() != m {
        return Err(FalkonError::DimensionMismatch(
            "alpha0 must have length m".into(),
        ));
    }
    if alpha0.iter().any(|a| !a.is_finite()) {
        return Err(FalkonError::InvalidArgument(
            "alpha0 must be finite".into(),
        ));
    }
    for &yi in &data.y {
        loss.validate_label(yi)?;
    }

    let y_m: Vec<f64> = inducing.indices.iter().map(|&i| data.y[i]).collect();
    let prec = build_weighted_preconditioner(
        &inducing.x_m,
        &y_m,
        alpha0,
        &|z, y| loss.d2(z, y),
        mu,
        kernel,
        ctx,
    )?;

    let plan = plan_batches(
        data.n(),
        m,
        data.d(),
        ctx.budget.scratch_elements_per_worker,
    )?;

    // Working-response right-hand side K_nmᵀ·(D·z₀ − g) with z₀ = K_nm·α₀;
    // combined with the warm start below this is the exact Newton system.
    let y = &data.y;
    let op = StreamOp {
        forward: vec![alpha0],
        per_row: &|g, z| RowResult {
            weight: loss.d2(z[0], y[g]) * z[0] - loss.d1(z[0], y[g]),
            ..RowResult::default()
        },
        wants_transpose: true,
        wants_output: false,
    };
    let raw = run_stream(&data.x, &inducing.x_m, kernel, &plan, ctx, &op)?.transpose_accum;
    let tt = apply_prec(&prec, &raw, Factor::T, true, true)?;
    let rhs = apply_prec(&prec, &tt, Factor::A, true, true)?;

    // Warm start β₀ = A·T·α₀, the inverse of the output map.
    let t_alpha = apply_prec(&prec, alpha0, Factor::T, false, false)?;
    let beta0 = apply_prec(&prec, &t_alpha, Factor::A, false, false)?;

    let (beta, history) = conjugate_gradient(
        |b| weighted_linop_apply(&prec, data, inducing, kernel, loss, alpha0, mu, b, &plan, ctx),
        &rhs,
        cfg,
        Some(&beta0),
    )?;

    let ainv = apply_prec(&prec, &beta, Factor::A, false, true)?;
    let alpha = apply_prec(&prec, &ainv, Factor::T, false, true)?;
    Ok((alpha, history))
}

/// Report of the outer Newton path.
#[derive(Debug, Clone)]
pub struct GscReport {
    /// Levels actually executed (the final `lam_final` included).
    pub levels: Vec<f64>,
    pub objective_before: Vec<f64>,
    pub objective_after: Vec<f64>,
    /// Steps whose objective failed to decrease within slack.
    pub objective_warnings: usize,
}

/// Regularized empirical objective at level `mu`:
/// `(1/n)·Σᵢ ℓ(f(xᵢ), yᵢ) + (μ/2)·‖f‖²` with `‖f‖² = αᵀK_mmα = ‖Tα‖²`
/// evaluated through streamed predictions.
pub fn regularized_objective<T: Real>(
    data: &Dataset<T>,
    inducing: &InducingSet<T>,
    loss: &GscLoss,
    kernel: &KernelSpec,
    alpha: &[f64],
    mu: f64,
    ctx: &ExecCtx,
) -> Result<f64> {
    let n = data.n();
    let y = &data.y;
    let op = StreamOp {
        forward: vec![alpha],
        per_row: &|g, z| RowResult {
            scalar: loss.value(z[0], y[g]),
            ..RowResult::default()
        },
        wants_transpose: false,
        wants_output: false,
    };
    let plan = plan_batches(
        n,
        inducing.m(),
        data.d(),
        ctx.budget.scratch_elements_per_worker,
    )?;
    let loss_sum = run_stream(&data.x, &inducing.x_m, kernel, &plan, ctx, &op)?.scalar;

    // αᵀ·K_mm·α streamed over the inducing rows themselves.
    let m = inducing.m();
    let op2 = StreamOp {
        forward: vec![alpha],
        per_row: &|_, z| RowResult {
            output: z[0],
            ..RowResult::default()
        },
        wants_transpose: false,
        wants_output: true,
    };
    let plan_m = plan_batches(m, m, data.d(), ctx.budget.scratch_elements_per_worker)?;
    let kmm_alpha = run_stream(&inducing.x_m, &inducing.x_m, kernel, &plan_m, ctx, &op2)?
        .outputs
        .expect("objective requested outputs");
    let quad: f64 = alpha.iter().zip(&kmm_alpha).map(|(a, k)| a * k).sum();

    Ok(loss_sum / n as f64 + 0.5 * mu * quad)
}

/// The full GSC fit: `α₀ = 0`, approximate Newton steps at levels
/// `μ₀ > q·μ₀ > …` while the level stays above `lam_final`, then one final
/// step at `lam_final` with `t_final` iterations.
pub fn gsc_falkon_fit<T: Real>(
    data: &Dataset<T>,
    loss: &GscLoss,
    path: &NewtonPath,
    m: usize,
    seed: u64,
    kernel: &KernelSpec,
    ctx: &ExecCtx,
) -> Result<(FalkonModel<T>, GscReport)> {
    let inducing = crate::solver::subsample_inducing(data, m, seed)?;
    let mut alpha = vec![0.0f64; m];

    let mut report = GscReport {
        levels: Vec::new(),
        objective_before: Vec::new(),
        objective_after: Vec::new(),
        objective_warnings: 0,
    };

    let mut schedule: Vec<(f64, usize)> = path
        .levels()
        .into_iter()
        .map(|mu| (mu, path.t_inner))
        .collect();
    schedule.push((path.lam_final, path.t_final));

    for (mu, t) in schedule {
        let before = regularized_objective(data, &inducing, loss, kernel, &alpha, mu, ctx)?;
        alpha = weighted_falkon_step(data, &inducing, loss, mu, t, &alpha, kernel, ctx)?;
        let after = regularized_objective(data, &inducing, loss, kernel, &alpha, mu, ctx)?;
        if after > before + 1e-8 {
            report.objective_warnings += 1;
            log::warn!(
                "objective increased across the outer step at level {mu:.3e}: {before:.12e} → {after:.12e}"
            );
        }
        report.levels.push(mu);
        report.objective_before.push(before);
        report.objective_after.push(after);
    }

    Ok((
        FalkonModel {
            inducing,
            alpha,
            kernel: *kernel,
            lam: path.lam_final,
            iters: path.t_final,
            seed,
        },
        report,
    ))
}

#[cfg(test)]
mod tests;
