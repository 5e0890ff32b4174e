//! Conjugate gradient on an abstract symmetric positive definite operator.

use crate::error::{FalkonError, Result};

/// Iteration controls. The algorithm runs a fixed number of iterations by
/// default; a relative residual tolerance is optional.
#[derive(Debug, Clone, Default)]
pub struct CgConfig {
    pub max_iters: usize,
    /// Stop early once `‖r‖/‖b‖ ≤ tol`.
    pub residual_tol: Option<f64>,
    /// Record per-iteration residual norms.
    pub record_history: bool,
    /// Additionally record every iterate (tests and diagnostics).
    pub record_iterates: bool,
}

impl CgConfig {
    pub fn fixed(max_iters: usize) -> Self {
        Self {
            max_iters,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CgHistory {
    /// `‖r₀‖, ‖r₁‖, …` (starts with the initial residual).
    pub residual_norms: Vec<f64>,
    pub iterates: Vec<Vec<f64>>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Standard CG for `A·x = b` with `A` given as a black-box application.
/// Starts from `x0` (zero when absent); runs at most `cfg.max_iters`
/// iterations or until the optional relative residual tolerance is met.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    rhs: &[f64],
    cfg: &CgConfig,
    x0: Option<&[f64]>,
) -> Result<(Vec<f64>, CgHistory)> {
    if cfg.max_iters == 0 {
        return Err(FalkonError::InvalidArgument(
            "CG needs at least one iteration".into(),
        ));
    }
    let n = rhs.len();
    let mut x = match x0 {
        Some(x0) => {
            if x0.len() != n {
                return Err(FalkonError::DimensionMismatch(
                    "CG initial iterate length mismatch".into(),
                ));
            }
            x0.to_vec()
        }
        None => vec![0.0; n],
    };

    let mut r = if x.iter().all(|&v| v == 0.0) {
        rhs.to_vec()
    } else {
        let ax = apply(&x)?;
        rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
    };
    let rhs_norm = norm(rhs).max(f64::MIN_POSITIVE);

    let mut history = CgHistory::default();
    if cfg.record_history {
        history.residual_norms.push(norm(&r));
    }
    if cfg.record_iterates {
        history.iterates.push(x.clone());
    }

    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for iteration in 0..cfg.max_iters {
        if let Some(tol) = cfg.residual_tol {
            if rr.sqrt() / rhs_norm <= tol {
                break;
            }
        }
        if rr == 0.0 {
            break;
        }
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap == 0.0 {
            return Err(FalkonError::Divergence { iteration });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(FalkonError::Divergence { iteration });
        }
        if cfg.record_history {
            history.residual_norms.push(rr_new.sqrt());
        }
        if cfg.record_iterates {
            history.iterates.push(x.clone());
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok((x, history))
}
