//! Plain-`f64` reference implementations used as independent oracles by the
//! test suites.
//!
//! Everything here is deliberately textbook: dense storage, unblocked loops,
//! and the Gaussian kernel via explicit pairwise differences rather than the
//! norm expansion the library uses. The point is to check the production
//! paths against a second, independent route.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Minimal dense row-major matrix for oracle arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct OMat {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
}

impl OMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            a: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> OMat {
        OMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &OMat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.a
            .iter()
            .zip(&other.a)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// `‖self − other‖_F / ‖other‖_F` (absolute when `other` is zero).
    pub fn rel_diff(&self, other: &OMat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let num = self
            .a
            .iter()
            .zip(&other.a)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den = other.norm();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}

impl std::ops::Index<(usize, usize)> for OMat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.a[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for OMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.a[i * self.cols + j]
    }
}

pub fn matmul(a: &OMat, b: &OMat) -> OMat {
    assert_eq!(a.cols, b.rows);
    let mut c = OMat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a[(i, k)];
            for j in 0..b.cols {
                c[(i, j)] += aik * b[(k, j)];
            }
        }
    }
    c
}

/// `A·Bᵀ`.
pub fn matmul_nt(a: &OMat, b: &OMat) -> OMat {
    assert_eq!(a.cols, b.cols);
    let mut c = OMat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += a[(i, k)] * b[(j, k)];
            }
            c[(i, j)] = acc;
        }
    }
    c
}

/// `Aᵀ·B`.
pub fn matmul_tn(a: &OMat, b: &OMat) -> OMat {
    assert_eq!(a.rows, b.rows);
    let mut c = OMat::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        for i in 0..a.cols {
            let aki = a[(k, i)];
            for j in 0..b.cols {
                c[(i, j)] += aki * b[(k, j)];
            }
        }
    }
    c
}

pub fn matvec(a: &OMat, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.cols, x.len());
    (0..a.rows)
        .map(|i| a.row(i).iter().zip(x).map(|(v, w)| v * w).sum())
        .collect()
}

pub fn matvec_t(a: &OMat, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.rows, x.len());
    let mut out = vec![0.0; a.cols];
    for i in 0..a.rows {
        for j in 0..a.cols {
            out[j] += a[(i, j)] * x[i];
        }
    }
    out
}

pub fn scale(a: &OMat, s: f64) -> OMat {
    OMat {
        rows: a.rows,
        cols: a.cols,
        a: a.a.iter().map(|x| x * s).collect(),
    }
}

pub fn add(a: &OMat, b: &OMat) -> OMat {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols));
    OMat {
        rows: a.rows,
        cols: a.cols,
        a: a.a.iter().zip(&b.a).map(|(x, y)| x + y).collect(),
    }
}

pub fn add_diag(a: &OMat, s: f64) -> OMat {
    let mut out = a.clone();
    for i in 0..a.rows.min(a.cols) {
        out[(i, i)] += s;
    }
    out
}

/// Unblocked lower Cholesky `A = L·Lᵀ`; `None` when a pivot is not positive.
pub fn cholesky_lower(a: &OMat) -> Option<OMat> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut l = OMat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// Upper Cholesky `A = Rᵀ·R`.
pub fn cholesky_upper(a: &OMat) -> Option<OMat> {
    cholesky_lower(a).map(|l| l.transpose())
}

/// Solves `L·x = b` (forward substitution), `L` lower triangular.
pub fn solve_lower(l: &OMat, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `U·x = b` (back substitution), `U` upper triangular.
pub fn solve_upper(u: &OMat, b: &[f64]) -> Vec<f64> {
    let n = u.rows;
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= u[(i, k)] * x[k];
        }
        x[i] = s / u[(i, i)];
    }
    x
}

/// Solves the SPD system `A·x = b` through a dense Cholesky factorization.
pub fn solve_spd(a: &OMat, b: &[f64]) -> Vec<f64> {
    let l = cholesky_lower(a).expect("oracle matrix not positive definite");
    let y = solve_lower(&l, b);
    solve_upper(&l.transpose(), &y)
}

/// Like [`solve_spd`] but retries with escalating diagonal jitter when the
/// matrix is only numerically positive semidefinite.
pub fn solve_spd_reg(a: &OMat, b: &[f64]) -> Vec<f64> {
    let trace: f64 = (0..a.rows).map(|i| a[(i, i)]).sum();
    let mut jitter = 0.0;
    for _ in 0..8 {
        if let Some(l) = cholesky_lower(&add_diag(a, jitter)) {
            let y = solve_lower(&l, b);
            return solve_upper(&l.transpose(), &y);
        }
        jitter = if jitter == 0.0 {
            1e-14 * trace / a.rows as f64
        } else {
            jitter * 10.0
        };
    }
    panic!("oracle matrix stayed indefinite even with jitter");
}

/// Upper triangle of `U·Uᵀ` for upper-triangular `U`, returned dense with
/// zeros below the diagonal.
pub fn lauum_upper_ref(u: &OMat) -> OMat {
    let n = u.rows;
    let mut out = OMat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in j..n {
                acc += u[(i, k)] * u[(j, k)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Kernel references (computed via pairwise differences, a route independent
// of the library's norm expansion).
// ---------------------------------------------------------------------------

pub fn gaussian_kernel_ref(x1: &OMat, x2: &OMat, sigma: f64) -> OMat {
    assert_eq!(x1.cols, x2.cols);
    OMat::from_fn(x1.rows, x2.rows, |i, j| {
        let mut d2 = 0.0;
        for k in 0..x1.cols {
            let d = x1[(i, k)] - x2[(j, k)];
            d2 += d * d;
        }
        (-d2 / (2.0 * sigma * sigma)).exp()
    })
}

pub fn linear_kernel_ref(x1: &OMat, x2: &OMat) -> OMat {
    matmul_nt(x1, x2)
}

// ---------------------------------------------------------------------------
// Random generators.
// ---------------------------------------------------------------------------

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(rows: usize, cols: usize, seed: u64) -> OMat {
    let mut r = rng(seed);
    OMat::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

/// Well-conditioned random SPD matrix `B·Bᵀ + n·I`.
pub fn random_spd(n: usize, seed: u64) -> OMat {
    let b = random_mat(n, n, seed);
    let mut a = matmul_nt(&b, &b);
    for i in 0..n {
        a[(i, i)] += n as f64;
    }
    a
}

/// Random upper-triangular matrix with diagonal bounded away from zero.
pub fn random_upper(n: usize, seed: u64) -> OMat {
    let mut r = rng(seed);
    let mut u = OMat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            u[(i, j)] = r.sample(StandardNormal);
        }
        let d: f64 = r.sample(StandardNormal);
        u[(i, i)] = d.abs() + 1.0;
    }
    u
}

/// Random lower-triangular matrix with diagonal bounded away from zero.
pub fn random_lower(n: usize, seed: u64) -> OMat {
    random_upper(n, seed).transpose()
}

/// High-dimensional features far from the origin in a tight cluster: the
/// squared-norm expansion of pairwise distances cancels catastrophically in
/// 32-bit arithmetic while the kernel matrix is nearly singular, the regime
/// where low-precision Gaussian kernels lose positive definiteness.
pub fn offset_cluster(m: usize, d: usize, offset: f64, spread: f64, seed: u64) -> OMat {
    let mut r = rng(seed);
    OMat::from_fn(m, d, |_, _| {
        offset + spread * r.sample::<f64, _>(StandardNormal)
    })
}

/// Two-cluster Gaussian mixture in 2-D with ±1 labels.
pub fn two_gaussian_mixture(n: usize, separation: f64, seed: u64) -> (OMat, Vec<f64>) {
    let mut r = rng(seed);
    let mut x = OMat::zeros(n, 2);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let positive = r.gen_bool(0.5);
        let c = if positive { separation } else { -separation };
        x[(i, 0)] = c + r.sample::<f64, _>(StandardNormal);
        x[(i, 1)] = -c + r.sample::<f64, _>(StandardNormal);
        y[i] = if positive { 1.0 } else { -1.0 };
    }
    (x, y)
}

// ---------------------------------------------------------------------------
// Logistic-loss reference and a dense Newton oracle for the Nyström model.
// ---------------------------------------------------------------------------

pub fn logistic_value_ref(z: f64, y: f64) -> f64 {
    (1.0 + (-y * z).exp()).ln()
}

pub fn logistic_d1_ref(z: f64, y: f64) -> f64 {
    -y / (1.0 + (y * z).exp())
}

pub fn logistic_d2_ref(z: f64, y: f64) -> f64 {
    let e = (y * z).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// One exact Newton step on the level-`mu` regularized objective
/// `Σᵢ ℓ(zᵢ, yᵢ) + (μ·n/2)·αᵀK_mm α` for the Nyström logistic model:
/// `α₁ = α₀ − H⁻¹∇` with `H = K_nmᵀ·D·K_nm + μ·n·K_mm`.
pub fn newton_step_logistic(
    knm: &OMat,
    kmm: &OMat,
    y: &[f64],
    alpha0: &[f64],
    mu: f64,
) -> Vec<f64> {
    let n = knm.rows;
    let z = matvec(knm, alpha0);
    let g: Vec<f64> = z
        .iter()
        .zip(y)
        .map(|(&zi, &yi)| logistic_d1_ref(zi, yi))
        .collect();
    let d: Vec<f64> = z
        .iter()
        .zip(y)
        .map(|(&zi, &yi)| logistic_d2_ref(zi, yi))
        .collect();
    // H = K_nmᵀ D K_nm + μ n K_mm
    let mut dknm = knm.clone();
    for i in 0..n {
        for j in 0..knm.cols {
            dknm[(i, j)] *= d[i];
        }
    }
    let mut h = matmul_tn(knm, &dknm);
    let mun = mu * n as f64;
    for i in 0..h.rows {
        for j in 0..h.cols {
            h[(i, j)] += mun * kmm[(i, j)];
        }
    }
    // ∇ = K_nmᵀ g + μ n K_mm α₀
    let mut grad = matvec_t(knm, &g);
    let reg = matvec(kmm, alpha0);
    for j in 0..grad.len() {
        grad[j] += mun * reg[j];
    }
    let step = solve_spd_reg(&h, &grad);
    alpha0.iter().zip(&step).map(|(a, s)| a - s).collect()
}

/// Runs damped Newton to (near) convergence on the level-`mu` objective and
/// returns the final coefficients.
pub fn newton_solve_logistic(
    knm: &OMat,
    kmm: &OMat,
    y: &[f64],
    mu: f64,
    max_iters: usize,
) -> Vec<f64> {
    let n = knm.rows as f64;
    let objective = |alpha: &[f64]| -> f64 {
        let z = matvec(knm, alpha);
        let loss: f64 = z
            .iter()
            .zip(y)
            .map(|(&zi, &yi)| logistic_value_ref(zi, yi))
            .sum();
        let ka = matvec(kmm, alpha);
        let quad: f64 = alpha.iter().zip(&ka).map(|(a, k)| a * k).sum();
        loss / n + 0.5 * mu * quad
    };
    let mut alpha = vec![0.0; kmm.rows];
    let mut obj = objective(&alpha);
    for _ in 0..max_iters {
        let full = newton_step_logistic(knm, kmm, y, &alpha, mu);
        // Backtrack toward the previous iterate if the full step overshoots.
        let mut step_scale = 1.0;
        let mut best = full.clone();
        let mut best_obj = objective(&full);
        for _ in 0..30 {
            if best_obj <= obj {
                break;
            }
            step_scale *= 0.5;
            let damped: Vec<f64> = alpha
                .iter()
                .zip(&full)
                .map(|(a, f)| a + step_scale * (f - a))
                .collect();
            best_obj = objective(&damped);
            best = damped;
        }
        let delta = obj - best_obj;
        alpha = best;
        obj = best_obj;
        if delta.abs() < 1e-14 {
            break;
        }
    }
    alpha
}

/// Mann–Whitney AUC by explicit pair counting (ties count one half).
pub fn auc_pair_counting(scores: &[f64], labels: &[f64]) -> f64 {
    let mut pairs = 0.0;
    let mut wins = 0.0;
    for (i, (&si, &yi)) in scores.iter().zip(labels).enumerate() {
        for (&sj, &yj) in scores.iter().zip(labels).skip(i + 1) {
            let (pos, neg) = if yi > 0.0 && yj < 0.0 {
                (si, sj)
            } else if yj > 0.0 && yi < 0.0 {
                (sj, si)
            } else {
                continue;
            };
            pairs += 1.0;
            if pos > neg {
                wins += 1.0;
            } else if pos == neg {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Largest eigenvalue via power iteration.
pub fn power_iteration_max_eig(a: &OMat, iters: usize, seed: u64) -> f64 {
    let mut v = random_vec(a.rows, seed);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = matvec(a, &v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Smallest eigenvalue of an SPD matrix via inverse power iteration.
pub fn inverse_iteration_min_eig(a: &OMat, iters: usize, seed: u64) -> f64 {
    let l = cholesky_lower(a).expect("matrix must be SPD for inverse iteration");
    let lt = l.transpose();
    let mut v = random_vec(a.rows, seed);
    let mut norm = 0.0;
    for _ in 0..iters {
        let y = solve_lower(&l, &v);
        let w = solve_upper(&lt, &y);
        norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.into_iter().map(|x| x / norm).collect();
    }
    1.0 / norm
}
