use super::*;
use crate::kernel::{DenseMatrix, Matrix};
use crate::ooc::MemoryBudget;
use crate::solver::stream::{run_stream, RowResult, StreamOp};
use crate::solver::{linop_apply, subsample_inducing};
use falkon_testkit as tk;
use proptest::prelude::*;

fn ctx(g: usize, workers: usize) -> ExecCtx {
    ExecCtx::new(MemoryBudget::new(g, workers).unwrap())
}

fn dataset_from(o: &tk::OMat, y: Vec<f64>) -> Dataset<f64> {
    Dataset::new(
        Matrix::Dense(DenseMatrix::new(o.rows, o.cols, o.a.clone()).unwrap()),
        y,
    )
    .unwrap()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Loss evaluation
// ---------------------------------------------------------------------------

#[test]
fn logistic_analytic_values_at_zero() {
    let (v, d1, d2) = loss_eval(&GscLoss::Logistic, 0.0, 1.0).unwrap();
    assert!((v - std::f64::consts::LN_2).abs() <= 1e-15);
    assert!((d1 + 0.5).abs() <= 1e-15);
    assert!((d2 - 0.25).abs() <= 1e-15);
}

#[test]
fn logistic_softplus_tail() {
    let (v, _, _) = loss_eval(&GscLoss::Logistic, 10.0, 1.0).unwrap();
    assert!((v - 4.5398899216870535e-5).abs() / v <= 1e-10);
}

#[test]
fn logistic_is_stable_at_extreme_margins() {
    for &z in &[-1e4, -710.0, 710.0, 1e4] {
        let (v, d1, d2) = loss_eval(&GscLoss::Logistic, z, 1.0).unwrap();
        assert!(v.is_finite() && d1.is_finite() && d2.is_finite());
        assert!(d2 >= 0.0);
    }
    // Deep negative margin: value grows linearly, derivative saturates.
    let (v, d1, _) = loss_eval(&GscLoss::Logistic, -1000.0, 1.0).unwrap();
    assert!((v - 1000.0).abs() <= 1e-9);
    assert!((d1 + 1.0).abs() <= 1e-12);
}

#[test]
fn robust_loss_at_target_is_symmetric_minimum() {
    let (v, d1, d2) = loss_eval(&GscLoss::Robust, 2.5, 2.5).unwrap();
    assert!((v - std::f64::consts::LN_2).abs() <= 1e-15);
    assert_eq!(d1, 0.0);
    assert!((d2 - 1.0).abs() <= 1e-15);
}

#[test]
fn logistic_rejects_invalid_labels() {
    assert!(matches!(
        loss_eval(&GscLoss::Logistic, 0.0, 0.5),
        Err(FalkonError::InvalidLabel(_))
    ));
}

#[test]
fn derivatives_match_finite_differences() {
    let h = 1e-4;
    for loss in [GscLoss::Logistic, GscLoss::Robust] {
        let labels: &[f64] = match loss {
            GscLoss::Logistic => &[-1.0, 1.0],
            GscLoss::Robust => &[-2.0, 0.3, 1.7],
        };
        for &y in labels {
            for i in -20..=20 {
                let z = i as f64 * 0.35;
                let d1_fd = (loss.value(z + h, y) - loss.value(z - h, y)) / (2.0 * h);
                let d2_fd =
                    (loss.value(z + h, y) - 2.0 * loss.value(z, y) + loss.value(z - h, y))
                        / (h * h);
                assert!(
                    (loss.d1(z, y) - d1_fd).abs() <= 1e-5,
                    "d1 mismatch at z={z}, y={y}"
                );
                assert!(
                    (loss.d2(z, y) - d2_fd).abs() <= 1e-5,
                    "d2 mismatch at z={z}, y={y}"
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn second_derivative_is_nonnegative(z in -50.0f64..50.0, y in -3.0f64..3.0, logistic in proptest::bool::ANY) {
        let (loss, label) = if logistic {
            (GscLoss::Logistic, if y >= 0.0 { 1.0 } else { -1.0 })
        } else {
            (GscLoss::Robust, y)
        };
        prop_assert!(loss.d2(z, label) >= 0.0);
    }
}

// ---------------------------------------------------------------------------
// Newton path
// ---------------------------------------------------------------------------

#[test]
fn path_level_count_matches_geometric_formula() {
    for &(mu0, q, lam) in &[
        (1.0, 0.5, 1e-3),
        (1.0, 0.1, 1e-6),
        (0.7, 0.33, 1e-4),
        (1.0, 0.9, 1e-2),
    ] {
        let path = NewtonPath::new(mu0, q, lam, 5, 10).unwrap();
        let total = path.levels().len() + 1;
        let formula = ((mu0 / lam).ln() / (1.0 / q).ln()).ceil() as usize + 1;
        assert_eq!(total, formula, "mu0={mu0} q={q} lam={lam}");
    }
}

#[test]
fn degenerate_path_runs_exactly_one_step() {
    let path = NewtonPath::new(1e-3, 0.5, 1e-3, 5, 10).unwrap();
    assert!(path.levels().is_empty());
}

#[test]
fn with_steps_reaches_target_in_requested_steps() {
    let path = NewtonPath::with_steps(1e-6, 9).unwrap();
    assert_eq!(path.levels().len() + 1, 9);
    assert_eq!(path.t_inner, 10);
    assert_eq!(path.t_final, 20);
}

// ---------------------------------------------------------------------------
// Weighted operator and steps
// ---------------------------------------------------------------------------

fn toy_classification(n: usize, d: usize, seed: u64) -> (tk::OMat, Vec<f64>) {
    let x = tk::random_mat(n, d, seed);
    let y: Vec<f64> = (0..n)
        .map(|i| if x[(i, 0)] + x[(i, 1)] >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    (x, y)
}

#[test]
fn weighted_linop_zero_is_zero() {
    let (x, y) = toy_classification(60, 3, 5);
    let data = dataset_from(&x, y);
    let ind = subsample_inducing(&data, 8, 1).unwrap();
    let kernel = KernelSpec::gaussian(1.0).unwrap();
    let mu = 1e-3;
    let c = ctx(4096, 1);
    let y_m: Vec<f64> = ind.indices.iter().map(|&i| data.y[i]).collect();
    let alpha0 = vec![0.0; 8];
    let prec = build_weighted_preconditioner(
        &ind.x_m,
        &y_m,
        &alpha0,
        &|z, yv| GscLoss::Logistic.d2(z, yv),
        mu,
        &kernel,
        &c,
    )
    .unwrap();
    let plan = plan_batches(60, 8, 3, 4096).unwrap();
    let out = weighted_linop_apply(
        &prec,
        &data,
        &ind,
        &kernel,
        &GscLoss::Logistic,
        &alpha0,
        mu,
        &[0.0; 8],
        &plan,
        &c,
    )
    .unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn unit_curvature_reduces_to_squared_loss_operator() {
    // With D ≡ I the weighted operator must coincide with the squared-loss
    // operator at λ = μ (level scaling μ·n pinned by this reduction).
    let (x, _) = toy_classification(80, 3, 15);
    let data = dataset_from(&x, vec![1.0; 80]);
    let ind = subsample_inducing(&data, 10, 2).unwrap();
    let kernel = KernelSpec::gaussian(1.2).unwrap();
    let mu = 2e-3;
    let c = ctx(8192, 1);
    let y_m = vec![1.0; 10];
    let alpha0 = vec![0.0; 10];
    let prec_w = build_weighted_preconditioner(
        &ind.x_m,
        &y_m,
        &alpha0,
        &|_, _| 1.0,
        mu,
        &kernel,
        &c,
    )
    .unwrap();
    let prec_p = crate::precond::build_preconditioner(&ind.x_m, &kernel, mu, 80, &c).unwrap();
    let plan = plan_batches(80, 10, 3, 8192).unwrap();

    let beta = tk::random_vec(10, 16);
    // Weighted apply with unit curvature, via the internal streaming pieces:
    // reuse the public op with a loss whose d2 ≡ 1 does not exist, so check
    // against the algebra instead: both preconditioners coincide, and the
    // curvature-weighted product with D = I equals the squared-loss product.
    let got = {
        let v = crate::precond::apply_prec(&prec_w, &beta, crate::precond::Factor::A, false, true)
            .unwrap();
        let u = crate::precond::apply_prec(&prec_w, &v, crate::precond::Factor::T, false, true)
            .unwrap();
        let cvec = crate::solver::knm_vec_product(&data, &ind, &kernel, &u, &plan, &c).unwrap();
        let mut w =
            crate::precond::apply_prec(&prec_w, &cvec, crate::precond::Factor::T, true, true)
                .unwrap();
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi += mu * 80.0 * vi;
        }
        crate::precond::apply_prec(&prec_w, &w, crate::precond::Factor::A, true, true).unwrap()
    };
    let expect = linop_apply(&prec_p, &data, &ind, &kernel, mu, &beta, &plan, &c).unwrap();
    assert!(max_rel(&got, &expect) <= 1e-10, "{}", max_rel(&got, &expect));
}

#[test]
fn weighted_linop_matches_dense_oracle() {
    let (n, m, d) = (200, 20, 3);
    let (x, y) = toy_classification(n, d, 25);
    let data = dataset_from(&x, y.clone());
    let ind = subsample_inducing(&data, m, 3).unwrap();
    let sigma = 1.1;
    let kernel = KernelSpec::gaussian(sigma).unwrap();
    let mu = 1e-3;
    let c = ctx(1 << 13, 2);
    let alpha_cur = tk::random_vec(m, 26);
    let y_m: Vec<f64> = ind.indices.iter().map(|&i| data.y[i]).collect();
    let prec = build_weighted_preconditioner(
        &ind.x_m,
        &y_m,
        &alpha_cur,
        &|z, yv| GscLoss::Logistic.d2(z, yv),
        mu,
        &kernel,
        &c,
    )
    .unwrap();
    let plan = plan_batches(n, m, d, 1 << 13).unwrap();

    // Oracle: dense K_nm, D_k built explicitly.
    let xm = tk::OMat::from_fn(m, d, |i, j| x[(ind.indices[i], j)]);
    let knm = tk::gaussian_kernel_ref(&x, &xm, sigma);
    let z = tk::matvec(&knm, &alpha_cur);
    let dvec: Vec<f64> = z
        .iter()
        .zip(&y)
        .map(|(&zi, &yi)| GscLoss::Logistic.d2(zi, yi))
        .collect();

    for seed in 0..3 {
        let beta = tk::random_vec(m, 30 + seed);
        let got = weighted_linop_apply(
            &prec,
            &data,
            &ind,
            &kernel,
            &GscLoss::Logistic,
            &alpha_cur,
            mu,
            &beta,
            &plan,
            &c,
        )
        .unwrap();

        let v = crate::precond::apply_prec(&prec, &beta, crate::precond::Factor::A, false, true)
            .unwrap();
        let u =
            crate::precond::apply_prec(&prec, &v, crate::precond::Factor::T, false, true).unwrap();
        let ku = tk::matvec(&knm, &u);
        let dku: Vec<f64> = ku.iter().zip(&dvec).map(|(a, b)| a * b).collect();
        let kt = tk::matvec_t(&knm, &dku);
        let mut w =
            crate::precond::apply_prec(&prec, &kt, crate::precond::Factor::T, true, true).unwrap();
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi += mu * n as f64 * vi;
        }
        let expect =
            crate::precond::apply_prec(&prec, &w, crate::precond::Factor::A, true, true).unwrap();
        assert!(max_rel(&got, &expect) <= 1e-8, "{}", max_rel(&got, &expect));
    }
}

#[test]
fn step_is_fixed_point_at_stationary_coefficients() {
    // Converge with the dense oracle, then one streamed step must stay put.
    let (n, d) = (50, 2);
    let (x, y) = toy_classification(n, d, 35);
    let data = dataset_from(&x, y.clone());
    let ind = subsample_inducing(&data, n, 1).unwrap(); // inducing = all points
    let sigma = 1.0;
    let mu = 1e-2;
    let kernel = KernelSpec::gaussian(sigma).unwrap();

    let knm = tk::gaussian_kernel_ref(&x, &x, sigma);
    let alpha_star = tk::newton_solve_logistic(&knm, &knm, &y, mu, 60);

    let c = ctx(1 << 13, 1);
    let stepped = weighted_falkon_step(
        &data,
        &ind,
        &GscLoss::Logistic,
        mu,
        n,
        &alpha_star,
        &kernel,
        &c,
    )
    .unwrap();
    // Returned coefficients stay at the stationary point up to CG roundoff.
    let pred_before = tk::matvec(&knm, &alpha_star);
    let pred_after = tk::matvec(&knm, &stepped);
    assert!(
        max_rel(&pred_after, &pred_before) <= 1e-6,
        "{}",
        max_rel(&pred_after, &pred_before)
    );
}

#[test]
fn one_step_matches_dense_newton_oracle() {
    let (n, d) = (50, 2);
    let (x, y) = toy_classification(n, d, 45);
    let data = dataset_from(&x, y.clone());
    let ind = subsample_inducing(&data, n, 1).unwrap();
    let sigma = 0.7;
    let mu = 1e-2;
    let kernel = KernelSpec::gaussian(sigma).unwrap();
    let alpha0 = tk::random_vec(n, 46).iter().map(|v| 0.1 * v).collect::<Vec<_>>();

    let c = ctx(1 << 13, 1);
    let stepped =
        weighted_falkon_step(&data, &ind, &GscLoss::Logistic, mu, n, &alpha0, &kernel, &c)
            .unwrap();

    let knm = tk::gaussian_kernel_ref(&x, &x, sigma);
    let expect = tk::newton_step_logistic(&knm, &knm, &y, &alpha0, mu);
    assert!(
        max_rel(&stepped, &expect) <= 1e-5,
        "{}",
        max_rel(&stepped, &expect)
    );
}

#[test]
fn label_negation_negates_the_step() {
    let (n, d) = (60, 3);
    let (x, y) = toy_classification(n, d, 55);
    let data_pos = dataset_from(&x, y.clone());
    let data_neg = dataset_from(&x, y.iter().map(|v| -v).collect());
    let m = 12;
    let ind = subsample_inducing(&data_pos, m, 2).unwrap();
    let kernel = KernelSpec::gaussian(1.0).unwrap();
    let mu = 1e-3;
    let alpha0 = vec![0.0; m];

    let c1 = ctx(4096, 1);
    let a_pos =
        weighted_falkon_step(&data_pos, &ind, &GscLoss::Logistic, mu, 8, &alpha0, &kernel, &c1)
            .unwrap();
    let c2 = ctx(4096, 1);
    let a_neg =
        weighted_falkon_step(&data_neg, &ind, &GscLoss::Logistic, mu, 8, &alpha0, &kernel, &c2)
            .unwrap();
    let negated: Vec<f64> = a_pos.iter().map(|v| -v).collect();
    assert!(max_rel(&a_neg, &negated) <= 1e-12);
}

// ---------------------------------------------------------------------------
// Full outer loop
// ---------------------------------------------------------------------------

#[test]
fn degenerate_path_takes_single_outer_step() {
    let (x, y) = toy_classification(40, 2, 65);
    let data = dataset_from(&x, y);
    let path = NewtonPath::new(1e-2, 0.5, 1e-2, 3, 3).unwrap();
    let c = ctx(4096, 1);
    let (_, report) =
        gsc_falkon_fit(&data, &GscLoss::Logistic, &path, 8, 1, &KernelSpec::gaussian(1.0).unwrap(), &c)
            .unwrap();
    assert_eq!(report.levels.len(), 1);
    assert_eq!(report.levels[0], 1e-2);
}

#[test]
fn outer_objective_is_monotone_on_mixture() {
    let (x, y) = tk::two_gaussian_mixture(800, 1.2, 7);
    let data = dataset_from(&x, y);
    let kernel = KernelSpec::gaussian(1.0).unwrap();
    let path = NewtonPath::with_steps(1e-5, 6).unwrap();
    let c = ctx(1 << 13, 2);
    let (model, report) = gsc_falkon_fit(&data, &GscLoss::Logistic, &path, 50, 3, &kernel, &c).unwrap();
    assert_eq!(report.objective_warnings, 0, "objective increased: {report:?}");
    assert!(model.alpha.iter().all(|a| a.is_finite()));

    // Curvature weights never materialize as n-length host arrays: tracked
    // auxiliary host storage stays O(m), far below n.
    let aux_peak = c.ledger.snapshot().aux_host_peak as usize;
    assert!(
        aux_peak <= 8 * 50,
        "aux host storage {aux_peak} suggests an n-length array (n = {})",
        data.n()
    );

    // The fit should classify the training mixture far better than chance.
    let preds = crate::solver::predict(&model, &data.x, &c).unwrap();
    let errs = preds
        .iter()
        .zip(&data.y)
        .filter(|(p, y)| (p.is_sign_negative() && **y > 0.0) || (p.is_sign_positive() && **y < 0.0))
        .count();
    let err_rate = errs as f64 / data.n() as f64;
    assert!(err_rate < 0.2, "training error {err_rate}");
}

#[test]
fn inner_cg_decreases_the_step_model_and_the_step_decreases_the_objective() {
    let (x, y) = tk::two_gaussian_mixture(400, 1.0, 9);
    let data = dataset_from(&x, y);
    let kernel = KernelSpec::gaussian(1.0).unwrap();
    let m = 40;
    let ind = subsample_inducing(&data, m, 5).unwrap();
    let mu = 1e-3;
    let alpha0 = vec![0.0; m];
    let cfg = CgConfig {
        max_iters: 12,
        record_iterates: true,
        record_history: true,
        ..CgConfig::default()
    };
    let c = ctx(1 << 13, 1);
    let (alpha1, history) = weighted_falkon_step_cfg(
        &data,
        &ind,
        &GscLoss::Logistic,
        mu,
        &cfg,
        &alpha0,
        &kernel,
        &c,
    )
    .unwrap();

    // Inner iterations monotonically decrease the quadratic model of the
    // step, φ(β) = ½·βᵀMβ − rhsᵀβ (the functional CG minimizes over its
    // growing Krylov spaces).
    let y_m: Vec<f64> = ind.indices.iter().map(|&i| data.y[i]).collect();
    let prec = build_weighted_preconditioner(
        &ind.x_m,
        &y_m,
        &alpha0,
        &|z, yv| GscLoss::Logistic.d2(z, yv),
        mu,
        &kernel,
        &c,
    )
    .unwrap();
    let plan = plan_batches(data.n(), m, data.d(), 1 << 13).unwrap();
    let yv = &data.y;
    let op = StreamOp {
        forward: vec![&alpha0],
        per_row: &|g, z| RowResult {
            weight: GscLoss::Logistic.d2(z[0], yv[g]) * z[0] - GscLoss::Logistic.d1(z[0], yv[g]),
            ..RowResult::default()
        },
        wants_transpose: true,
        wants_output: false,
    };
    let raw = run_stream(&data.x, &ind.x_m, &kernel, &plan, &c, &op)
        .unwrap()
        .transpose_accum;
    let tt = crate::precond::apply_prec(&prec, &raw, crate::precond::Factor::T, true, true).unwrap();
    let rhs = crate::precond::apply_prec(&prec, &tt, crate::precond::Factor::A, true, true).unwrap();
    let phi = |beta: &[f64]| -> f64 {
        let mb = weighted_linop_apply(
            &prec,
            &data,
            &ind,
            &kernel,
            &GscLoss::Logistic,
            &alpha0,
            mu,
            beta,
            &plan,
            &c,
        )
        .unwrap();
        let quad: f64 = beta.iter().zip(&mb).map(|(b, m)| b * m).sum();
        let lin: f64 = beta.iter().zip(&rhs).map(|(b, r)| b * r).sum();
        0.5 * quad - lin
    };
    let mut last = f64::INFINITY;
    for beta in &history.iterates {
        let val = phi(beta);
        assert!(
            val <= last + 1e-10 * last.abs().max(1.0),
            "CG model increased: {last} → {val}"
        );
        last = val;
    }

    // And the completed step decreases the true level-μ objective.
    let before = regularized_objective(&data, &ind, &GscLoss::Logistic, &kernel, &alpha0, mu, &c)
        .unwrap();
    let after = regularized_objective(&data, &ind, &GscLoss::Logistic, &kernel, &alpha1, mu, &c)
        .unwrap();
    assert!(
        after <= before + 1e-8,
        "Newton step failed to decrease the objective: {before} → {after}"
    );
}
