use super::*;
use crate::kernel::KernelSpec;
use crate::ooc::{ExecCtx, MemoryBudget};
use crate::solver::{predict, FalkonModel, InducingSet};
use falkon_testkit as tk;

fn tmp(name: &str) -> std::path::PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("falkon-io-test-{}-{name}", std::process::id()));
    p
}

#[test]
fn csv_two_rows_with_trailing_target() {
    let path = tmp("two-rows.csv");
    std::fs::write(&path, "1,2,0.5\n3,4,1.5\n").unwrap();
    let data: Dataset<f64> = load_dataset(&path, DataFormat::Csv).unwrap();
    let Matrix::Dense(x) = &data.x else { panic!() };
    assert_eq!(x.row(0), &[1.0, 2.0]);
    assert_eq!(x.row(1), &[3.0, 4.0]);
    assert_eq!(data.y, vec![0.5, 1.5]);
    std::fs::remove_file(&path).ok();
}

#[test]
fn csv_reports_malformed_rows() {
    let path = tmp("bad.csv");
    std::fs::write(&path, "1,2,3\n4,oops,6\n").unwrap();
    let err = load_dataset::<f64>(&path, DataFormat::Csv);
    assert!(matches!(err, Err(FalkonError::Parse { line: 2, .. })));
    std::fs::remove_file(&path).ok();

    let path2 = tmp("ragged.csv");
    std::fs::write(&path2, "1,2,3\n4,5\n").unwrap();
    let err = load_dataset::<f64>(&path2, DataFormat::Csv);
    assert!(matches!(err, Err(FalkonError::Parse { line: 2, .. })));
    std::fs::remove_file(&path2).ok();
}

#[test]
fn fbin_roundtrip_is_bit_exact() {
    let n = 17;
    let d = 5;
    let xo = tk::random_mat(n, d, 3);
    let x32: Vec<f32> = xo.a.iter().map(|&v| v as f32).collect();
    let y: Vec<f64> = tk::random_vec(n, 4).iter().map(|&v| v as f32 as f64).collect();
    let data = Dataset::new(
        Matrix::Dense(crate::kernel::DenseMatrix::new(n, d, x32.clone()).unwrap()),
        y.clone(),
    )
    .unwrap();
    let path = tmp("roundtrip.fbin");
    save_fbin(&path, &data).unwrap();
    let back: Dataset<f32> = load_dataset(&path, DataFormat::Fbin).unwrap();
    let Matrix::Dense(xb) = &back.x else { panic!() };
    assert_eq!(xb.values(), x32.as_slice());
    assert_eq!(back.y, y);
    std::fs::remove_file(&path).ok();
}

#[test]
fn libsvm_places_entry_at_written_column() {
    let path = tmp("row.libsvm");
    std::fs::write(&path, "+1 3:0.5\n").unwrap();
    let data: Dataset<f64> = load_dataset(&path, DataFormat::Libsvm).unwrap();
    let Matrix::Sparse(x) = &data.x else { panic!() };
    assert_eq!(x.cols(), 4);
    let (idx, vals) = x.row(0);
    assert_eq!(idx, &[3]);
    assert_eq!(vals, &[0.5]);
    assert_eq!(data.y, vec![1.0]);
    std::fs::remove_file(&path).ok();
}

#[test]
fn libsvm_rejects_unordered_columns() {
    let path = tmp("unordered.libsvm");
    std::fs::write(&path, "+1 3:0.5 1:2.0\n").unwrap();
    let err = load_dataset::<f64>(&path, DataFormat::Libsvm);
    assert!(matches!(err, Err(FalkonError::Parse { line: 1, .. })));
    std::fs::remove_file(&path).ok();
}

#[test]
fn standardize_analytic_column() {
    let x = crate::kernel::DenseMatrix::new(2, 1, vec![1.0f64, 3.0]).unwrap();
    let data = Dataset::new(Matrix::Dense(x), vec![0.0, 0.0]).unwrap();
    let (out, means, stds) = standardize(data);
    let Matrix::Dense(xs) = &out.x else { panic!() };
    assert_eq!(xs.values(), &[-1.0, 1.0]);
    assert_eq!(means, vec![2.0]);
    assert_eq!(stds, vec![1.0]);
}

#[test]
fn standardize_constant_column_maps_to_zero() {
    let x = crate::kernel::DenseMatrix::new(2, 1, vec![5.0f64, 5.0]).unwrap();
    let data = Dataset::new(Matrix::Dense(x), vec![0.0, 0.0]).unwrap();
    let (out, _, stds) = standardize(data);
    let Matrix::Dense(xs) = &out.x else { panic!() };
    assert_eq!(xs.values(), &[0.0, 0.0]);
    assert_eq!(stds, vec![1.0]);
}

#[test]
fn standardize_postcondition_on_random_data() {
    let n = 64;
    let d = 5;
    let xo = tk::random_mat(n, d, 9);
    // Skew the columns so there is something to remove.
    let x = crate::kernel::DenseMatrix::new(
        n,
        d,
        xo.a.iter()
            .enumerate()
            .map(|(k, v)| 3.0 * v + (k % d) as f64)
            .collect(),
    )
    .unwrap();
    let data = Dataset::new(Matrix::Dense(x), vec![0.0; n]).unwrap();
    let (out, _, _) = standardize(data);
    let Matrix::Dense(xs) = &out.x else { panic!() };
    for j in 0..d {
        let mean: f64 = (0..n).map(|i| xs.get(i, j)).sum::<f64>() / n as f64;
        let var: f64 = (0..n).map(|i| (xs.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 1e-12);
        assert!((var.sqrt() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn sparse_data_passes_through_standardize() {
    let dense = crate::kernel::DenseMatrix::new(2, 3, vec![1.0f64, 0.0, 2.0, 0.0, 5.0, 0.0]).unwrap();
    let sparse = crate::kernel::SparseMatrix::from_dense(&dense);
    let data = Dataset::new(Matrix::Sparse(sparse.clone()), vec![1.0, -1.0]).unwrap();
    let (out, means, stds) = standardize(data);
    let Matrix::Sparse(xs) = &out.x else { panic!() };
    assert_eq!(xs, &sparse);
    assert_eq!(means, vec![0.0; 3]);
    assert_eq!(stds, vec![1.0; 3]);
}

#[test]
fn split_sizes_and_determinism() {
    let n = 10;
    let xo = tk::random_mat(n, 2, 11);
    let data = Dataset::new(
        Matrix::Dense(crate::kernel::DenseMatrix::new(n, 2, xo.a.clone()).unwrap()),
        (0..n).map(|i| i as f64).collect(),
    )
    .unwrap();
    let (tr, te) = train_test_split(&data, 0.2, 5).unwrap();
    assert_eq!(tr.n(), 8);
    assert_eq!(te.n(), 2);

    let (tr2, te2) = train_test_split(&data, 0.2, 5).unwrap();
    assert_eq!(tr.y, tr2.y);
    assert_eq!(te.y, te2.y);

    // Disjoint cover: every original target appears exactly once.
    let mut all: Vec<f64> = tr.y.iter().chain(te.y.iter()).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(all, (0..n).map(|i| i as f64).collect::<Vec<_>>());
}

#[test]
fn split_rejects_out_of_range_fraction() {
    let xo = tk::random_mat(4, 1, 1);
    let data = Dataset::new(
        Matrix::Dense(crate::kernel::DenseMatrix::new(4, 1, xo.a.clone()).unwrap()),
        vec![0.0; 4],
    )
    .unwrap();
    assert!(train_test_split(&data, 0.0, 1).is_err());
    assert!(train_test_split(&data, 1.0, 1).is_err());
}

#[test]
fn binary_labels_canonicalize_zero_one() {
    let xo = tk::random_mat(3, 1, 2);
    let mut data = Dataset::new(
        Matrix::Dense(crate::kernel::DenseMatrix::new(3, 1, xo.a.clone()).unwrap()),
        vec![0.0, 1.0, 0.0],
    )
    .unwrap();
    canonicalize_binary_labels(&mut data).unwrap();
    assert_eq!(data.y, vec![-1.0, 1.0, -1.0]);

    let mut pm = Dataset::new(data.x.clone(), vec![1.0, -1.0, 1.0]).unwrap();
    canonicalize_binary_labels(&mut pm).unwrap();
    assert_eq!(pm.y, vec![1.0, -1.0, 1.0]);

    let mut bad = Dataset::new(data.x.clone(), vec![2.0, 1.0, 0.0]).unwrap();
    assert!(canonicalize_binary_labels(&mut bad).is_err());
}

#[test]
fn model_roundtrip_is_bit_exact_and_predictions_match() {
    let m = 6;
    let d = 3;
    let xo = tk::random_mat(m, d, 21);
    let model = FalkonModel {
        inducing: InducingSet {
            x_m: Matrix::Dense(crate::kernel::DenseMatrix::new(m, d, xo.a.clone()).unwrap()),
            indices: (0..m).collect(),
            seed: 7,
        },
        alpha: tk::random_vec(m, 22),
        kernel: KernelSpec::gaussian(1.25).unwrap(),
        lam: 3.5e-7,
        iters: 10,
        seed: 7,
    };
    let path = tmp("model.flkn");
    save_model(&path, &model).unwrap();
    let back: FalkonModel<f64> = load_model(&path).unwrap();

    assert_eq!(back.kernel, model.kernel);
    assert_eq!(back.lam, model.lam);
    assert_eq!(back.alpha, model.alpha);
    let (Matrix::Dense(a), Matrix::Dense(b)) = (&model.inducing.x_m, &back.inducing.x_m) else {
        panic!()
    };
    assert_eq!(a.values(), b.values());

    // Predictions are identical before and after persistence.
    let ctx = ExecCtx::new(MemoryBudget::new(1024, 1).unwrap());
    let x_new = Matrix::Dense(crate::kernel::DenseMatrix::new(
        4,
        d,
        tk::random_mat(4, d, 23).a,
    )
    .unwrap());
    let before = predict(&model, &x_new, &ctx).unwrap();
    let after = predict(&back, &x_new, &ctx).unwrap();
    assert_eq!(before, after);
    std::fs::remove_file(&path).ok();
}

#[test]
fn model_load_rejects_bad_magic() {
    let path = tmp("bad-magic.flkn");
    std::fs::write(&path, b"NOPE").unwrap();
    let err = load_model::<f64>(&path);
    assert!(matches!(err, Err(FalkonError::ModelFormat(_))));
    std::fs::remove_file(&path).ok();
}
