//! Train / predict / evaluate command bodies.

use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;

use falkon::gsc::{gsc_falkon_fit, GscLoss, NewtonPath};
use falkon::io::{canonicalize_binary_labels, load_dataset, load_model, save_model, DataFormat};
use falkon::kernel::KernelSpec;
use falkon::metrics::{compute_metric, MetricKind, PhaseTimings};
use falkon::ooc::{ExecCtx, MemoryBudget};
use falkon::solver::{falkon_fit, predict, Dataset, FalkonModel};
use falkon::Real;

use crate::{ComputeOpts, KernelKind, LossKind, Precision};

pub struct TrainArgs {
    pub data: PathBuf,
    pub format: String,
    pub kernel: KernelKind,
    pub sigma: f64,
    pub lambda: f64,
    pub m: usize,
    pub iters: usize,
    pub loss: LossKind,
    pub newton_steps: usize,
    pub seed: u64,
    pub compute: ComputeOpts,
    pub out: PathBuf,
    pub json: bool,
}

fn make_ctx(compute: &ComputeOpts) -> anyhow::Result<ExecCtx> {
    let budget = MemoryBudget::new(compute.budget_elements(), compute.workers())
        .context("budget")?;
    Ok(ExecCtx::new(budget))
}

fn make_kernel(kind: KernelKind, sigma: f64) -> anyhow::Result<KernelSpec> {
    match kind {
        KernelKind::Gaussian => Ok(KernelSpec::gaussian(sigma).context("kernel")?),
        KernelKind::Linear => Ok(KernelSpec::Linear),
    }
}

pub fn train(args: TrainArgs) -> anyhow::Result<()> {
    match args.compute.precision {
        Precision::F32 => train_typed::<f32>(args),
        Precision::F64 => train_typed::<f64>(args),
    }
}

fn train_typed<T: Real>(args: TrainArgs) -> anyhow::Result<()> {
    let format: DataFormat = args.format.parse().context("load-data")?;
    let mut data: Dataset<T> = load_dataset(&args.data, format).context("load-data")?;
    let kernel = make_kernel(args.kernel, args.sigma)?;
    let ctx = make_ctx(&args.compute)?;

    let (model, timings, extra): (FalkonModel<T>, PhaseTimings, Vec<(String, String)>) =
        match args.loss {
            LossKind::Squared => {
                let (model, report) = falkon_fit(
                    &data,
                    &kernel,
                    args.lambda,
                    args.m,
                    args.iters,
                    args.seed,
                    &ctx,
                )
                .context("train")?;
                let timings = PhaseTimings {
                    preconditioner_seconds: report.preconditioner_seconds,
                    iterations_seconds: report.iterations_seconds,
                };
                let extra = vec![
                    ("batches".into(), report.plan.batches.to_string()),
                    (
                        "final_residual".into(),
                        format!("{:.6e}", report.residual_norms.last().copied().unwrap_or(0.0)),
                    ),
                ];
                (model, timings, extra)
            }
            LossKind::Logistic => {
                canonicalize_binary_labels(&mut data).context("train")?;
                let path = NewtonPath::with_steps(args.lambda, args.newton_steps)
                    .and_then(|p| NewtonPath::new(p.mu0, p.q, p.lam_final, args.iters, args.iters * 2))
                    .context("train")?;
                let t0 = std::time::Instant::now();
                let (model, report) = gsc_falkon_fit(
                    &data,
                    &GscLoss::Logistic,
                    &path,
                    args.m,
                    args.seed,
                    &kernel,
                    &ctx,
                )
                .context("train")?;
                let timings = PhaseTimings {
                    preconditioner_seconds: 0.0,
                    iterations_seconds: t0.elapsed().as_secs_f64(),
                };
                let extra = vec![
                    ("outer_steps".into(), report.levels.len().to_string()),
                    (
                        "final_objective".into(),
                        format!("{:.6e}", report.objective_after.last().copied().unwrap_or(0.0)),
                    ),
                ];
                (model, timings, extra)
            }
        };

    save_model(&args.out, &model).context("persist")?;

    let snap = ctx.ledger.snapshot();
    println!("trained=ok");
    println!("n={}", data.n());
    println!("d={}", data.d());
    println!("m={}", args.m);
    println!("precond_seconds={:.6}", timings.preconditioner_seconds);
    println!("iters_seconds={:.6}", timings.iterations_seconds);
    for (k, v) in &extra {
        println!("{k}={v}");
    }
    println!("knm_host_resident_peak={}", snap.knm_host_resident_peak);
    println!("mm_buffers_peak={}", snap.mm_buffers_peak);
    println!("model={}", args.out.display());
    if args.json {
        let json = serde_json::json!({
            "n": data.n(),
            "d": data.d(),
            "m": args.m,
            "timings": {
                "preconditioner_seconds": timings.preconditioner_seconds,
                "iterations_seconds": timings.iterations_seconds,
            },
            "ledger": snap,
            "model": args.out.display().to_string(),
        });
        println!("{json}");
    }
    Ok(())
}

pub fn predict_cmd(
    model: PathBuf,
    data: PathBuf,
    format: String,
    compute: ComputeOpts,
    out: PathBuf,
    json: bool,
) -> anyhow::Result<()> {
    match compute.precision {
        Precision::F32 => predict_typed::<f32>(model, data, format, compute, out, json),
        Precision::F64 => predict_typed::<f64>(model, data, format, compute, out, json),
    }
}

fn predict_typed<T: Real>(
    model_path: PathBuf,
    data: PathBuf,
    format: String,
    compute: ComputeOpts,
    out: PathBuf,
    json: bool,
) -> anyhow::Result<()> {
    let format: DataFormat = format.parse().context("load-data")?;
    let data: Dataset<T> = load_dataset(&data, format).context("load-data")?;
    let model: FalkonModel<T> = load_model(&model_path).context("load-model")?;
    let ctx = make_ctx(&compute)?;
    let preds = predict(&model, &data.x, &ctx).context("predict")?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&out).context("persist")?);
    for p in &preds {
        writeln!(w, "{p:.17e}").context("persist")?;
    }
    println!("predictions={}", preds.len());
    println!("out={}", out.display());
    if json {
        println!(
            "{}",
            serde_json::json!({"predictions": preds.len(), "out": out.display().to_string()})
        );
    }
    Ok(())
}

pub fn evaluate(
    model: PathBuf,
    data: PathBuf,
    format: String,
    metric: String,
    compute: ComputeOpts,
    json: bool,
) -> anyhow::Result<()> {
    match compute.precision {
        Precision::F32 => evaluate_typed::<f32>(model, data, format, metric, compute, json),
        Precision::F64 => evaluate_typed::<f64>(model, data, format, metric, compute, json),
    }
}

fn evaluate_typed<T: Real>(
    model_path: PathBuf,
    data: PathBuf,
    format: String,
    metric: String,
    compute: ComputeOpts,
    json: bool,
) -> anyhow::Result<()> {
    let format: DataFormat = format.parse().context("load-data")?;
    let kind: MetricKind = metric.parse().context("evaluate")?;
    let mut data: Dataset<T> = load_dataset(&data, format).context("load-data")?;
    if matches!(kind, MetricKind::CError | MetricKind::OneMinusAuc) {
        canonicalize_binary_labels(&mut data).context("evaluate")?;
    }
    let model: FalkonModel<T> = load_model(&model_path).context("load-model")?;
    let ctx = make_ctx(&compute)?;
    let t0 = std::time::Instant::now();
    let preds = predict(&model, &data.x, &ctx).context("predict")?;
    let mut report = compute_metric(kind, &preds, &data.y).context("evaluate")?;
    report.timings.iterations_seconds = t0.elapsed().as_secs_f64();
    println!("{}", report.to_kv());
    if json {
        println!("{}", serde_json::to_string(&report).context("evaluate")?);
    }
    Ok(())
}
