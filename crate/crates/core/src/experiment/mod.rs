//! Experiment drivers behind the command-line interface.
//!
//! Every driver writes only below `cfg.out_dir` and is deterministic given
//! the configuration, whatever the worker count.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::baselines::{default_lambda_grid, peak_coefficient, solve, tune_lambda, write_objective_csv, CsConfig};
use crate::complex::ComplexImage;
use crate::contraction::{aggregate, analyze_samples, debias_final, require_affine, write_aggregate_csv, write_trace_csv, DebiasOutcome};
use crate::data::{dataset_stems, ingest_directory, phantoms, quantize, read_complex_pgm, write_complex_pgm, write_dataset};
use crate::error::{NpgdError, Result};
use crate::metrics::MetricReport;
use crate::ops::{BoxDownsampleOperator, LinearOperator, MaskedFourierOperator};
use crate::parallel::{try_par_map, with_threads, Execution};
use crate::prox::{Checkpoint, ProximalNet};
use crate::sampling::{generate_vardens_mask, SamplingMask};
use crate::unroll::{reconstruct, train, unrolled_forward, write_trace_csv as write_loss_csv, Sample, TrainOutcome};

pub use config::{AnalyzeConfig, DataConfig, DataSource, ExperimentConfig, MaskConfig, Task, KEYS};
pub use config::parse_entries;

pub fn execution(cfg: &ExperimentConfig) -> Execution {
    Execution::for_threads(cfg.threads)
}

/// Run `f` in a pool sized by `cfg.threads`.
pub fn run_with_threads<R: Send>(cfg: &ExperimentConfig, f: impl FnOnce() -> R + Send) -> R {
    with_threads(cfg.threads, f)
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn sampling_mask(cfg: &ExperimentConfig, index: usize) -> Result<SamplingMask> {
    let seed = if cfg.mask.per_sample {
        cfg.mask.seed.wrapping_add(index as u64)
    } else {
        cfg.mask.seed
    };
    generate_vardens_mask(
        cfg.image_size,
        cfg.image_size,
        cfg.mask.rate,
        cfg.mask.center_fraction,
        cfg.mask.decay,
        seed,
    )
}

/// Forward operator for dataset entry `index`.
pub fn operator(cfg: &ExperimentConfig, index: usize) -> Result<Arc<dyn LinearOperator>> {
    Ok(match cfg.task {
        Task::Mri => Arc::new(MaskedFourierOperator::new(sampling_mask(cfg, index)?)),
        Task::Sr => Arc::new(BoxDownsampleOperator::new(cfg.image_size, cfg.image_size)?),
    })
}

/// Named ground-truth images in dataset order.
pub fn load_images(cfg: &ExperimentConfig) -> Result<Vec<(String, ComplexImage)>> {
    let images: Vec<(String, ComplexImage)> = match &cfg.data.source {
        DataSource::Synthetic => phantoms(cfg.data.count, cfg.image_size, &cfg.data.phantom, cfg.data.seed)?
            .into_iter()
            .enumerate()
            .map(|(i, x)| (format!("img{i:04}"), quantize(&x)))
            .collect(),
        DataSource::Dataset(dir) => read_named(dir)?,
        DataSource::Grayscale(dir) => ingest_directory(dir, cfg.image_size)?
            .into_iter()
            .enumerate()
            .map(|(i, x)| (format!("img{i:04}"), x))
            .collect(),
    };
    for (name, x) in &images {
        if x.dims() != (cfg.image_size, cfg.image_size) {
            return Err(NpgdError::Config(format!(
                "image_size = {} but {name} is {}x{}",
                cfg.image_size,
                x.height(),
                x.width()
            )));
        }
    }
    Ok(images)
}

fn read_named(dir: &Path) -> Result<Vec<(String, ComplexImage)>> {
    let stems = dataset_stems(dir)?;
    if stems.is_empty() {
        return Err(NpgdError::EmptyDataset(format!("no *_re.pgm images in {}", dir.display())));
    }
    stems
        .into_iter()
        .map(|s| {
            let x = read_complex_pgm(dir, &s)?;
            Ok((s, x))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Sample>,
    /// Tail of the training split used to tune the wavelet threshold.
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub test_names: Vec<String>,
}

pub fn samples_from(cfg: &ExperimentConfig, images: Vec<(String, ComplexImage)>, offset: usize) -> Result<(Vec<String>, Vec<Sample>)> {
    let mut names = Vec::with_capacity(images.len());
    let mut samples = Vec::with_capacity(images.len());
    let shared = if cfg.mask.per_sample { None } else { Some(operator(cfg, 0)?) };
    for (i, (name, x)) in images.into_iter().enumerate() {
        let op = match &shared {
            Some(op) => Arc::clone(op),
            None => operator(cfg, offset + i)?,
        };
        samples.push(Sample::simulate(x, op)?);
        names.push(name);
    }
    Ok((names, samples))
}

/// Last `test_count` images form the test split; the rest train.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Splits> {
    let images = load_images(cfg)?;
    let n = images.len();
    if n <= cfg.data.test_count {
        return Err(NpgdError::EmptyDataset(format!(
            "{n} images leave nothing to train on after holding out {}",
            cfg.data.test_count
        )));
    }
    let (names, samples) = samples_from(cfg, images, 0)?;
    let split = n - cfg.data.test_count;
    let train = samples[..split].to_vec();
    let val_start = split.saturating_sub(cfg.data.val_count.max(1));
    Ok(Splits {
        validation: samples[val_start..split].to_vec(),
        test: samples[split..].to_vec(),
        test_names: names[split..].to_vec(),
        train,
    })
}

pub fn cmd_genmask(cfg: &ExperimentConfig) -> Result<SamplingMask> {
    if cfg.task != Task::Mri {
        return Err(NpgdError::Config("genmask needs task = mri".into()));
    }
    let mask = sampling_mask(cfg, 0)?;
    fs::create_dir_all(&cfg.out_dir)?;
    mask.to_pgm().write(cfg.out_dir.join("mask.pgm"))?;
    mask.write_bitmask(cfg.out_dir.join("mask.bin"))?;
    Ok(mask)
}

/// Write the synthetic phantoms to `<out>/data`.
pub fn cmd_gendata(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let images = phantoms(cfg.data.count, cfg.image_size, &cfg.data.phantom, cfg.data.seed)?;
    let dir = cfg.out_dir.join("data");
    write_dataset(&images, &dir)?;
    Ok(dir)
}

pub fn initial_checkpoint(cfg: &ExperimentConfig, prox: &crate::prox::ProximalConfig) -> Result<Checkpoint> {
    let net = ProximalNet::build(prox.clone(), cfg.train.seed)?;
    let mut ck = Checkpoint::new(net, cfg.unroll.alpha_init);
    ck.metadata = cfg.checkpoint_entries();
    Ok(ck)
}

pub fn train_model(cfg: &ExperimentConfig, samples: &[Sample]) -> Result<TrainOutcome> {
    let init = initial_checkpoint(cfg, &cfg.prox)?;
    let mut tc = cfg.train.clone();
    if tc.checkpoint_every > 0 {
        tc.checkpoint_path = Some(cfg.out_dir.join("model.partial.ckpt"));
        fs::create_dir_all(&cfg.out_dir)?;
    }
    train(samples, init, &cfg.unroll, &tc, execution(cfg))
}

/// Train on the training split; writes `model.ckpt` and `loss.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let splits = prepare(cfg)?;
    let outcome = train_model(cfg, &splits.train)?;
    fs::create_dir_all(&cfg.out_dir)?;
    outcome.checkpoint.save(cfg.out_dir.join("model.ckpt"))?;
    write_loss_csv(&outcome.trace, create_file(&cfg.out_dir.join("loss.csv"))?)?;
    Ok(outcome)
}

/// Fail with the offending field when a checkpoint was trained for another setup.
pub fn check_compatible(cfg: &ExperimentConfig, ck: &Checkpoint) -> Result<()> {
    for (field, expected) in [("task", cfg.task.to_string()), ("image_size", cfg.image_size.to_string())] {
        match ck.metadata.get(field) {
            Some(v) if *v != expected => {
                return Err(NpgdError::Config(format!(
                    "checkpoint field {field} = {v} does not match config {field} = {expected}"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

fn iterations_of(ck: &Checkpoint, cfg: &ExperimentConfig) -> Result<usize> {
    match ck.metadata.get("unroll.iterations") {
        Some(v) => v
            .parse()
            .map_err(|_| NpgdError::Format(format!("checkpoint unroll.iterations {v:?} is not an integer"))),
        None => Ok(cfg.unroll.iterations),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconRow {
    pub name: String,
    pub recon: MetricReport,
    pub zero_filled: MetricReport,
    pub residuals: Vec<f64>,
}

pub const RECON_HEADER: &str = "image,snr_db,ssim,nrmse,zf_snr_db,zf_ssim,zf_nrmse,final_residual";

pub fn write_recon_csv(rows: &[ReconRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{RECON_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:e}",
            r.name,
            r.recon.snr_db,
            r.recon.ssim,
            r.recon.nrmse,
            r.zero_filled.snr_db,
            r.zero_filled.ssim,
            r.zero_filled.nrmse,
            r.residuals.last().copied().unwrap_or(0.0)
        )?;
    }
    Ok(())
}

/// Evaluate a trained model on named samples; optionally write image triplets into `dir`.
pub fn evaluate(
    net: &ProximalNet,
    alpha: f32,
    iterations: usize,
    names: &[String],
    samples: &[Sample],
    image_dir: Option<&Path>,
    exec: Execution,
) -> Result<Vec<ReconRow>> {
    let rows = try_par_map(exec, samples, |i, s| -> Result<(ReconRow, ComplexImage, ComplexImage)> {
        let rec = reconstruct(net, alpha, iterations, &s.measurement, s.op.as_ref())?;
        let zf = s.op.adjoint(&s.measurement)?;
        Ok((
            ReconRow {
                name: names[i].clone(),
                recon: MetricReport::compute(&rec.image, &s.truth)?,
                zero_filled: MetricReport::compute(&zf, &s.truth)?,
                residuals: rec.residuals,
            },
            rec.image,
            zf,
        ))
    })?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, (row, rec, zf)) in rows.into_iter().enumerate() {
        if let Some(dir) = image_dir {
            fs::create_dir_all(dir)?;
            write_complex_pgm(&rec, dir, &format!("{}_xT", row.name))?;
            write_complex_pgm(&zf, dir, &format!("{}_zf", row.name))?;
            write_complex_pgm(&samples[i].truth, dir, &format!("{}_gt", row.name))?;
        }
        out.push(row);
    }
    Ok(out)
}

/// Reconstruct the test split (or every image in `input`) with a checkpoint.
pub fn cmd_reconstruct(cfg: &ExperimentConfig, checkpoint: &Path, input: Option<&Path>) -> Result<Vec<ReconRow>> {
    let ck = Checkpoint::load(checkpoint)?;
    check_compatible(cfg, &ck)?;
    let iterations = iterations_of(&ck, cfg)?;
    let (names, samples) = match input {
        Some(dir) => {
            let images = read_named(dir)?;
            for (name, x) in &images {
                if x.dims() != (cfg.image_size, cfg.image_size) {
                    return Err(NpgdError::Config(format!(
                        "image_size = {} but input {name} is {}x{}",
                        cfg.image_size,
                        x.height(),
                        x.width()
                    )));
                }
            }
            samples_from(cfg, images, 0)?
        }
        None => {
            let s = prepare(cfg)?;
            (s.test_names, s.test)
        }
    };
    let rows = evaluate(
        &ck.net,
        ck.alpha,
        iterations,
        &names,
        &samples,
        Some(&cfg.out_dir.join("recon")),
        execution(cfg),
    )?;
    write_recon_csv(&rows, create_file(&cfg.out_dir.join("metrics.csv"))?)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSummary {
    pub lambda: f32,
    pub table: Vec<(f32, f64)>,
    pub rows: Vec<(String, MetricReport)>,
}

impl BaselineSummary {
    pub fn mean_snr(&self) -> f64 {
        self.rows.iter().map(|r| r.1.snr_db).sum::<f64>() / self.rows.len() as f64
    }
}

/// Threshold from the config, or tuned on the validation split.
pub fn baseline_lambda(cfg: &ExperimentConfig, validation: &[Sample]) -> Result<(f32, Vec<(f32, f64)>)> {
    if let Some(l) = cfg.cs_lambda {
        return Ok((l, vec![]));
    }
    let peak = peak_coefficient(validation, cfg.cs.levels)?;
    let grid = default_lambda_grid(peak, cfg.cs_grid_points);
    let tuned = tune_lambda(validation, &grid, &cfg.cs, execution(cfg))?;
    Ok((tuned.best_lambda, tuned.table))
}

pub fn run_baseline(cfg: &ExperimentConfig, splits: &Splits) -> Result<(BaselineSummary, Vec<crate::baselines::CsResult>)> {
    let (lambda, table) = baseline_lambda(cfg, &splits.validation)?;
    let cs = CsConfig { lambda, ..cfg.cs.clone() };
    let results = try_par_map(execution(cfg), &splits.test, |_, s| solve(&s.measurement, s.op.as_ref(), &cs))?;
    let rows = results
        .iter()
        .zip(&splits.test)
        .zip(&splits.test_names)
        .map(|((r, s), name)| Ok((name.clone(), MetricReport::compute(&r.image, &s.truth)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((BaselineSummary { lambda, table, rows }, results))
}

/// Wavelet CS on the test split; writes `baseline.csv`, `lambda_table.csv`
/// and per-image objective traces.
pub fn cmd_baseline(cfg: &ExperimentConfig) -> Result<BaselineSummary> {
    let splits = prepare(cfg)?;
    let (summary, results) = run_baseline(cfg, &splits)?;
    let mut out = create_file(&cfg.out_dir.join("baseline.csv"))?;
    writeln!(out, "image,lambda,snr_db,ssim,nrmse")?;
    for (name, m) in &summary.rows {
        writeln!(out, "{name},{:e},{:.6},{:.6},{:.6}", summary.lambda, m.snr_db, m.ssim, m.nrmse)?;
    }
    out.flush()?;
    let mut out = create_file(&cfg.out_dir.join("lambda_table.csv"))?;
    writeln!(out, "lambda,snr_mean")?;
    for (l, s) in &summary.table {
        writeln!(out, "{l:e},{s:.6}")?;
    }
    out.flush()?;
    for (r, name) in results.iter().zip(&splits.test_names) {
        write_objective_csv(&r.trace, create_file(&cfg.out_dir.join("objective").join(format!("{name}.csv")))?)?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DebiasRow {
    pub name: String,
    pub outcome: DebiasOutcome,
    pub iterations: usize,
    pub residual_before: f64,
    pub residual_after: f64,
}

#[derive(Clone, Debug)]
pub struct AnalyzeSummary {
    pub traces: Vec<Vec<crate::contraction::ContractionRow>>,
    pub debias: Vec<DebiasRow>,
}

/// Contraction diagnostics and de-biasing for a trained model on named samples.
pub fn analyze_model(
    cfg: &ExperimentConfig,
    net: &ProximalNet,
    alpha: f32,
    iterations: usize,
    names: &[String],
    samples: &[Sample],
) -> Result<AnalyzeSummary> {
    require_affine(net)?;
    let exec = execution(cfg);
    let traces = analyze_samples(net, alpha, iterations, samples, exec)?;
    let debias = try_par_map(exec, samples, |i, s| -> Result<DebiasRow> {
        let op = s.op.as_ref();
        let traj = unrolled_forward(net, op, &s.measurement, alpha, iterations)?;
        let d = debias_final(
            net,
            op,
            alpha,
            &s.measurement,
            &traj,
            cfg.analyze.debias_iters,
            cfg.analyze.debias_tol,
        )?;
        let residual = |x: &ComplexImage| -> Result<f64> { Ok(s.measurement.sub(&op.apply(x)?)?.norm()) };
        Ok(DebiasRow {
            name: names[i].clone(),
            outcome: d.outcome,
            iterations: d.iterations,
            residual_before: residual(traj.final_image())?,
            residual_after: residual(&d.image)?,
        })
    })?;
    Ok(AnalyzeSummary { traces, debias })
}

pub fn write_analysis(dir: &Path, names: &[String], summary: &AnalyzeSummary) -> Result<()> {
    for (trace, name) in summary.traces.iter().zip(names) {
        write_trace_csv(trace, create_file(&dir.join("contraction").join(format!("{name}.csv")))?)?;
    }
    write_aggregate_csv(&aggregate(&summary.traces)?, create_file(&dir.join("contraction_aggregate.csv"))?)?;
    let mut out = create_file(&dir.join("debias.csv"))?;
    writeln!(out, "image,outcome,iterations,residual_xT,residual_debiased")?;
    for r in &summary.debias {
        let outcome = match r.outcome {
            DebiasOutcome::Converged => "converged",
            DebiasOutcome::NotConverged => "not_converged",
            DebiasOutcome::NonContractive => "non_contractive",
        };
        writeln!(
            out,
            "{},{outcome},{},{:e},{:e}",
            r.name, r.iterations, r.residual_before, r.residual_after
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Contraction analysis of a checkpoint on the test split.
pub fn cmd_analyze(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<AnalyzeSummary> {
    let ck = Checkpoint::load(checkpoint)?;
    check_compatible(cfg, &ck)?;
    require_affine(&ck.net)?;
    let iterations = iterations_of(&ck, cfg)?;
    let splits = prepare(cfg)?;
    let summary = analyze_model(cfg, &ck.net, ck.alpha, iterations, &splits.test_names, &splits.test)?;
    write_analysis(&cfg.out_dir, &splits.test_names, &summary)?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub iterations: usize,
    pub res_blocks: usize,
    pub train_seconds: f64,
    pub infer_seconds_per_image: f64,
    pub snr_mean: f64,
    pub ssim_mean: f64,
}

pub const SWEEP_HEADER: &str = "T,RBs,train_seconds,infer_seconds_per_image,snr_mean,ssim_mean";

/// Train and evaluate one `(T, RB)` cell with the configured training budget.
pub fn sweep_cell(cfg: &ExperimentConfig, splits: &Splits, iterations: usize, res_blocks: usize) -> Result<SweepRow> {
    let mut cell = cfg.clone();
    cell.unroll.iterations = iterations;
    cell.prox.num_res_blocks = res_blocks;
    cell.validate()?;
    let start = Instant::now();
    let outcome = train_model(&cell, &splits.train)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let ck = outcome.checkpoint;
    let start = Instant::now();
    let rows = evaluate(&ck.net, ck.alpha, iterations, &splits.test_names, &splits.test, None, Execution::Sequential)?;
    let infer_seconds_per_image = start.elapsed().as_secs_f64() / rows.len() as f64;
    let n = rows.len() as f64;
    Ok(SweepRow {
        iterations,
        res_blocks,
        train_seconds,
        infer_seconds_per_image,
        snr_mean: rows.iter().map(|r| r.recon.snr_db).sum::<f64>() / n,
        ssim_mean: rows.iter().map(|r| r.recon.ssim).sum::<f64>() / n,
    })
}

pub fn write_sweep_csv(rows: &[SweepRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.3},{:.6},{:.6},{:.6}",
            r.iterations, r.res_blocks, r.train_seconds, r.infer_seconds_per_image, r.snr_mean, r.ssim_mean
        )?;
    }
    Ok(())
}

/// Train every `(T, RB)` cell of `sweep.grid`; writes `sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let splits = prepare(cfg)?;
    let rows = cfg
        .sweep
        .iter()
        .map(|&(t, rb)| sweep_cell(cfg, &splits, t, rb))
        .collect::<Result<Vec<_>>>()?;
    write_sweep_csv(&rows, create_file(&cfg.out_dir.join("sweep.csv"))?)?;
    Ok(rows)
}
