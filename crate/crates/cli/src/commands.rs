//! Subcommand implementations. Each reads its inputs from the work directory
//! and writes its outputs back atomically.

use std::fmt::Write as _;
use std::path::Path;

use log::{error, info, warn};

use phaseret_core::aggregation::{aggregate, EquivariantTransform};
use phaseret_core::denoiser::{is_validation, train, TrainingRecord};
use phaseret_core::initialization::initialize;
use phaseret_core::metrics::resolve_ambiguity;
use phaseret_core::refinement::{reconstruct_traced, Denoise, OracleDenoiser};
use phaseret_core::rng::{derive_seed, stream};
use phaseret_core::uncertainty::{
    calibrate, coverage_csv, coverage_curve, coverage_gap, empirical_variance, fit_isotonic,
};
use phaseret_core::{measure, residual, snr_db, ImageGrid, MagnitudeMeasurements};

use crate::config::PipelineConfig;
use crate::dataset::{
    measurement_path, read_ensemble, read_manifest, read_summary, record_id, target_path, write_ensemble,
    write_manifest, write_summary, CorpusRecord,
};
use crate::error::CliError;
use crate::formats::{
    decode_pgm, encode_image, encode_measurements, encode_model, encode_pgm, read_file, read_image,
    read_measurements, read_model, write_atomic,
};

/// Which denoiser the refinement loop uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenoiserChoice {
    Trained,
    /// The ground-truth target of each record; a test harness.
    Oracle,
}

/// Runs `f` on every record, logging failures, and fails with a record count
/// when any did.
fn for_each_record<F>(records: &[CorpusRecord], mut f: F) -> Result<(), CliError>
where
    F: FnMut(usize, &CorpusRecord) -> Result<(), CliError>,
{
    let mut failed = 0;
    for (i, r) in records.iter().enumerate() {
        if let Err(e) = f(i, r) {
            error!("record {} ({}): {e}", i, r.id);
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Records {
            failed,
            total: records.len(),
        });
    }
    Ok(())
}

fn corpus(cfg: &PipelineConfig) -> Result<Vec<CorpusRecord>, CliError> {
    let dir = cfg.corpus_dir();
    if !dir.join("manifest.csv").exists() {
        return Err(CliError::Config(format!("no corpus in {}; run synth first", dir.display())));
    }
    read_manifest(&dir)
}

fn load_record(cfg: &PipelineConfig, r: &CorpusRecord) -> Result<(ImageGrid, MagnitudeMeasurements), CliError> {
    let dir = cfg.corpus_dir();
    Ok((read_image(&target_path(&dir, &r.id))?, read_measurements(&measurement_path(&dir, &r.id))?))
}

/// Generates the corpus. With `images`, the targets are the `.pgm` files of
/// that directory in name order instead of synthetic shapes.
pub fn synth(cfg: &PipelineConfig, images: Option<&Path>) -> Result<(), CliError> {
    let dir = cfg.corpus_dir();
    let spec = cfg.corpus_spec();
    let noise = cfg.noise();
    let targets: Vec<ImageGrid> = match images {
        None => (0..cfg.count).map(|i| spec.image(i)).collect::<Result<_, _>>()?,
        Some(src) => {
            let mut paths: Vec<_> = std::fs::read_dir(src)
                .map_err(|e| CliError::io(src, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
                .collect();
            paths.sort();
            paths
                .iter()
                .map(|p| decode_pgm(&read_file(p)?, Some(cfg.padded_dim)).map_err(|e| e.context(p)))
                .collect::<Result<_, _>>()?
        }
    };
    let mut records = Vec::with_capacity(targets.len());
    for (i, x) in targets.iter().enumerate() {
        let id = record_id(i);
        let noise_seed = derive_seed(cfg.seed, stream::MEASURE, i as u64);
        let y = measure(x, &noise, noise_seed)?;
        let snr = snr_db(x, &y, cfg.snr_mode)?;
        write_atomic(&target_path(&dir, &id), &encode_image(x))?;
        write_atomic(&measurement_path(&dir, &id), &encode_measurements(&y))?;
        records.push(CorpusRecord {
            id,
            image_seed: if images.is_some() { 0 } else { spec.record_seed(i) },
            noise_seed,
            alpha: cfg.alpha,
            snr_db: snr,
        });
    }
    write_manifest(&dir, &records)?;
    info!("synth: {} records in {}", records.len(), dir.display());
    Ok(())
}

pub fn init(cfg: &PipelineConfig) -> Result<(), CliError> {
    let records = corpus(cfg)?;
    for_each_record(&records, |i, r| {
        let (_, y) = load_record(cfg, r)?;
        let seed = derive_seed(cfg.seed, stream::INIT_RECORD, i as u64);
        let ensemble = initialize(&y, cfg.image_dim, &cfg.init, seed)?;
        info!("init {}: best residual {:.4}", r.id, ensemble.residuals[0]);
        write_ensemble(&cfg.init_dir().join(&r.id), &ensemble)
    })
}

pub fn train_denoiser(cfg: &PipelineConfig) -> Result<(), CliError> {
    let tc = cfg.training()?;
    let records = corpus(cfg)?;
    let training: Vec<TrainingRecord> = records
        .iter()
        .map(|r| {
            let target = read_image(&target_path(&cfg.corpus_dir(), &r.id))?;
            let ensemble = read_ensemble(&cfg.init_dir().join(&r.id))?;
            Ok(TrainingRecord::aligned(r.id.clone(), target, ensemble.estimates)?)
        })
        .collect::<Result<_, CliError>>()?;
    let outcome = train(&training, &tc)?;
    let mut history = String::from("epoch,train_loss,validation_loss\n");
    for e in &outcome.history {
        let _ = writeln!(history, "{},{},{}", e.epoch, e.train_loss, e.validation_loss);
    }
    write_atomic(&cfg.work_dir.join("train_history.csv"), history.as_bytes())?;
    write_atomic(&cfg.model_path(), &encode_model(&outcome.model))?;
    info!("train-denoiser: best epoch {}", outcome.best_epoch);
    Ok(())
}

fn with_denoiser<T>(
    cfg: &PipelineConfig,
    choice: DenoiserChoice,
    truth: &ImageGrid,
    f: impl FnOnce(&dyn Denoise) -> Result<T, CliError>,
) -> Result<T, CliError> {
    match choice {
        DenoiserChoice::Oracle => f(&OracleDenoiser { truth: truth.clone() }),
        DenoiserChoice::Trained => f(&read_model(&cfg.model_path())?),
    }
}

fn require_model(cfg: &PipelineConfig, choice: DenoiserChoice) -> Result<(), CliError> {
    if choice == DenoiserChoice::Trained && !cfg.model_path().exists() {
        return Err(CliError::Config(format!(
            "no model at {}; run train-denoiser or pass --oracle-denoiser",
            cfg.model_path().display()
        )));
    }
    Ok(())
}

/// Refines every record. `snapshots` also writes each intermediate iterate.
pub fn reconstruct(cfg: &PipelineConfig, choice: DenoiserChoice, snapshots: bool) -> Result<(), CliError> {
    require_model(cfg, choice)?;
    let records = corpus(cfg)?;
    let dir = cfg.recon_dir();
    for_each_record(&records, |i, r| {
        let (truth, y) = load_record(cfg, r)?;
        let ensemble = read_ensemble(&cfg.init_dir().join(&r.id))?;
        let rc = cfg.refinement(derive_seed(cfg.seed, stream::RECORD_REFINE, i as u64))?;
        let (x, trace) = with_denoiser(cfg, choice, &truth, |d| Ok(reconstruct_traced(&y, &ensemble, d, &rc)?))?;
        let mut csv = String::from("step,residual\n");
        for (j, it) in trace.iter().enumerate() {
            // trace runs from x'_{T+1} down to x'_1
            let step = rc.steps + 1 - j;
            let _ = writeln!(csv, "{step},{}", residual(it, &y)?);
            if snapshots {
                write_atomic(&dir.join(&r.id).join(format!("step_{step}.igrd")), &encode_image(it))?;
            }
        }
        write_atomic(&dir.join(format!("{}.trace.csv", r.id)), csv.as_bytes())?;
        write_atomic(&dir.join(format!("{}.igrd", r.id)), &encode_image(&x))?;
        write_atomic(&dir.join(format!("{}.pgm", r.id)), &encode_pgm(&x))
    })
}

pub fn aggregate_cmd(cfg: &PipelineConfig, choice: DenoiserChoice) -> Result<(), CliError> {
    if cfg.aggregate_p == 0 {
        return Err(CliError::Config("aggregate.p must be at least 1".into()));
    }
    require_model(cfg, choice)?;
    let records = corpus(cfg)?;
    let t = EquivariantTransform::new(cfg.transform, cfg.image_dim);
    if cfg.transform.is_experimental() {
        warn!("transform {} is not an equivariance of the forward model", cfg.transform.as_str());
    }
    let mut summary = Vec::with_capacity(records.len());
    let result = for_each_record(&records, |i, r| {
        let (truth, y) = load_record(cfg, r)?;
        let ensemble = read_ensemble(&cfg.init_dir().join(&r.id))?;
        let rc = cfg.refinement(derive_seed(cfg.seed, stream::RECORD_REFINE, i as u64))?;
        let result = with_denoiser(cfg, choice, &truth, |d| Ok(aggregate(&y, &ensemble, d, &rc, &t, cfg.aggregate_p)?))?;
        let out = cfg.aggregate_dir().join(&r.id);
        for (j, s) in result.samples.iter().enumerate() {
            write_atomic(&out.join(format!("sample_{j}.igrd")), &encode_image(s))?;
        }
        write_atomic(&out.join("mean.igrd"), &encode_image(&result.mean))?;
        write_atomic(&out.join("mean.pgm"), &encode_pgm(&result.mean))?;
        summary.push((r.id.clone(), empirical_variance(&result.samples)?.predicted_variance));
        Ok(())
    });
    write_summary(&cfg.aggregate_dir().join("summary.csv"), &summary)?;
    result
}

/// Support-pixel errors of `estimate` against the target after resolving the
/// twin ambiguity.
fn pixel_errors(estimate: &ImageGrid, truth: &ImageGrid, shift_search: bool) -> Result<Vec<f64>, CliError> {
    let (aligned, _) = resolve_ambiguity(estimate, truth, shift_search)?;
    Ok(aligned
        .inner_values()
        .iter()
        .zip(truth.inner_values())
        .map(|(a, b)| a - b)
        .collect())
}

/// Fits the calibration map on one half of the aggregated records and reports
/// coverage before and after calibration on the other half.
pub fn calibrate_cmd(cfg: &PipelineConfig) -> Result<(), CliError> {
    let summary_path = cfg.aggregate_dir().join("summary.csv");
    if !summary_path.exists() {
        return Err(CliError::Config(format!("no {}; run aggregate first", summary_path.display())));
    }
    let summary = read_summary(&summary_path)?;
    let mut fit_pairs = Vec::new();
    let mut held = Vec::new();
    for (id, var) in &summary {
        let truth = read_image(&target_path(&cfg.corpus_dir(), id))?;
        let mean = read_image(&cfg.aggregate_dir().join(id).join("mean.igrd"))?;
        let errors = pixel_errors(&mean, &truth, cfg.shift_search)?;
        let mse = errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64;
        if is_validation(id, 0.5) {
            held.push((id.clone(), *var, errors));
        } else {
            fit_pairs.push((*var, mse));
        }
    }
    if fit_pairs.len() < 2 || held.is_empty() {
        return Err(CliError::Config(format!(
            "calibration needs at least 2 fitting and 1 held-out record, got {} and {}",
            fit_pairs.len(),
            held.len()
        )));
    }
    let model = fit_isotonic(&fit_pairs)?;
    let mut before = Vec::new();
    let mut after = Vec::new();
    let mut calibrated = String::from("id,predicted_variance,calibrated_error\n");
    for (id, var, errors) in &held {
        let c = calibrate(&model, *var);
        let _ = writeln!(calibrated, "{id},{var},{c}");
        before.extend(errors.iter().map(|e| (var.sqrt(), *e)));
        after.extend(errors.iter().map(|e| (c.max(0.0).sqrt(), *e)));
    }
    let before = coverage_curve(&before, &cfg.coverage_levels)?;
    let after = coverage_curve(&after, &cfg.coverage_levels)?;
    let dir = cfg.calibration_dir();
    write_atomic(&dir.join("calibration.csv"), model.to_csv().as_bytes())?;
    write_atomic(&dir.join("coverage_before.csv"), coverage_csv(&before).as_bytes())?;
    write_atomic(&dir.join("coverage_after.csv"), coverage_csv(&after).as_bytes())?;
    write_atomic(&dir.join("calibrated.csv"), calibrated.as_bytes())?;
    info!(
        "calibrate: coverage gap {:.4} before, {:.4} after",
        coverage_gap(&before),
        coverage_gap(&after)
    );
    Ok(())
}

/// Scores the aggregated mean when aggregation is configured, otherwise the
/// single reconstruction.
pub fn eval(cfg: &PipelineConfig) -> Result<(), CliError> {
    let records = corpus(cfg)?;
    let mut csv = String::from("id,psnr,ssim,ambiguity,shift_search\n");
    let result = for_each_record(&records, |_, r| {
        let truth = read_image(&target_path(&cfg.corpus_dir(), &r.id))?;
        let path = if cfg.aggregate_p > 0 {
            cfg.aggregate_dir().join(&r.id).join("mean.igrd")
        } else {
            cfg.recon_dir().join(format!("{}.igrd", r.id))
        };
        let (_, m) = resolve_ambiguity(&read_image(&path)?, &truth, cfg.shift_search)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.id,
            m.psnr_db,
            m.ssim,
            m.ambiguity_used.as_str(),
            m.shift_search_used
        );
        Ok(())
    });
    write_atomic(&cfg.work_dir.join("eval.csv"), csv.as_bytes())?;
    result
}

/// Init, reconstruct, optional aggregation, then eval. Record failures in
/// one stage do not stop the later stages for the other records.
pub fn run(cfg: &PipelineConfig, choice: DenoiserChoice) -> Result<(), CliError> {
    require_model(cfg, choice)?;
    write_atomic(&cfg.work_dir.join("run_config.txt"), cfg.to_text().as_bytes())?;
    let mut first_failure = None;
    let mut keep = |r: Result<(), CliError>| -> Result<(), CliError> {
        match r {
            Err(e @ CliError::Records { .. }) => {
                first_failure.get_or_insert(e);
                Ok(())
            }
            other => other,
        }
    };
    keep(init(cfg))?;
    keep(reconstruct(cfg, choice, false))?;
    if cfg.aggregate_p > 0 {
        keep(aggregate_cmd(cfg, choice))?;
    }
    keep(eval(cfg))?;
    first_failure.map_or(Ok(()), Err)
}
