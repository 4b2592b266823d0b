//! One training run end to end: seed model, the two-stage semi-supervised
//! loop with streaming metrics, fine-tuning, and checkpoint/metrics files in
//! the run directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use kaizen::data::Corpus;
use kaizen::ema::effective_half_life;
use kaizen::trainer::{
    derive_seed, evaluate, fine_tune, train_supervised, KaizenEngine, MetricsRecord,
    ModelCheckpoint, ParamData, Phase, RunCheckpoint, SupervisedConfig,
};
use kaizen::{Error, ParamVec, Real};

use crate::config::{config_hash, write_json_pretty, TrainJobConfig};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MODEL_FILE: &str = "model.json";
pub const SEED_MODEL_FILE: &str = "seed_model.json";
pub const CONFIG_FILE: &str = "resolved_config.json";
pub const COLLAPSE_FILE: &str = "collapse_report.json";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub collapsed: bool,
    pub steps_to_collapse: Option<u64>,
    /// Dev WER of the final model for completed runs; the last recorded dev
    /// WER for collapsed ones.
    pub final_dev_wer: f64,
}

fn seed_model_config(job: &TrainJobConfig) -> SupervisedConfig {
    SupervisedConfig {
        paradigm: job.run.paradigm,
        steps: job.seed_model.steps,
        batch_size: job.seed_model.batch_size,
        dropout_rate: job.seed_model.dropout_rate,
        mask: job.seed_model.mask,
        adam: job.run.optimizer.adam,
        lr: job.seed_model.schedule(),
        seed: derive_seed(job.run.seed, "seed-model"),
        eval_every: job.run.eval_every,
        kl_mass_threshold: job.run.kl_mass_threshold,
    }
}

fn fine_tune_config(job: &TrainJobConfig) -> SupervisedConfig {
    SupervisedConfig {
        paradigm: job.run.paradigm,
        steps: job.run.fine_tune_steps,
        batch_size: job.run.batch_size,
        dropout_rate: job.run.dropout_rate,
        mask: job.run.mask,
        adam: job.run.optimizer.adam,
        lr: job.run.optimizer.fine_tune_lr,
        seed: derive_seed(job.run.seed, "fine-tune"),
        eval_every: job.run.eval_every,
        kl_mass_threshold: job.run.kl_mass_threshold,
    }
}

/// Obtains the seed model: loads the configured checkpoint or trains one.
pub fn obtain_seed_model(job: &TrainJobConfig, corpus: &Corpus<Real>) -> Result<ParamVec> {
    if let Some(path) = &job.seed_model.checkpoint {
        let ck = ModelCheckpoint::load(path)?;
        if ck.dims != job.dims {
            bail!(Error::InvalidConfig(format!(
                "seed checkpoint dims {:?} do not match configured dims {:?}",
                ck.dims, job.dims
            )));
        }
        return Ok(ck.params.to_vector(&job.dims.layout())?);
    }
    let cfg = seed_model_config(job);
    let (params, _log) = train_supervised(&corpus.supervised, &corpus.dev, job.dims, &cfg)?;
    Ok(params)
}

struct MetricsSink {
    writer: BufWriter<File>,
}

impl MetricsSink {
    /// Creates the file with a header, pre-populated with `existing` records
    /// (the resume path rewrites the log from the snapshot so the file and
    /// the engine agree).
    fn create(path: &Path, existing: &[MetricsRecord]) -> Result<Self> {
        let mut writer = BufWriter::new(File::create(path)?);
        writeln!(writer, "{}", MetricsRecord::CSV_HEADER)?;
        for r in existing {
            writeln!(writer, "{}", r.to_csv_row())?;
        }
        writer.flush()?;
        Ok(MetricsSink { writer })
    }

    fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        writeln!(self.writer, "{}", record.to_csv_row())?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Executes the semi-supervised run plus fine-tuning into `out_dir`,
/// assuming the resolved config has already been written there.
///
/// Returns the run summary; collapse is a summary, not an error. Other
/// errors abort.
pub fn execute_run(
    job: &TrainJobConfig,
    corpus: &Corpus<Real>,
    seed_params: &ParamVec,
    out_dir: &Path,
    resume: Option<RunCheckpoint>,
) -> Result<RunSummary> {
    let hash = config_hash(job)?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);

    ModelCheckpoint {
        dims: job.dims,
        params: ParamData::from_vector(seed_params),
        step: 0,
        config_hash: hash.clone(),
    }
    .save(&out_dir.join(SEED_MODEL_FILE))?;

    // Bring the engine up fresh or from the checkpointed snapshot.
    let mut engine = match &resume {
        Some(ck) if ck.kaizen.is_some() && ck.phase == Phase::KaizenRunning => {
            KaizenEngine::restore(
                corpus,
                job.dims,
                seed_params,
                &job.run,
                ck.kaizen.as_ref().unwrap(),
            )?
        }
        _ => KaizenEngine::new(corpus, job.dims, seed_params, &job.run)?,
    };
    let mut sink = MetricsSink::create(&metrics_path, engine.metrics())?;

    let seed_data = ParamData::from_vector(seed_params);
    let run_result = engine.run(
        |record| {
            sink.append(record).map_err(to_kaizen_io)?;
            Ok(())
        },
        |snapshot| {
            RunCheckpoint {
                dims: job.dims,
                config_hash: hash.clone(),
                phase: Phase::KaizenRunning,
                seed_model: seed_data.clone(),
                kaizen: Some(snapshot.clone()),
                final_student: None,
                final_teacher: None,
            }
            .save(&ckpt_path)?;
            Ok(())
        },
    );

    match run_result {
        Ok(()) => {}
        Err(Error::Collapse { report }) => {
            let last_wer = report
                .metrics
                .last()
                .map(|r| r.dev_wer)
                .unwrap_or(f64::NAN);
            write_json_pretty(&out_dir.join(COLLAPSE_FILE), &report)?;
            RunCheckpoint {
                dims: job.dims,
                config_hash: hash,
                phase: Phase::KaizenDone,
                seed_model: seed_data,
                kaizen: Some(engine.snapshot()),
                final_student: Some(ParamData::from_vector(engine.student())),
                final_teacher: None,
            }
            .save(&ckpt_path)?;
            return Ok(RunSummary {
                collapsed: true,
                steps_to_collapse: Some(report.step),
                final_dev_wer: last_wer,
            });
        }
        Err(other) => return Err(other.into()),
    }

    let outcome = engine.finish()?;
    let half_life = effective_half_life(job.run.ema.alpha, job.run.ema.delta);

    // Fine-tune the student on supervised references only.
    let (final_student, ft_records) = if job.run.fine_tune_steps > 0 {
        let cfg = fine_tune_config(job);
        fine_tune(
            &outcome.student,
            &corpus.supervised,
            &corpus.dev,
            &cfg,
            job.run.total_steps,
            half_life,
        )?
    } else {
        (outcome.student.clone(), Vec::new())
    };
    for record in &ft_records {
        sink.append(record)?;
    }

    ModelCheckpoint {
        dims: job.dims,
        params: ParamData::from_vector(&final_student),
        step: job.run.total_steps + job.run.fine_tune_steps,
        config_hash: hash.clone(),
    }
    .save(&out_dir.join(MODEL_FILE))?;
    RunCheckpoint {
        dims: job.dims,
        config_hash: hash,
        phase: Phase::Done,
        seed_model: seed_data,
        kaizen: None,
        final_student: Some(ParamData::from_vector(&final_student)),
        final_teacher: Some(ParamData::from_vector(&outcome.teacher)),
    }
    .save(&ckpt_path)?;

    let final_dev_wer = evaluate(&final_student, &corpus.dev)?.wer;
    Ok(RunSummary {
        collapsed: false,
        steps_to_collapse: None,
        final_dev_wer,
    })
}

fn to_kaizen_io(e: anyhow::Error) -> Error {
    match e.downcast::<std::io::Error>() {
        Ok(io) => Error::Io(io),
        Err(e) => Error::InvalidConfig(e.to_string()),
    }
}

/// Prepares a run directory: writes the resolved config, refuses to clobber
/// an existing run without `--force` (a `--resume` caller skips this).
pub fn prepare_run_dir(out_dir: &Path, job: &TrainJobConfig, force: bool) -> Result<()> {
    if out_dir.join(METRICS_FILE).exists() && !force {
        bail!(Error::InvalidConfig(format!(
            "run directory {} already contains {METRICS_FILE}; use --force to overwrite \
             or --resume to continue",
            out_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    write_json_pretty(&out_dir.join(CONFIG_FILE), job)?;
    Ok(())
}
