//! The five CLI verbs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use kaizen::data::{generate_split, save_dataset, Split};
use kaizen::ema::effective_half_life;
use kaizen::trainer::{evaluate, MetricsRecord, ModelCheckpoint, Phase, RunCheckpoint, Stage};
use kaizen::{Error, Real};

use crate::config::{
    config_hash, load_corpus, read_json_config, split_path, write_json_pretty, ExperimentSpec,
    GenerateConfig, TrainJobConfig,
};
use crate::pipeline::{
    execute_run, obtain_seed_model, prepare_run_dir, RunSummary, CHECKPOINT_FILE, CONFIG_FILE,
    METRICS_FILE,
};
use crate::svg::{render_chart, Curve};

pub fn cmd_generate(
    config_path: &Path,
    out: Option<&Path>,
    force: bool,
    seed_override: Option<u64>,
) -> Result<()> {
    let mut cfg: GenerateConfig = read_json_config(config_path)?;
    if let Some(seed) = seed_override {
        cfg.corpus.seed = seed;
    }
    cfg.corpus.validate()?;
    let out_dir = out.map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let prefix = out_dir.join(&cfg.name);

    let targets: Vec<PathBuf> = Split::ALL
        .iter()
        .map(|s| split_path(&prefix, s.tag()))
        .collect();
    if !force {
        if let Some(existing) = targets.iter().find(|p| p.exists()) {
            bail!(Error::InvalidConfig(format!(
                "{} exists; use --force to overwrite",
                existing.display()
            )));
        }
    }
    let mut counts = BTreeMap::new();
    for (split, path) in Split::ALL.iter().zip(&targets) {
        let utterances = generate_split::<Real>(&cfg.corpus, *split)?;
        counts.insert(split.tag().to_string(), utterances.len());
        save_dataset(path, &utterances)?;
        println!("wrote {} ({} utterances)", path.display(), utterances.len());
    }

    #[derive(serde::Serialize)]
    struct Manifest<'a> {
        config: &'a GenerateConfig,
        counts: BTreeMap<String, usize>,
        files: Vec<String>,
    }
    let manifest_path = out_dir.join(format!("{}.manifest.json", cfg.name));
    write_json_pretty(
        &manifest_path,
        &Manifest {
            config: &cfg,
            counts,
            files: targets.iter().map(|p| p.display().to_string()).collect(),
        },
    )?;
    println!("wrote {}", manifest_path.display());
    Ok(())
}

/// Exit status the caller maps to a process exit code.
pub enum TrainStatus {
    Completed,
    Collapsed,
}

pub fn cmd_train(
    config_path: &Path,
    out: Option<&Path>,
    force: bool,
    resume: bool,
    seed_override: Option<u64>,
) -> Result<TrainStatus> {
    let mut job: TrainJobConfig = read_json_config(config_path)?;
    if let Some(seed) = seed_override {
        job.run.seed = seed;
    }
    job.run.validate()?;
    let out_dir = out
        .map(PathBuf::from)
        .or_else(|| job.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(job.run_name()));

    // Resolved-config echo: in the run directory and on stdout.
    let resumed_checkpoint = if resume {
        let path = out_dir.join(CHECKPOINT_FILE);
        if path.exists() {
            let ck = RunCheckpoint::load(&path)?;
            if ck.config_hash != config_hash(&job)? {
                bail!(Error::InvalidConfig(
                    "checkpoint was produced by a different config; refusing to resume".into()
                ));
            }
            if ck.phase == Phase::Done {
                println!("run already complete: {}", out_dir.display());
                let corpus = load_corpus(&job.data)?;
                let student = ck
                    .final_student
                    .as_ref()
                    .expect("done checkpoint has a student")
                    .to_vector(&job.dims.layout())?;
                let wer = evaluate(&student, &corpus.dev)?.wer;
                println!("final_dev_wer={wer}");
                return Ok(TrainStatus::Completed);
            }
            Some(ck)
        } else {
            None
        }
    } else {
        prepare_run_dir(&out_dir, &job, force)?;
        None
    };
    if resume {
        std::fs::create_dir_all(&out_dir)?;
        write_json_pretty(&out_dir.join(CONFIG_FILE), &job)?;
    }
    println!(
        "resolved config:\n{}",
        serde_json::to_string_pretty(&job)?
    );

    let corpus = load_corpus(&job.data)?;
    let seed_params = match &resumed_checkpoint {
        Some(ck) => ck.seed_model.to_vector(&job.dims.layout())?,
        None => obtain_seed_model(&job, &corpus)?,
    };
    let summary = execute_run(&job, &corpus, &seed_params, &out_dir, resumed_checkpoint)?;
    if summary.collapsed {
        println!(
            "run collapsed at step {} (metrics retained in {})",
            summary.steps_to_collapse.unwrap_or(0),
            out_dir.join(METRICS_FILE).display()
        );
        Ok(TrainStatus::Collapsed)
    } else {
        println!(
            "run complete: final_dev_wer={} dir={}",
            summary.final_dev_wer,
            out_dir.display()
        );
        Ok(TrainStatus::Completed)
    }
}

#[derive(Debug, Clone)]
struct SweepCell {
    alpha: f64,
    delta: u64,
    precision: kaizen::ema::PrecisionMode,
    cache: bool,
    seed: u64,
}

fn cell_name(cell: &SweepCell) -> String {
    let mode = match cell.precision {
        kaizen::ema::PrecisionMode::Master64 => "master64",
        kaizen::ema::PrecisionMode::Emulated16 => "emulated16",
    };
    format!(
        "alpha{}_delta{}_{}_cache{}_seed{}",
        cell.alpha, cell.delta, mode, cell.cache as u8, cell.seed
    )
}

fn cell_job(spec: &ExperimentSpec, cell: &SweepCell) -> TrainJobConfig {
    let mut job = spec.base.clone();
    job.name = Some(cell_name(cell));
    job.run.ema.alpha = cell.alpha;
    job.run.ema.delta = cell.delta;
    job.run.ema.precision_mode = cell.precision;
    job.run.seed = cell.seed;
    job.run.cache = if cell.cache {
        Some(spec.base.run.cache.unwrap_or(kaizen::trainer::CacheConfig {
            size: 100,
            refresh_prob: 0.1,
        }))
    } else {
        None
    };
    job
}

pub fn cmd_sweep(spec_path: &Path, jobs: usize, force: bool) -> Result<()> {
    let spec: ExperimentSpec = read_json_config(spec_path)?;
    spec.base.run.validate()?;
    if spec.alphas.is_empty() || spec.deltas.is_empty() || spec.seeds.is_empty() {
        bail!(Error::InvalidConfig(
            "sweep axes (alphas, deltas, seeds) must be non-empty".into()
        ));
    }
    let precisions = if spec.precision_modes.is_empty() {
        vec![spec.base.run.ema.precision_mode]
    } else {
        spec.precision_modes.clone()
    };
    let caches = if spec.cache.is_empty() {
        vec![spec.base.run.cache.is_some()]
    } else {
        spec.cache.clone()
    };

    let mut cells = Vec::new();
    for &alpha in &spec.alphas {
        for &delta in &spec.deltas {
            for &precision in &precisions {
                for &cache in &caches {
                    for &seed in &spec.seeds {
                        cells.push(SweepCell {
                            alpha,
                            delta,
                            precision,
                            cache,
                            seed,
                        });
                    }
                }
            }
        }
    }

    std::fs::create_dir_all(&spec.output_dir)?;
    let corpus = load_corpus(&spec.base.data)?;

    // Seed models depend only on the run seed; train each once up front.
    let mut seed_models = BTreeMap::new();
    for &seed in &spec.seeds {
        let mut job = spec.base.clone();
        job.run.seed = seed;
        seed_models.insert(seed, obtain_seed_model(&job, &corpus)?);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building sweep thread pool")?;

    struct Row {
        cell: SweepCell,
        tau: f64,
        outcome: Result<RunSummary>,
    }

    let rows: Vec<Row> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|cell| {
                let job = cell_job(&spec, cell);
                let out_dir = spec.output_dir.join(cell_name(cell));
                let outcome = (|| -> Result<RunSummary> {
                    prepare_run_dir(&out_dir, &job, force)?;
                    let seed_params = &seed_models[&cell.seed];
                    execute_run(&job, &corpus, seed_params, &out_dir, None)
                })();
                if let Err(e) = &outcome {
                    let _ = std::fs::write(out_dir.join("error.txt"), format!("{e:#}\n"));
                    eprintln!("run {} failed: {e:#}", cell_name(cell));
                }
                Row {
                    cell: cell.clone(),
                    tau: effective_half_life(cell.alpha, cell.delta),
                    outcome,
                }
            })
            .collect()
    });

    let summary_path = spec.output_dir.join("summary.csv");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&summary_path)?);
    writeln!(
        file,
        "alpha,delta,tau,precision_mode,cache,seed,final_dev_wer,collapsed,steps_to_collapse"
    )?;
    for row in &rows {
        let mode = match row.cell.precision {
            kaizen::ema::PrecisionMode::Master64 => "master64",
            kaizen::ema::PrecisionMode::Emulated16 => "emulated16",
        };
        let tau = if row.tau.is_infinite() {
            "inf".to_string()
        } else {
            format!("{}", row.tau.round())
        };
        match &row.outcome {
            Ok(summary) => writeln!(
                file,
                "{},{},{},{},{},{},{},{},{}",
                row.cell.alpha,
                row.cell.delta,
                tau,
                mode,
                row.cell.cache,
                row.cell.seed,
                summary.final_dev_wer,
                summary.collapsed,
                summary
                    .steps_to_collapse
                    .map(|s| s.to_string())
                    .unwrap_or_default(),
            )?,
            Err(_) => writeln!(
                file,
                "{},{},{},{},{},{},NaN,false,",
                row.cell.alpha, row.cell.delta, tau, mode, row.cell.cache, row.cell.seed
            )?,
        }
    }
    file.flush()?;
    println!("wrote {}", summary_path.display());
    if rows.iter().any(|r| r.outcome.is_err()) {
        eprintln!("some runs failed; see per-run error.txt files");
    }
    Ok(())
}

pub fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    per_utterance: Option<&Path>,
) -> Result<()> {
    let ck = ModelCheckpoint::load(checkpoint)?;
    let params = ck.params.to_vector::<Real>(&ck.dims.layout())?;
    let set = kaizen::data::load_dataset::<Real>(data)?;
    if let Some(utt) = set.iter().find(|u| u.features.ncols() != ck.dims.feature_dim) {
        bail!(Error::InvalidConfig(format!(
            "dims mismatch: checkpoint expects {} features, {} has {}",
            ck.dims.feature_dim,
            utt.id,
            utt.features.ncols()
        )));
    }
    let report = evaluate(&params, &set)?;
    println!(
        "wer={} blank_ratio={} substitutions={} insertions={} deletions={} ref_tokens={} \
         utterances={} frames={}",
        report.wer,
        report.blank_ratio,
        report.counts.substitutions,
        report.counts.insertions,
        report.counts.deletions,
        report.ref_tokens,
        report.per_utterance.len(),
        report.frames
    );
    if let Some(path) = per_utterance {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "id,wer,substitutions,insertions,deletions,ref_len,hyp_len")?;
        for u in &report.per_utterance {
            writeln!(
                file,
                "{},{},{},{},{},{},{}",
                u.id,
                u.wer,
                u.counts.substitutions,
                u.counts.insertions,
                u.counts.deletions,
                u.ref_len,
                u.hyp_len
            )?;
        }
    }
    Ok(())
}

fn load_metrics(dir: &Path) -> Result<Vec<MetricsRecord>> {
    let path = dir.join(METRICS_FILE);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == MetricsRecord::CSV_HEADER => {}
        other => bail!(Error::InvalidConfig(format!(
            "{}: unexpected header {other:?}",
            path.display()
        ))),
    }
    let records: Vec<MetricsRecord> = lines
        .map(MetricsRecord::from_csv_row)
        .collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        bail!(Error::InvalidConfig(format!(
            "{}: no metrics records",
            path.display()
        )));
    }
    Ok(records)
}

pub fn cmd_plot(run_dirs: &[PathBuf], out: &Path) -> Result<()> {
    if run_dirs.is_empty() {
        bail!(Error::InvalidConfig("plot needs at least one run directory".into()));
    }
    let mut curves = Vec::new();
    for dir in run_dirs {
        let records = load_metrics(dir)?;
        let job: TrainJobConfig = read_json_config(&dir.join(CONFIG_FILE))?;
        let tau = effective_half_life(job.run.ema.alpha, job.run.ema.delta);
        let tau_label = if tau.is_infinite() {
            "\u{221e}".to_string()
        } else {
            format!("{}", tau.round())
        };
        let label = format!(
            "\u{3b1}={}, \u{394}={}, \u{3c4}={}",
            job.run.ema.alpha, job.run.ema.delta, tau_label
        );
        let points: Vec<(f64, f64)> = records
            .iter()
            .map(|r| (r.step as f64, r.dev_wer))
            .collect();
        let transition = records
            .iter()
            .find(|r| r.stage == Stage::ContinuousPl)
            .map(|r| (r.step as f64, r.dev_wer));
        curves.push(Curve {
            label,
            points,
            transition,
        });
    }
    let svg = render_chart(&curves, "dev WER vs training step");
    std::fs::write(out, svg)?;
    println!("wrote {}", out.display());
    Ok(())
}
