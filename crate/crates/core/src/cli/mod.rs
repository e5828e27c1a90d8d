//! Experiment orchestration behind the `adaptdhm` binary.
//!
//! Every `cmd_*` function writes its outputs under the configured directory
//! and also returns them, so tests can call the commands directly.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{insert_pair, parse_pairs, DataSource, ExperimentConfig, KEYS};
pub use report::{CentersReport, EpochReport, RunReport, SweepRow, REPORT_VERSION};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::data::{
    batch_iter, parse_dataset, synth_generate, write_dataset, DataError, Dataset, DatasetSchema, SynthConfig,
};
use crate::metrics::{EvalBatch, MetricError, MetricReport};
use crate::model::{ModelError, ModelKind, MultiBranchModel};

pub const MANIFEST_FORMAT: &str = "adaptdhm-dataset";
pub const MANIFEST_VERSION: u32 = 1;
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.json";
pub const EVAL_FILE: &str = "eval.json";
pub const CENTERS_FILE: &str = "centers.json";
pub const SWEEP_FILE: &str = "sweep_k.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("dataset schema {found:?} does not match the checkpoint schema {expected:?}")]
    SchemaMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("`{0}` checkpoints have no cluster centers; inspect-centers needs an adaptdhm model")]
    NotAdaptdhm(ModelKind),
}

impl From<crate::routing::RoutingError> for CliError {
    fn from(e: crate::routing::RoutingError) -> Self {
        CliError::Model(e.into())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Written next to generated CSVs so training can rebuild the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub synth_config: SynthConfig,
    pub schema: DatasetSchema,
    pub train_file: String,
    pub test_file: String,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub num_domains: usize,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData, CliError> {
    let (train, test, num_domains) = match &cfg.data {
        DataSource::Synthetic(s) => {
            let data = synth_generate(s)?;
            (data.train, data.test, s.num_domains)
        }
        DataSource::Dir { path } => {
            let manifest_path = path.join(MANIFEST_FILE);
            let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
            let manifest: Manifest = serde_json::from_str(&text)?;
            if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
                return Err(CliError::Config(format!(
                    "{}: unsupported manifest {} v{}",
                    manifest_path.display(),
                    manifest.format,
                    manifest.version
                )));
            }
            let train = parse_dataset(path.join(&manifest.train_file), &manifest.schema)?;
            let test = parse_dataset(path.join(&manifest.test_file), &manifest.schema)?;
            (train, test, manifest.synth_config.num_domains)
        }
        DataSource::Files {
            train,
            test,
            fields,
            num_domains,
        } => {
            let schema = DatasetSchema::new(fields.clone())?;
            let train = parse_dataset(train, &schema)?;
            let test = parse_dataset(test, &schema)?;
            let observed = train.num_domains().max(test.num_domains()).max(1);
            (train, test, num_domains.unwrap_or(observed).max(observed))
        }
    };
    Ok(LoadedData {
        train: train.subsample(cfg.subsample),
        test,
        num_domains,
    })
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Manifest, CliError> {
    let DataSource::Synthetic(synth) = &cfg.data else {
        return Err(CliError::Config("generate needs a synthetic data source".into()));
    };
    let data = synth_generate(synth)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    for (name, ds) in [(TRAIN_FILE, &data.train), (TEST_FILE, &data.test)] {
        let path = out.join(name);
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_dataset(std::io::BufWriter::new(file), ds)?;
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        synth_config: synth.clone(),
        schema: data.train.schema.clone(),
        train_file: TRAIN_FILE.into(),
        test_file: TEST_FILE.into(),
        n_train: data.train.len(),
        n_test: data.test.len(),
    };
    write_file(&out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    info!("wrote {} train and {} test rows to {}", manifest.n_train, manifest.n_test, out.display());
    Ok(manifest)
}

/// Scores `dataset` and summarizes. Purity and ARI are included for adaptdhm
/// models on data with planted clusters.
pub fn evaluate(model: &MultiBranchModel, dataset: &Dataset, threads: usize) -> Result<(MetricReport, Vec<usize>), CliError> {
    if model.schema.fields != dataset.schema.fields {
        return Err(CliError::SchemaMismatch {
            expected: model.schema.field_names(),
            found: dataset.schema.field_names(),
        });
    }
    let prediction = model.predict_parallel(&dataset.instances, threads)?;
    let labels: Vec<u8> = dataset.instances.iter().map(|i| i.label).collect();
    let sessions: Vec<&str> = dataset.instances.iter().map(|i| i.session_id.as_str()).collect();
    let domains: Vec<usize> = dataset.instances.iter().map(|i| i.domain_id).collect();
    let planted: Option<Vec<usize>> = (model.kind() == ModelKind::Adaptdhm && dataset.has_planted_clusters())
        .then(|| dataset.instances.iter().filter_map(|i| i.planted_cluster).collect());
    let report = MetricReport::compute(&EvalBatch {
        scores: &prediction.probabilities,
        labels: &labels,
        sessions: &sessions,
        domains: &domains,
        clusters: planted.as_deref().map(|p| (prediction.groups.as_slice(), p)),
    })?;
    let mut histogram = vec![0; model.num_groups()];
    for &g in &prediction.groups {
        histogram[g] += 1;
    }
    Ok((report, histogram))
}

pub struct TrainOutcome {
    pub model: MultiBranchModel,
    pub report: RunReport,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ ((epoch as u64 + 1) << 32)
}

/// Trains on already loaded data and evaluates on the test split after every
/// epoch. Nothing is written to disk.
pub fn run_train(cfg: &ExperimentConfig, data: &LoadedData) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(CliError::Config("training set is empty".into()));
    }
    let mut model_cfg = cfg.model.clone();
    model_cfg.num_domains = data.num_domains;
    let mut model = MultiBranchModel::new(model_cfg, &data.train.schema)?;
    let mut cumulative = 0.0;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epoch_start = Instant::now();
        let mut loss_sum = 0.0;
        let mut steps = 0;
        let mut flops = 0u64;
        let mut histogram = vec![0; model.num_groups()];
        for indices in batch_iter(data.train.len(), cfg.batch_size, epoch_seed(cfg.seed, epoch), true)? {
            let batch: Vec<_> = indices.iter().map(|&i| &data.train.instances[i]).collect();
            let step = model.train_step(&batch)?;
            loss_sum += step.loss * batch.len() as f64;
            steps += 1;
            flops += step.mlp_flops;
            for (h, c) in histogram.iter_mut().zip(&step.cluster_histogram) {
                *h += c;
            }
        }
        let seconds = epoch_start.elapsed().as_secs_f64();
        cumulative += seconds;
        let (metrics, eval_histogram) = evaluate(&model, &data.test, cfg.threads)?;
        let train_loss = loss_sum / data.train.len() as f64;
        info!(
            "epoch {} loss {:.5} auc {} gauc {} ({:.1}s)",
            epoch + 1,
            train_loss,
            metrics.auc.map_or("n/a".into(), |v| format!("{v:.5}")),
            metrics.gauc.map_or("n/a".into(), |v| format!("{v:.5}")),
            seconds
        );
        epochs.push(EpochReport {
            epoch: epoch + 1,
            train_loss,
            steps,
            train_histogram: histogram,
            eval_histogram,
            mlp_flops: flops,
            seconds,
            cumulative_seconds: cumulative,
            metrics,
        });
    }
    let report = RunReport::new(cfg.clone(), model.kind(), model.count_parameters(), epochs);
    Ok(TrainOutcome { model, report })
}

/// Loads data, trains, and writes the checkpoint and report.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome, CliError> {
    let data = load_data(cfg)?;
    let outcome = run_train(cfg, &data)?;
    save_checkpoint(&outcome.model, ensure_dir(&cfg.out_dir)?.join(CHECKPOINT_FILE))?;
    write_file(
        &cfg.out_dir.join(REPORT_FILE),
        serde_json::to_string_pretty(&outcome.report)?,
    )?;
    Ok(outcome)
}

fn ensure_dir(dir: &Path) -> Result<&Path, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir)
}

/// Evaluates a checkpoint on the test split of the configured data.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<MetricReport, CliError> {
    let model = load_checkpoint(checkpoint)?;
    let data = load_data(cfg)?;
    let (report, _) = evaluate(&model, &data.test, cfg.threads)?;
    write_file(&cfg.out_dir.join(EVAL_FILE), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

pub fn inspect_centers(model: &MultiBranchModel) -> Result<CentersReport, CliError> {
    let centers = model.centers.as_ref().ok_or(CliError::NotAdaptdhm(model.kind()))?;
    Ok(CentersReport::new(centers))
}

pub fn cmd_inspect_centers(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<CentersReport, CliError> {
    let report = inspect_centers(&load_checkpoint(checkpoint)?)?;
    write_file(&cfg.out_dir.join(CENTERS_FILE), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Trains one adaptdhm model per K on the same data and seed; AUC and GAUC
/// are from the last epoch.
pub fn run_sweep_k(cfg: &ExperimentConfig, data: &LoadedData) -> Result<Vec<SweepRow>, CliError> {
    if cfg.k_list.is_empty() {
        return Err(CliError::Config("k_list is empty".into()));
    }
    cfg.k_list
        .iter()
        .map(|&k| {
            let mut run = cfg.clone();
            run.model.kind = ModelKind::Adaptdhm;
            run.model.routing.num_clusters = k;
            let start = Instant::now();
            let outcome = run_train(&run, data)?;
            let last = outcome.report.epochs.last().expect("at least one epoch");
            Ok(SweepRow {
                k,
                auc: last.metrics.auc,
                gauc: last.metrics.gauc,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn cmd_sweep_k(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, CliError> {
    let data = load_data(cfg)?;
    let rows = run_sweep_k(cfg, &data)?;
    let path = ensure_dir(&cfg.out_dir)?.join(SWEEP_FILE);
    let mut wtr = csv::Writer::from_path(&path)?;
    for row in &rows {
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(io_err(&path))?;
    Ok(rows)
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<Result<Vec<SweepRow>, _>>()?)
}
