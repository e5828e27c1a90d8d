use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::metrics::MetricReport;
use crate::model::{ModelKind, ParameterCounts};
use crate::routing::ClusterCenters;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Instance-weighted mean training loss over the epoch.
    pub train_loss: f64,
    pub steps: usize,
    /// Training instances per group, summed over the epoch.
    pub train_histogram: Vec<usize>,
    /// Test instances per group at the end of the epoch.
    pub eval_histogram: Vec<usize>,
    pub mlp_flops: u64,
    /// Training wall-clock for this epoch, evaluation excluded.
    pub seconds: f64,
    pub cumulative_seconds: f64,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub report_version: u32,
    pub package_version: String,
    pub model_kind: ModelKind,
    pub parameters: ParameterCounts,
    pub epochs: Vec<EpochReport>,
    pub config: ExperimentConfig,
}

impl RunReport {
    pub fn new(config: ExperimentConfig, model_kind: ModelKind, parameters: ParameterCounts, epochs: Vec<EpochReport>) -> Self {
        Self {
            report_version: REPORT_VERSION,
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            model_kind,
            parameters,
            epochs,
            config,
        }
    }

    /// The report with wall-clock fields zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.epochs {
            e.seconds = 0.0;
            e.cumulative_seconds = 0.0;
        }
        out
    }
}

/// Centers and their pairwise cosines, as printed by `inspect-centers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentersReport {
    pub num_clusters: usize,
    pub dim: usize,
    pub batch_step: u64,
    pub centers: Vec<Vec<f64>>,
    pub cosine: Vec<Vec<f64>>,
}

impl CentersReport {
    pub fn new(centers: &ClusterCenters) -> Self {
        let k = centers.num_clusters();
        let cosine = centers.cosine_matrix();
        Self {
            num_clusters: k,
            dim: centers.dim(),
            batch_step: centers.batch_step,
            centers: (0..k).map(|j| centers.center(j).to_vec()).collect(),
            cosine: (0..k).map(|j| cosine.row(j).to_vec()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub auc: Option<f64>,
    pub gauc: Option<f64>,
    pub seconds: f64,
}
