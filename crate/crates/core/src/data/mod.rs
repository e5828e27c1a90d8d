//! Instances, schemas, CSV ingestion and batching.

mod csv_io;
mod hash;
mod synth;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{parse_dataset, read_dataset, write_dataset, PLANTED_COLUMN};
pub use hash::{fnv1a64, hash_feature};
pub use synth::{synth_generate, SynthConfig, SynthTruth, SyntheticData};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid synthetic config: {0}")]
    Synth(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("header: {0}")]
    Header(String),
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub vocab_size: usize,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, vocab_size: usize) -> Self {
        Self {
            name: name.into(),
            vocab_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub fields: Vec<FieldSpec>,
    pub label_column: String,
    pub domain_column: String,
    pub session_column: String,
}

impl DatasetSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self, DataError> {
        let schema = Self {
            fields,
            label_column: "label".into(),
            domain_column: "domain_id".into(),
            session_column: "session_id".into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.fields.is_empty() {
            return Err(DataError::Schema("no feature fields".into()));
        }
        let mut seen = BTreeSet::new();
        let reserved = [
            self.label_column.as_str(),
            self.domain_column.as_str(),
            self.session_column.as_str(),
            PLANTED_COLUMN,
        ];
        for f in &self.fields {
            if !seen.insert(f.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate field `{}`", f.name)));
            }
            if reserved.contains(&f.name.as_str()) {
                return Err(DataError::Schema(format!("field `{}` uses a reserved name", f.name)));
            }
            if f.vocab_size < 2 {
                return Err(DataError::Schema(format!(
                    "field `{}` has vocab {} (< 2)",
                    f.name, f.vocab_size
                )));
            }
            if f.vocab_size > u32::MAX as usize {
                return Err(DataError::Schema(format!("field `{}` vocab too large", f.name)));
            }
        }
        Ok(())
    }

    pub fn field_names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }
}

/// One labeled impression. `feature_ids` follows schema field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub label: u8,
    pub domain_id: usize,
    pub session_id: String,
    pub feature_ids: Vec<u32>,
    /// Generating cluster; only known for synthetic data.
    pub planted_cluster: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: DatasetSchema,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Largest domain id plus one (0 when empty).
    pub fn num_domains(&self) -> usize {
        self.instances
            .iter()
            .map(|i| i.domain_id + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn has_planted_clusters(&self) -> bool {
        !self.instances.is_empty() && self.instances.iter().all(|i| i.planted_cluster.is_some())
    }

    /// Keeps every `stride`-th instance, for quick looks at large files.
    pub fn subsample(&self, stride: usize) -> Dataset {
        let stride = stride.max(1);
        Dataset {
            schema: self.schema.clone(),
            instances: self.instances.iter().step_by(stride).cloned().collect(),
        }
    }
}

/// Deterministic mini-batches of instance indices; the last batch may be short.
#[derive(Debug, Clone)]
pub struct BatchIter {
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

pub fn batch_iter(len: usize, batch_size: usize, seed: u64, shuffle: bool) -> Result<BatchIter, DataError> {
    if batch_size == 0 {
        return Err(DataError::BatchSize);
    }
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(BatchIter {
        order,
        batch_size,
        cursor: 0,
    })
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(batch)
    }
}
