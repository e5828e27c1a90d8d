//! The classification stage: a shared MLP fused with one of several branch
//! MLPs per instance, plus the baselines that share its machinery.
//!
//! | kind             | group of an instance | network used for the group |
//! |------------------|----------------------|----------------------------|
//! | `adaptdhm`       | routed cluster       | `shared ⊗ branch[g]`       |
//! | `star_by_domain` | observed domain      | `shared ⊗ branch[g]`       |
//! | `shared_bottom`  | observed domain      | `branch[g]` (tower)        |
//! | `dnn`            | always 0             | `shared`                   |
//!
//! All kinds share one set of embedding tables. Fused kinds start their
//! branches at weight 1 and bias 0, so a fresh fused network is exactly the
//! shared one.

mod fusion;

use std::borrow::{Borrow, Cow};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fusion::{combine_weights, split_fused_grads};

use crate::data::{DatasetSchema, Instance};
use crate::nn::{
    sigmoid, sigmoid_ce, AdamConfig, AdamState, DenseMatrix, EmbeddingGrads, EmbeddingTable,
    EmbeddingTables, MlpGrads, MlpParams, NnError, Tape,
};
use crate::routing::{ClusterCenters, DistributionCoefficients, RoutingConfig, RoutingError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("unknown model kind `{0}` (expected adaptdhm, dnn, shared_bottom or star_by_domain)")]
    UnknownKind(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("instance {index} has {found} feature ids, schema has {expected} fields")]
    FeatureCount {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("instance {index} has domain {domain}, model covers {num_domains} domains")]
    DomainOutOfRange {
        index: usize,
        domain: usize,
        num_domains: usize,
    },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Adaptdhm,
    Dnn,
    SharedBottom,
    StarByDomain,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Adaptdhm => "adaptdhm",
            ModelKind::Dnn => "dnn",
            ModelKind::SharedBottom => "shared_bottom",
            ModelKind::StarByDomain => "star_by_domain",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "adaptdhm" => Ok(ModelKind::Adaptdhm),
            "dnn" => Ok(ModelKind::Dnn),
            "shared_bottom" => Ok(ModelKind::SharedBottom),
            "star_by_domain" | "star" => Ok(ModelKind::StarByDomain),
            other => Err(ModelError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden widths; a width-1 linear head is appended.
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    /// Std of the Normal embedding init. Routing scores are raw dot products,
    /// so this also sets how sharp the initial soft assignment is.
    pub embed_init_std: f64,
    pub routing: RoutingConfig,
    /// Fields whose embeddings feed routing; empty means all fields.
    pub routing_fields: Vec<String>,
    /// Number of observed domains, for the domain-keyed kinds.
    pub num_domains: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Keep branch parameters at their initial values.
    pub freeze_branches: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Adaptdhm,
            hidden: vec![64, 32, 16],
            embedding_dim: 8,
            embed_init_std: 1.0,
            routing: RoutingConfig::default(),
            routing_fields: Vec::new(),
            num_domains: 1,
            adam: AdamConfig::default(),
            seed: 0,
            freeze_branches: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embedding_dim == 0 {
            return Err(ModelError::Config("embedding_dim must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(ModelError::Config("hidden widths must be positive".into()));
        }
        if !(self.embed_init_std >= 0.0 && self.embed_init_std.is_finite()) {
            return Err(ModelError::Config("embed_init_std must be non-negative".into()));
        }
        if !(self.adam.learning_rate > 0.0 && self.adam.learning_rate.is_finite()) {
            return Err(ModelError::Config("learning rate must be positive".into()));
        }
        match self.kind {
            ModelKind::Adaptdhm => self.routing.validate()?,
            ModelKind::SharedBottom | ModelKind::StarByDomain if self.num_domains == 0 => {
                return Err(ModelError::Config(format!(
                    "{} needs at least one domain",
                    self.kind
                )))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Adam states for every parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub embeddings: Vec<AdamState>,
    pub shared: Option<AdamState>,
    pub branches: Vec<AdamState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiBranchModel {
    pub config: ModelConfig,
    pub schema: DatasetSchema,
    pub embeddings: EmbeddingTables,
    pub shared: Option<MlpParams>,
    pub branches: Vec<MlpParams>,
    pub centers: Option<ClusterCenters>,
    pub routing_field_indices: Vec<usize>,
    pub optimizer: OptimizerState,
    pub steps: u64,
}

/// Gradients for one batch, grouped like the model's parameters. A branch
/// entry is `None` when no instance of the batch reached it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub embeddings: EmbeddingGrads,
    pub shared: Option<MlpGrads>,
    pub branches: Vec<Option<MlpGrads>>,
}

impl ModelGrads {
    pub fn is_zero(&self) -> bool {
        self.embeddings.is_zero()
            && self.shared.as_ref().is_none_or(MlpGrads::is_zero)
            && self.branches.iter().flatten().all(MlpGrads::is_zero)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStepReport {
    pub loss: f64,
    /// Instances per group (cluster, domain, or the single DNN group).
    pub cluster_histogram: Vec<usize>,
    pub batch_step: u64,
    pub mlp_flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub groups: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    /// Parameters of a single MLP copy (hidden layers plus head).
    pub per_mlp: usize,
    pub mlp_copies: usize,
    pub mlp_total: usize,
    pub embeddings: usize,
    pub total: usize,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds any of the four model kinds over `schema`.
pub fn build_baseline(kind: &str, config: &ModelConfig, schema: &DatasetSchema) -> Result<MultiBranchModel, ModelError> {
    let config = ModelConfig {
        kind: kind.parse()?,
        ..config.clone()
    };
    MultiBranchModel::new(config, schema)
}

struct GroupPass<'a> {
    group: usize,
    rows: Vec<usize>,
    net: Cow<'a, MlpParams>,
    tape: Tape,
    logits: DenseMatrix,
}

impl MultiBranchModel {
    pub fn new(config: ModelConfig, schema: &DatasetSchema) -> Result<Self, ModelError> {
        config.validate()?;
        schema
            .validate()
            .map_err(|e| ModelError::Config(e.to_string()))?;

        // Separate streams keep embedding and MLP draws identical across kinds.
        let mut emb_rng = rng_stream(config.seed, 1);
        let tables = schema
            .fields
            .iter()
            .map(|f| {
                EmbeddingTable::new(
                    f.name.clone(),
                    f.vocab_size,
                    config.embedding_dim,
                    config.embed_init_std,
                    &mut emb_rng,
                )
            })
            .collect();
        let embeddings = EmbeddingTables::new(tables);
        let all_fields: Vec<usize> = (0..embeddings.len()).collect();
        let input_width = embeddings.width(&all_fields);

        let mut mlp_rng = rng_stream(config.seed, 2);
        let (shared, branches) = match config.kind {
            ModelKind::Dnn => (Some(MlpParams::new(input_width, &config.hidden, &mut mlp_rng)), vec![]),
            ModelKind::SharedBottom => (
                None,
                (0..config.num_domains)
                    .map(|_| MlpParams::new(input_width, &config.hidden, &mut mlp_rng))
                    .collect(),
            ),
            ModelKind::Adaptdhm | ModelKind::StarByDomain => {
                let shared = MlpParams::new(input_width, &config.hidden, &mut mlp_rng);
                let n = if config.kind == ModelKind::Adaptdhm {
                    config.routing.num_clusters
                } else {
                    config.num_domains
                };
                let branches = (0..n).map(|_| shared.filled_like(1.0, 0.0)).collect();
                (Some(shared), branches)
            }
        };

        let (centers, routing_field_indices) = if config.kind == ModelKind::Adaptdhm {
            let indices = if config.routing_fields.is_empty() {
                all_fields
            } else {
                embeddings.field_indices(&config.routing_fields)?
            };
            let centers = ClusterCenters::init(&config.routing, embeddings.width(&indices))?;
            (Some(centers), indices)
        } else {
            (None, vec![])
        };

        let optimizer = OptimizerState {
            embeddings: embeddings
                .tables
                .iter()
                .map(|t| AdamState::for_table(config.adam, &t.vectors))
                .collect(),
            shared: shared.as_ref().map(|s| AdamState::for_mlp(config.adam, s)),
            branches: branches
                .iter()
                .map(|b| AdamState::for_mlp(config.adam, b))
                .collect(),
        };

        Ok(Self {
            config,
            schema: schema.clone(),
            embeddings,
            shared,
            branches,
            centers,
            routing_field_indices,
            optimizer,
            steps: 0,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn num_groups(&self) -> usize {
        match self.config.kind {
            ModelKind::Dnn => 1,
            _ => self.branches.len(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.embeddings.width(&(0..self.embeddings.len()).collect::<Vec<_>>())
    }

    pub fn routing_width(&self) -> usize {
        self.embeddings.width(&self.routing_field_indices)
    }

    /// The network that scores instances of group `g`.
    pub fn effective_network(&self, group: usize) -> Result<Cow<'_, MlpParams>, ModelError> {
        match self.config.kind {
            ModelKind::Dnn => Ok(Cow::Borrowed(self.shared.as_ref().expect("dnn has a shared mlp"))),
            ModelKind::SharedBottom => Ok(Cow::Borrowed(&self.branches[group])),
            ModelKind::Adaptdhm | ModelKind::StarByDomain => Ok(Cow::Owned(combine_weights(
                self.shared.as_ref().expect("fused kinds have a shared mlp"),
                &self.branches[group],
            )?)),
        }
    }

    pub fn count_parameters(&self) -> ParameterCounts {
        let per_mlp = self
            .shared
            .as_ref()
            .or(self.branches.first())
            .map_or(0, MlpParams::num_parameters);
        let mlp_copies = self.shared.is_some() as usize + self.branches.len();
        let mlp_total = self.shared.as_ref().map_or(0, MlpParams::num_parameters)
            + self.branches.iter().map(MlpParams::num_parameters).sum::<usize>();
        let embeddings = self.embeddings.num_parameters();
        ParameterCounts {
            per_mlp,
            mlp_copies,
            mlp_total,
            embeddings,
            total: mlp_total + embeddings,
        }
    }

    fn check_instances<B: Borrow<Instance>>(&self, instances: &[B]) -> Result<(), ModelError> {
        let expected = self.schema.fields.len();
        for (index, inst) in instances.iter().enumerate() {
            let inst = inst.borrow();
            if inst.feature_ids.len() != expected {
                return Err(ModelError::FeatureCount {
                    index,
                    expected,
                    found: inst.feature_ids.len(),
                });
            }
            if matches!(self.config.kind, ModelKind::SharedBottom | ModelKind::StarByDomain)
                && inst.domain_id >= self.branches.len()
            {
                return Err(ModelError::DomainOutOfRange {
                    index,
                    domain: inst.domain_id,
                    num_domains: self.branches.len(),
                });
            }
        }
        Ok(())
    }

    /// Concatenated embeddings of the routing fields, one row per instance.
    pub fn routing_embeddings<B: Borrow<Instance>>(&self, instances: &[B]) -> Result<DenseMatrix, ModelError> {
        Ok(self.embeddings.lookup_batch(
            &self.routing_field_indices,
            instances.iter().map(|i| i.borrow().feature_ids.as_slice()),
        )?)
    }

    fn input_embeddings<B: Borrow<Instance>>(&self, instances: &[B]) -> Result<DenseMatrix, ModelError> {
        let all: Vec<usize> = (0..self.embeddings.len()).collect();
        Ok(self
            .embeddings
            .lookup_batch(&all, instances.iter().map(|i| i.borrow().feature_ids.as_slice()))?)
    }

    /// Read-only routing against the current centers.
    pub fn infer_route<B: Borrow<Instance>>(&self, instances: &[B]) -> Result<DistributionCoefficients, ModelError> {
        let centers = self
            .centers
            .as_ref()
            .ok_or_else(|| ModelError::Config(format!("{} has no cluster centers", self.kind())))?;
        Ok(centers.infer_route(&self.routing_embeddings(instances)?)?)
    }

    fn domain_groups<B: Borrow<Instance>>(&self, instances: &[B]) -> Vec<usize> {
        match self.config.kind {
            ModelKind::Dnn => vec![0; instances.len()],
            _ => instances.iter().map(|i| i.borrow().domain_id).collect(),
        }
    }

    fn forward_groups<'a>(&'a self, input: &DenseMatrix, groups: &[usize]) -> Result<Vec<GroupPass<'a>>, ModelError> {
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (row, &g) in groups.iter().enumerate() {
            members.entry(g).or_default().push(row);
        }
        members
            .into_iter()
            .map(|(group, rows)| {
                let net = self.effective_network(group)?;
                let (logits, tape) = net.forward(&input.select_rows(&rows))?;
                Ok(GroupPass {
                    group,
                    rows,
                    net,
                    tape,
                    logits,
                })
            })
            .collect()
    }

    /// Mean cross-entropy over the whole batch and its gradients for a fixed
    /// group assignment. `loss_weight` scales the gradients only.
    pub fn loss_and_grads<B: Borrow<Instance>>(
        &self,
        instances: &[B],
        groups: &[usize],
        loss_weight: f64,
    ) -> Result<(f64, ModelGrads), ModelError> {
        if instances.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        self.check_instances(instances)?;
        let input = self.input_embeddings(instances)?;
        let passes = self.forward_groups(&input, groups)?;

        let n = instances.len();
        let mut logits = DenseMatrix::zeros(n, 1);
        for pass in &passes {
            for (k, &row) in pass.rows.iter().enumerate() {
                logits.set(row, 0, pass.logits.get(k, 0));
            }
        }
        let labels = DenseMatrix::from_vec(
            n,
            1,
            instances.iter().map(|i| i.borrow().label as f64).collect(),
        )?;
        let (loss, mut logit_grads) = sigmoid_ce(&logits, &labels)?;
        if loss_weight != 1.0 {
            for g in logit_grads.values_mut() {
                *g *= loss_weight;
            }
        }

        let mut shared_grads = self.shared.as_ref().map(MlpGrads::zeros_like);
        let mut branch_grads: Vec<Option<MlpGrads>> = vec![None; self.branches.len()];
        let mut input_grad = DenseMatrix::zeros(n, input.cols());
        for pass in &passes {
            let upstream = logit_grads.select_rows(&pass.rows);
            let (fused, dx) = pass.net.backward(&pass.tape, &upstream)?;
            match self.config.kind {
                ModelKind::Dnn => shared_grads.as_mut().expect("shared").add_assign(&fused)?,
                ModelKind::SharedBottom => branch_grads[pass.group] = Some(fused),
                ModelKind::Adaptdhm | ModelKind::StarByDomain => {
                    let shared = self.shared.as_ref().expect("shared");
                    let (to_shared, to_branch) =
                        split_fused_grads(&fused, shared, &self.branches[pass.group])?;
                    shared_grads.as_mut().expect("shared").add_assign(&to_shared)?;
                    branch_grads[pass.group] = Some(to_branch);
                }
            }
            for (k, &row) in pass.rows.iter().enumerate() {
                input_grad.row_mut(row).copy_from_slice(dx.row(k));
            }
        }

        let all: Vec<usize> = (0..self.embeddings.len()).collect();
        let mut embedding_grads = EmbeddingGrads::new(self.embeddings.len());
        for (row, inst) in instances.iter().enumerate() {
            self.embeddings.accumulate_grad(
                &all,
                &inst.borrow().feature_ids,
                input_grad.row(row),
                &mut embedding_grads,
            )?;
        }

        Ok((
            loss,
            ModelGrads {
                embeddings: embedding_grads,
                shared: shared_grads,
                branches: branch_grads,
            },
        ))
    }

    pub fn train_step<B: Borrow<Instance>>(&mut self, batch: &[B]) -> Result<TrainStepReport, ModelError> {
        self.train_step_weighted(batch, 1.0)
    }

    /// One optimization step: route (no gradients), assign, fused
    /// forward/backward, one Adam step per touched parameter group.
    /// `loss_weight` scales the classification gradient.
    pub fn train_step_weighted<B: Borrow<Instance>>(
        &mut self,
        batch: &[B],
        loss_weight: f64,
    ) -> Result<TrainStepReport, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        self.check_instances(batch)?;

        let (groups, new_centers) = match self.config.kind {
            ModelKind::Adaptdhm => {
                let embeddings = self.routing_embeddings(batch)?;
                let centers = self.centers.as_ref().expect("adaptdhm has centers");
                let outcome = centers.route_batch(&embeddings, &self.config.routing)?;
                (outcome.coefficients.assign(), Some(outcome.centers))
            }
            _ => (self.domain_groups(batch), None),
        };

        let (loss, grads) = self.loss_and_grads(batch, &groups, loss_weight)?;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                step: self.steps,
                detail: format!("loss {loss} on a batch of {}", batch.len()),
            });
        }

        if let Some(c) = new_centers {
            self.centers = Some(c);
        }
        self.apply_grads(&grads)?;
        self.steps += 1;

        let mut histogram = vec![0; self.num_groups()];
        for &g in &groups {
            histogram[g] += 1;
        }
        let touched = histogram.iter().filter(|&&c| c > 0).count();
        Ok(TrainStepReport {
            loss,
            mlp_flops: self.step_flops(batch.len(), touched),
            cluster_histogram: histogram,
            batch_step: self.steps,
        })
    }

    /// Rough MLP cost of a training step: forward and backward matmuls per
    /// instance, plus per touched group the Adam update and, for fused kinds,
    /// building the fused weights and splitting their gradient.
    pub fn step_flops(&self, batch_size: usize, touched_groups: usize) -> u64 {
        let weights: usize = self
            .shared
            .as_ref()
            .or(self.branches.first())
            .map_or(0, |m| m.layers.iter().map(|l| l.weight.len()).sum());
        let per_mlp = self.count_parameters().per_mlp as u64;
        let per_instance = 6 * weights as u64;
        let per_group = match self.config.kind {
            ModelKind::Dnn => 0,
            ModelKind::SharedBottom => 10 * per_mlp,
            ModelKind::Adaptdhm | ModelKind::StarByDomain => 14 * per_mlp,
        };
        let shared = if self.shared.is_some() { 10 * per_mlp } else { 0 };
        batch_size as u64 * per_instance + touched_groups as u64 * per_group + shared
    }

    pub fn apply_grads(&mut self, grads: &ModelGrads) -> Result<(), ModelError> {
        if let (Some(shared), Some(g)) = (self.shared.as_mut(), grads.shared.as_ref()) {
            self.optimizer
                .shared
                .as_mut()
                .expect("state for shared mlp")
                .apply_mlp(shared, g)?;
        }
        if !self.config.freeze_branches {
            for (j, g) in grads.branches.iter().enumerate() {
                if let Some(g) = g {
                    self.optimizer.branches[j].apply_mlp(&mut self.branches[j], g)?;
                }
            }
        }
        for (t, rows) in grads.embeddings.rows.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            self.optimizer.embeddings[t].apply_rows(&mut self.embeddings.tables[t].vectors, rows)?;
        }
        Ok(())
    }

    /// Probabilities in input order, with the group each instance was scored
    /// by. Never mutates the model.
    pub fn predict_detailed<B: Borrow<Instance>>(&self, instances: &[B]) -> Result<Prediction, ModelError> {
        if instances.is_empty() {
            return Ok(Prediction {
                probabilities: vec![],
                groups: vec![],
            });
        }
        self.check_instances(instances)?;
        let groups = match self.config.kind {
            ModelKind::Adaptdhm => self.infer_route(instances)?.assign(),
            _ => self.domain_groups(instances),
        };
        let input = self.input_embeddings(instances)?;
        let passes = self.forward_groups(&input, &groups)?;
        let mut probabilities = vec![0.0; instances.len()];
        for pass in &passes {
            for (k, &row) in pass.rows.iter().enumerate() {
                probabilities[row] = sigmoid(pass.logits.get(k, 0));
            }
        }
        Ok(Prediction {
            probabilities,
            groups,
        })
    }

    pub fn predict<B: Borrow<Instance>>(&self, instances: &[B]) -> Result<Vec<f64>, ModelError> {
        Ok(self.predict_detailed(instances)?.probabilities)
    }

    /// [`predict_detailed`](Self::predict_detailed) split over `threads`
    /// scoped threads. Rows are scored independently, so the result is
    /// identical to the single-threaded call.
    pub fn predict_parallel<B: Borrow<Instance> + Sync>(
        &self,
        instances: &[B],
        threads: usize,
    ) -> Result<Prediction, ModelError> {
        if threads <= 1 || instances.len() < 2 * threads {
            return self.predict_detailed(instances);
        }
        let chunk = instances.len().div_ceil(threads);
        let parts: Vec<Result<Prediction, ModelError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = instances
                .chunks(chunk)
                .map(|part| scope.spawn(move || self.predict_detailed(part)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("prediction thread panicked"))
                .collect()
        });
        let mut out = Prediction {
            probabilities: Vec::with_capacity(instances.len()),
            groups: Vec::with_capacity(instances.len()),
        };
        for part in parts {
            let part = part?;
            out.probabilities.extend(part.probabilities);
            out.groups.extend(part.groups);
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.embeddings.all_finite()
            && self.shared.as_ref().is_none_or(MlpParams::all_finite)
            && self.branches.iter().all(MlpParams::all_finite)
    }
}
