//! Small models, random batches and the finite-difference harness.

use std::path::PathBuf;

use adaptdhm::cli::{DataSource, ExperimentConfig};
use adaptdhm::data::{DatasetSchema, FieldSpec, Instance, SynthConfig};
use adaptdhm::model::{ModelConfig, ModelGrads, ModelKind, MultiBranchModel};
use adaptdhm::routing::RoutingConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn tiny_schema() -> DatasetSchema {
    DatasetSchema::new(vec![
        FieldSpec::new("f0", 7),
        FieldSpec::new("f1", 5),
        FieldSpec::new("f2", 6),
    ])
    .unwrap()
}

pub fn tiny_config(kind: ModelKind, k: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        kind,
        hidden: vec![5, 3],
        embedding_dim: 3,
        routing: RoutingConfig {
            num_clusters: k,
            seed,
            ..RoutingConfig::default()
        },
        num_domains: 3,
        seed,
        ..ModelConfig::default()
    }
}

pub fn random_batch(schema: &DatasetSchema, n: usize, num_domains: usize, rng: &mut ChaCha8Rng) -> Vec<Instance> {
    (0..n)
        .map(|i| Instance {
            label: rng.random_range(0..2),
            domain_id: rng.random_range(0..num_domains),
            session_id: format!("s{}", i / 5),
            feature_ids: schema
                .fields
                .iter()
                .map(|f| rng.random_range(0..f.vocab_size) as u32)
                .collect(),
            planted_cluster: None,
        })
        .collect()
}

/// Moves branches and biases away from their identity init so every factor of
/// the fused product matters.
pub fn perturb(model: &mut MultiBranchModel, rng: &mut ChaCha8Rng) {
    let noise = Normal::new(0.0, 0.3).unwrap();
    for branch in &mut model.branches {
        for layer in &mut branch.layers {
            layer.weight.values_mut().iter_mut().for_each(|w| *w = 1.0 + noise.sample(rng));
            layer.bias.values_mut().iter_mut().for_each(|b| *b = noise.sample(rng));
        }
    }
    if let Some(shared) = model.shared.as_mut() {
        for layer in &mut shared.layers {
            layer.bias.values_mut().iter_mut().for_each(|b| *b = noise.sample(rng));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coord {
    SharedWeight { layer: usize, index: usize },
    SharedBias { layer: usize, index: usize },
    BranchWeight { branch: usize, layer: usize, index: usize },
    BranchBias { branch: usize, layer: usize, index: usize },
    Embedding { table: usize, row: usize, col: usize },
}

pub fn param_mut(model: &mut MultiBranchModel, c: Coord) -> &mut f64 {
    match c {
        Coord::SharedWeight { layer, index } => &mut model.shared.as_mut().unwrap().layers[layer].weight.values_mut()[index],
        Coord::SharedBias { layer, index } => &mut model.shared.as_mut().unwrap().layers[layer].bias.values_mut()[index],
        Coord::BranchWeight { branch, layer, index } => &mut model.branches[branch].layers[layer].weight.values_mut()[index],
        Coord::BranchBias { branch, layer, index } => &mut model.branches[branch].layers[layer].bias.values_mut()[index],
        Coord::Embedding { table, row, col } => {
            let dim = model.embeddings.tables[table].vectors.cols();
            &mut model.embeddings.tables[table].vectors.values_mut()[row * dim + col]
        }
    }
}

pub fn analytic(grads: &ModelGrads, c: Coord) -> f64 {
    match c {
        Coord::SharedWeight { layer, index } => grads.shared.as_ref().unwrap().layers[layer].weight.values()[index],
        Coord::SharedBias { layer, index } => grads.shared.as_ref().unwrap().layers[layer].bias.values()[index],
        Coord::BranchWeight { branch, layer, index } => grads.branches[branch]
            .as_ref()
            .map_or(0.0, |g| g.layers[layer].weight.values()[index]),
        Coord::BranchBias { branch, layer, index } => grads.branches[branch]
            .as_ref()
            .map_or(0.0, |g| g.layers[layer].bias.values()[index]),
        Coord::Embedding { table, row, col } => grads.embeddings.rows[table].get(&row).map_or(0.0, |v| v[col]),
    }
}

/// Random coordinates spread over every parameter kind; embedding rows are
/// drawn from ids present in `batch`.
pub fn sample_coords(model: &MultiBranchModel, batch: &[Instance], n: usize, rng: &mut ChaCha8Rng) -> Vec<Coord> {
    let shared = model.shared.as_ref().unwrap();
    let depth = shared.layers.len();
    (0..n)
        .map(|i| {
            let layer = rng.random_range(0..depth);
            let w_len = shared.layers[layer].weight.len();
            let b_len = shared.layers[layer].bias.len();
            match i % 5 {
                0 => Coord::SharedWeight {
                    layer,
                    index: rng.random_range(0..w_len),
                },
                1 => Coord::SharedBias {
                    layer,
                    index: rng.random_range(0..b_len),
                },
                2 => Coord::BranchWeight {
                    branch: rng.random_range(0..model.branches.len()),
                    layer,
                    index: rng.random_range(0..w_len),
                },
                3 => Coord::BranchBias {
                    branch: rng.random_range(0..model.branches.len()),
                    layer,
                    index: rng.random_range(0..b_len),
                },
                _ => {
                    let inst = &batch[rng.random_range(0..batch.len())];
                    let table = rng.random_range(0..inst.feature_ids.len());
                    Coord::Embedding {
                        table,
                        row: inst.feature_ids[table] as usize,
                        col: rng.random_range(0..model.embeddings.tables[table].vectors.cols()),
                    }
                }
            }
        })
        .collect()
}

/// Central difference of the batch loss along one coordinate, groups fixed.
pub fn finite_difference(model: &MultiBranchModel, batch: &[Instance], groups: &[usize], c: Coord, h: f64) -> f64 {
    let mut probe = model.clone();
    let x = *param_mut(&mut probe, c);
    *param_mut(&mut probe, c) = x + h;
    let up = probe.loss_and_grads(batch, groups, 1.0).unwrap().0;
    *param_mut(&mut probe, c) = x - h;
    let down = probe.loss_and_grads(batch, groups, 1.0).unwrap().0;
    (up - down) / (2.0 * h)
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// The calibrated synthetic benchmark: default generator (three planted
/// clusters, six domains, 100k/20k instances), batch 256, three epochs.
pub fn benchmark_config(kind: ModelKind, k: usize, seed: u64, epochs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        batch_size: 256,
        epochs,
        ..ExperimentConfig::default()
    };
    cfg.model.kind = kind;
    cfg.model.routing.num_clusters = k;
    cfg.set_seed(seed, false);
    cfg
}

/// A few thousand synthetic instances, fast enough for command tests.
pub fn small_experiment(seed: u64, out_dir: PathBuf) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        batch_size: 128,
        epochs: 2,
        out_dir,
        data: DataSource::Synthetic(SynthConfig {
            n_train: 3_000,
            n_test: 1_000,
            ..SynthConfig::default()
        }),
        ..ExperimentConfig::default()
    };
    cfg.model.hidden = vec![16, 8];
    cfg.set_seed(seed, false);
    cfg
}
