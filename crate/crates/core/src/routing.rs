//! Dynamic routing of instance embeddings onto persistent cluster centers.
//!
//! Each batch inherits the centers left by the previous one, runs a fixed
//! number of refinement rounds (dot-product scores, row softmax, normalized
//! coefficient-weighted sums) and then blends the refined centers into the
//! inherited ones with an exponentially weighted moving average. Centers are
//! unit vectors at all times. Nothing in here produces gradients: routing is a
//! side computation that the optimizer never sees.
//!
//! Scores are raw dot products. Because centers are unit-norm this is the
//! cosine scaled by the embedding length, so longer embeddings give sharper
//! coefficient rows without changing their argmax.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{dot, l2_norm, DenseMatrix};

/// Weighted sums shorter than this keep the previous center.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoutingError {
    #[error("invalid routing config: {0}")]
    Config(String),
    #[error("routing needs at least one instance")]
    EmptyBatch,
    #[error("embedding width {found} does not match center width {expected}")]
    Width { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    pub num_clusters: usize,
    pub iterations: usize,
    pub ewma_beta: f64,
    /// Std of the Gaussian draw before normalization. Any positive value gives
    /// the same (uniform on the sphere) distribution of initial centers.
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            num_clusters: 3,
            iterations: 3,
            ewma_beta: 0.9,
            init_sigma: 1.0,
            seed: 0,
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self) -> Result<(), RoutingError> {
        if self.num_clusters == 0 {
            return Err(RoutingError::Config("need at least one cluster".into()));
        }
        if self.iterations == 0 {
            return Err(RoutingError::Config("need at least one iteration".into()));
        }
        if !(0.0..1.0).contains(&self.ewma_beta) {
            return Err(RoutingError::Config(format!(
                "ewma_beta {} outside [0, 1)",
                self.ewma_beta
            )));
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return Err(RoutingError::Config(format!(
                "init_sigma {} must be positive",
                self.init_sigma
            )));
        }
        Ok(())
    }
}

/// `K × dim` unit vectors plus the number of batches routed so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCenters {
    pub centers: DenseMatrix,
    pub batch_step: u64,
}

/// Row-stochastic `n × K` matrix of distribution coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionCoefficients {
    pub coefficients: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct RoutingOutcome {
    /// Coefficients from the last refinement round.
    pub coefficients: DistributionCoefficients,
    pub centers: ClusterCenters,
    /// Clusters whose update was skipped because the weighted sum vanished.
    pub degenerate: Vec<usize>,
}

impl ClusterCenters {
    /// Gaussian draws, one unit vector per cluster.
    pub fn init(config: &RoutingConfig, dim: usize) -> Result<Self, RoutingError> {
        config.validate()?;
        if dim == 0 {
            return Err(RoutingError::Config("center dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.init_sigma).expect("validated sigma");
        let mut centers = DenseMatrix::zeros(config.num_clusters, dim);
        for j in 0..config.num_clusters {
            // a zero draw has probability zero, but redraw rather than divide by it
            loop {
                let v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
                let n = l2_norm(&v);
                if n > DEGENERATE_NORM {
                    for (c, x) in centers.row_mut(j).iter_mut().zip(&v) {
                        *c = x / n;
                    }
                    break;
                }
            }
        }
        Ok(Self {
            centers,
            batch_step: 0,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn center(&self, j: usize) -> &[f64] {
        self.centers.row(j)
    }

    /// `K × K` matrix of pairwise cosines.
    pub fn cosine_matrix(&self) -> DenseMatrix {
        let k = self.num_clusters();
        let mut out = DenseMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                let ca = self.center(a);
                let cb = self.center(b);
                out.set(a, b, dot(ca, cb) / (l2_norm(ca) * l2_norm(cb)));
            }
        }
        out
    }

    /// `s_ij = c_j · e_i`
    pub fn similarity_scores(&self, embeddings: &DenseMatrix) -> Result<DenseMatrix, RoutingError> {
        self.check_width(embeddings)?;
        Ok(embeddings
            .matmul_t(&self.centers)
            .expect("widths checked"))
    }

    /// One batch of routing. Returns the coefficients of the final round and
    /// the EWMA-blended centers; `self` is left untouched.
    pub fn route_batch(
        &self,
        embeddings: &DenseMatrix,
        config: &RoutingConfig,
    ) -> Result<RoutingOutcome, RoutingError> {
        config.validate()?;
        if embeddings.rows() == 0 {
            return Err(RoutingError::EmptyBatch);
        }
        self.check_width(embeddings)?;
        if config.num_clusters != self.num_clusters() {
            return Err(RoutingError::Config(format!(
                "config has {} clusters, centers have {}",
                config.num_clusters,
                self.num_clusters()
            )));
        }

        let inherited = &self.centers;
        let mut current = inherited.clone();
        let mut degenerate = Vec::new();
        let mut coefficients = None;
        for _ in 0..config.iterations {
            let scores = embeddings.matmul_t(&current).expect("widths checked");
            let coeffs = distribution_coefficients(&scores);
            let (next, skipped) = recompute_centers(&coeffs, embeddings, &current);
            degenerate.extend(skipped);
            current = next;
            coefficients = Some(coeffs);
        }

        let beta = config.ewma_beta;
        let mut blended = DenseMatrix::zeros(self.num_clusters(), self.dim());
        for j in 0..self.num_clusters() {
            let mix: Vec<f64> = inherited
                .row(j)
                .iter()
                .zip(current.row(j))
                .map(|(&prev, &now)| beta * prev + (1.0 - beta) * now)
                .collect();
            let n = l2_norm(&mix);
            let row = blended.row_mut(j);
            if n < DEGENERATE_NORM {
                degenerate.push(j);
                row.copy_from_slice(inherited.row(j));
            } else {
                for (b, m) in row.iter_mut().zip(&mix) {
                    *b = m / n;
                }
            }
        }
        degenerate.sort_unstable();
        degenerate.dedup();
        if !degenerate.is_empty() {
            warn!(
                "routing batch {}: degenerate clusters {:?} kept their previous centers",
                self.batch_step, degenerate
            );
        }

        Ok(RoutingOutcome {
            coefficients: coefficients.expect("at least one iteration"),
            centers: ClusterCenters {
                centers: blended,
                batch_step: self.batch_step + 1,
            },
            degenerate,
        })
    }

    /// Coefficients against the current centers, without moving them.
    pub fn infer_route(&self, embeddings: &DenseMatrix) -> Result<DistributionCoefficients, RoutingError> {
        Ok(distribution_coefficients(&self.similarity_scores(embeddings)?))
    }

    fn check_width(&self, embeddings: &DenseMatrix) -> Result<(), RoutingError> {
        if embeddings.cols() != self.dim() {
            return Err(RoutingError::Width {
                expected: self.dim(),
                found: embeddings.cols(),
            });
        }
        Ok(())
    }
}

/// Row-wise softmax with max subtraction.
pub fn distribution_coefficients(scores: &DenseMatrix) -> DistributionCoefficients {
    let mut out = scores.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    DistributionCoefficients { coefficients: out }
}

/// `c_j = normalize(Σ_i r_ij e_i)`. Clusters whose sum is shorter than
/// [`DEGENERATE_NORM`] keep their row from `previous`; their indices are
/// returned alongside.
pub fn recompute_centers(
    coeffs: &DistributionCoefficients,
    embeddings: &DenseMatrix,
    previous: &DenseMatrix,
) -> (DenseMatrix, Vec<usize>) {
    let mut sums = coeffs
        .coefficients
        .t_matmul(embeddings)
        .expect("coefficient rows match embedding rows");
    let mut degenerate = Vec::new();
    for j in 0..sums.rows() {
        let n = l2_norm(sums.row(j));
        if n < DEGENERATE_NORM {
            degenerate.push(j);
            sums.row_mut(j).copy_from_slice(previous.row(j));
        } else {
            for v in sums.row_mut(j) {
                *v /= n;
            }
        }
    }
    (sums, degenerate)
}

impl DistributionCoefficients {
    pub fn rows(&self) -> usize {
        self.coefficients.rows()
    }

    pub fn num_clusters(&self) -> usize {
        self.coefficients.cols()
    }

    /// Hard assignment: argmax per row, ties to the lowest index.
    pub fn assign(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|r| {
                let row = self.coefficients.row(r);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}
