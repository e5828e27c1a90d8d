//! Synthetic multi-domain click data with planted latent clusters.
//!
//! Every session belongs to one latent cluster and one observed domain. Domains
//! mix clusters: domain `m` draws its sessions from cluster `m mod K` with
//! probability `domain_purity` and uniformly otherwise, so the observed domain
//! id is only a noisy proxy for the cluster.
//!
//! Two kinds of fields are emitted:
//!
//! * profile fields carry the cluster. Each cluster owns one "home" id per
//!   field; a session takes the home id with probability
//!   `separation / (1 + separation)` and a uniform id otherwise. Profile ids
//!   are fixed for the whole session.
//! * content fields are drawn uniformly per impression and drive the label.
//!
//! Labels follow a logistic model whose weights are drawn independently per
//! cluster, so the same content ids have different click rates in different
//! clusters:
//!
//! ```text
//! logit = bias[k] + logit_scale / sqrt(F) * Σ_f weight[k][f][id_f]
//! ```
//!
//! followed by a label flip with probability `label_noise`.
//!
//! For diagnostics every id also has a generator-side latent vector (Gaussian,
//! `latent_dim` wide). Concatenating those over the profile fields gives an
//! embedding in which the planted clusters form separated groups.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, DatasetSchema, FieldSpec, Instance};
use crate::nn::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub k_true: usize,
    pub num_domains: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub profile_fields: Vec<FieldSpec>,
    pub content_fields: Vec<FieldSpec>,
    pub separation: f64,
    pub label_noise: f64,
    pub logit_scale: f64,
    pub domain_purity: f64,
    pub mean_session_length: usize,
    pub latent_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k_true: 3,
            num_domains: 6,
            n_train: 100_000,
            n_test: 20_000,
            profile_fields: (0..3).map(|i| FieldSpec::new(format!("profile_{i}"), 50)).collect(),
            content_fields: (0..3).map(|i| FieldSpec::new(format!("content_{i}"), 100)).collect(),
            separation: 10.0,
            label_noise: 0.0,
            logit_scale: 3.0,
            domain_purity: 0.6,
            mean_session_length: 20,
            latent_dim: 8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Synth(m));
        if self.k_true == 0 {
            return fail("k_true must be at least 1".into());
        }
        if self.num_domains == 0 {
            return fail("num_domains must be at least 1".into());
        }
        if self.profile_fields.is_empty() || self.content_fields.is_empty() {
            return fail("need at least one profile and one content field".into());
        }
        for f in &self.profile_fields {
            if f.vocab_size < self.k_true.max(2) {
                return fail(format!(
                    "profile field `{}` needs vocab >= k_true ({})",
                    f.name, self.k_true
                ));
            }
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return fail(format!("separation {} must be positive", self.separation));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return fail(format!("label_noise {} outside [0, 0.5)", self.label_noise));
        }
        if !(self.logit_scale >= 0.0 && self.logit_scale.is_finite()) {
            return fail(format!("logit_scale {} must be non-negative", self.logit_scale));
        }
        if !(0.0..=1.0).contains(&self.domain_purity) {
            return fail(format!("domain_purity {} outside [0, 1]", self.domain_purity));
        }
        if self.mean_session_length == 0 || self.latent_dim == 0 {
            return fail("session length and latent dim must be positive".into());
        }
        DatasetSchema::new(self.fields())?;
        Ok(())
    }

    /// Profile fields followed by content fields.
    pub fn fields(&self) -> Vec<FieldSpec> {
        self.profile_fields
            .iter()
            .chain(&self.content_fields)
            .cloned()
            .collect()
    }

    pub fn home_probability(&self) -> f64 {
        self.separation / (1.0 + self.separation)
    }
}

/// The generator's hidden parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    /// `[profile field][cluster]`
    pub home_ids: Vec<Vec<u32>>,
    pub cluster_bias: Vec<f64>,
    /// `[cluster][content field][id]`
    pub content_weights: Vec<Vec<Vec<f64>>>,
    /// `[domain][cluster]`, rows sum to one.
    pub domain_mixing: Vec<Vec<f64>>,
    /// `[profile field][id]` generator-side latent vectors.
    pub latent: Vec<Vec<Vec<f64>>>,
    pub logit_scale: f64,
    pub label_noise: f64,
    pub num_profile_fields: usize,
}

impl SynthTruth {
    /// Noise-free logit of an instance under cluster `k`.
    pub fn logit(&self, k: usize, feature_ids: &[u32]) -> f64 {
        let content = &feature_ids[self.num_profile_fields..];
        let scale = self.logit_scale / (content.len() as f64).sqrt();
        let sum: f64 = content
            .iter()
            .enumerate()
            .map(|(f, &id)| self.content_weights[k][f][id as usize])
            .sum();
        self.cluster_bias[k] + scale * sum
    }

    /// Generator-side embedding: latent vectors of the profile ids, concatenated.
    pub fn latent_embedding(&self, feature_ids: &[u32]) -> Vec<f64> {
        self.latent
            .iter()
            .zip(feature_ids)
            .flat_map(|(table, &id)| table[id as usize].iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    pub truth: SynthTruth,
}

pub fn synth_generate(config: &SynthConfig) -> Result<SyntheticData, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k = config.k_true;
    let standard = Normal::new(0.0, 1.0).expect("unit normal");

    let home_ids: Vec<Vec<u32>> = config
        .profile_fields
        .iter()
        .map(|f| {
            rand::seq::index::sample(&mut rng, f.vocab_size, k)
                .into_iter()
                .map(|i| i as u32)
                .collect()
        })
        .collect();
    let bias_dist = Uniform::new(-1.5, 0.0).expect("range");
    let cluster_bias: Vec<f64> = (0..k).map(|_| bias_dist.sample(&mut rng)).collect();
    let content_weights: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| {
            config
                .content_fields
                .iter()
                .map(|f| (0..f.vocab_size).map(|_| standard.sample(&mut rng)).collect())
                .collect()
        })
        .collect();
    let domain_mixing: Vec<Vec<f64>> = (0..config.num_domains)
        .map(|m| {
            (0..k)
                .map(|j| {
                    let base = (1.0 - config.domain_purity) / k as f64;
                    if j == m % k {
                        base + config.domain_purity
                    } else {
                        base
                    }
                })
                .collect()
        })
        .collect();
    let latent: Vec<Vec<Vec<f64>>> = config
        .profile_fields
        .iter()
        .map(|f| {
            (0..f.vocab_size)
                .map(|_| (0..config.latent_dim).map(|_| standard.sample(&mut rng)).collect())
                .collect()
        })
        .collect();

    let truth = SynthTruth {
        home_ids,
        cluster_bias,
        content_weights,
        domain_mixing,
        latent,
        logit_scale: config.logit_scale,
        label_noise: config.label_noise,
        num_profile_fields: config.profile_fields.len(),
    };

    let schema = DatasetSchema::new(config.fields())?;
    let train = generate_split(config, &truth, &schema, config.n_train, "tr", &mut rng);
    let test = generate_split(config, &truth, &schema, config.n_test, "te", &mut rng);
    Ok(SyntheticData { train, test, truth })
}

fn generate_split(
    config: &SynthConfig,
    truth: &SynthTruth,
    schema: &DatasetSchema,
    n: usize,
    prefix: &str,
    rng: &mut ChaCha8Rng,
) -> Dataset {
    let home = Bernoulli::new(config.home_probability()).expect("probability");
    let flip = Bernoulli::new(config.label_noise).expect("probability");
    let length = Uniform::new_inclusive(
        (config.mean_session_length / 2).max(1),
        config.mean_session_length + config.mean_session_length / 2,
    )
    .expect("range");
    let mut instances = Vec::with_capacity(n);
    let mut session = 0usize;
    while instances.len() < n {
        let domain = rng.random_range(0..config.num_domains);
        let cluster = sample_index(&truth.domain_mixing[domain], rng);
        let profile: Vec<u32> = config
            .profile_fields
            .iter()
            .enumerate()
            .map(|(f, spec)| {
                if home.sample(rng) {
                    truth.home_ids[f][cluster]
                } else {
                    rng.random_range(0..spec.vocab_size) as u32
                }
            })
            .collect();
        let session_id = format!("{prefix}{session:07}");
        let len = length.sample(rng).min(n - instances.len());
        for _ in 0..len {
            let mut ids = profile.clone();
            ids.extend(
                config
                    .content_fields
                    .iter()
                    .map(|spec| rng.random_range(0..spec.vocab_size) as u32),
            );
            let p = sigmoid(truth.logit(cluster, &ids));
            let mut label = rng.random_bool(p);
            if flip.sample(rng) {
                label = !label;
            }
            instances.push(Instance {
                label: label as u8,
                domain_id: domain,
                session_id: session_id.clone(),
                feature_ids: ids,
                planted_cluster: Some(cluster),
            });
        }
        session += 1;
    }
    Dataset {
        schema: schema.clone(),
        instances,
    }
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_train: 2_000,
            n_test: 500,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_generate(&small()).unwrap();
        let b = synth_generate(&small()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn sizes_ids_and_planted_labels() {
        let data = synth_generate(&small()).unwrap();
        assert_eq!(data.train.len(), 2_000);
        assert_eq!(data.test.len(), 500);
        for inst in data.train.instances.iter().chain(&data.test.instances) {
            assert!(inst.label <= 1);
            assert!(inst.domain_id < 6);
            assert!(inst.planted_cluster.unwrap() < 3);
            for (id, spec) in inst.feature_ids.iter().zip(&data.train.schema.fields) {
                assert!((*id as usize) < spec.vocab_size);
            }
        }
        assert!(data.train.instances[0].session_id.starts_with("tr"));
        assert!(data.test.instances[0].session_id.starts_with("te"));
    }

    #[test]
    fn home_ids_are_distinct_per_field() {
        let data = synth_generate(&small()).unwrap();
        for ids in &data.truth.home_ids {
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), ids.len());
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            SynthConfig { k_true: 0, ..small() },
            SynthConfig { separation: 0.0, ..small() },
            SynthConfig { label_noise: 0.5, ..small() },
            SynthConfig { num_domains: 0, ..small() },
            SynthConfig { content_fields: vec![], ..small() },
        ] {
            assert!(matches!(synth_generate(&bad), Err(DataError::Synth(_))));
        }
    }

    #[test]
    fn profile_ids_are_constant_within_a_session() {
        let data = synth_generate(&small()).unwrap();
        for pair in data.train.instances.windows(2) {
            if pair[0].session_id == pair[1].session_id {
                assert_eq!(pair[0].feature_ids[..3], pair[1].feature_ids[..3]);
                assert_eq!(pair[0].planted_cluster, pair[1].planted_cluster);
                assert_eq!(pair[0].domain_id, pair[1].domain_id);
            }
        }
    }
}
