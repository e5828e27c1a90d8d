//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are comma
//! separated; field lists use `name:vocab` items. Later assignments win, and
//! command-line flags are applied on top of the file.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::data::{FieldSpec, SynthConfig};
use crate::model::ModelConfig;

/// Where training and test instances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Generated in memory from a [`SynthConfig`].
    Synthetic(SynthConfig),
    /// A directory written by `generate` (manifest plus two CSVs).
    Dir { path: PathBuf },
    /// Arbitrary CSV files with an explicit field list.
    Files {
        train: PathBuf,
        test: PathBuf,
        fields: Vec<FieldSpec>,
        num_domains: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub threads: usize,
    pub out_dir: PathBuf,
    /// Keep every n-th training instance.
    pub subsample: usize,
    pub k_list: Vec<usize>,
    pub data: DataSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            model: ModelConfig::default(),
            batch_size: 1024,
            epochs: 1,
            seed: 0,
            threads: 1,
            out_dir: PathBuf::from("out"),
            subsample: 1,
            k_list: vec![1, 3, 9],
            data: DataSource::Synthetic(SynthConfig::default()),
        };
        cfg.set_seed(0, false);
        cfg
    }
}

pub const KEYS: &[&str] = &[
    "kind",
    "hidden",
    "embedding_dim",
    "embed_init_std",
    "num_clusters",
    "routing_iterations",
    "ewma_beta",
    "init_sigma",
    "routing_fields",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "freeze_branches",
    "batch_size",
    "epochs",
    "seed",
    "threads",
    "out",
    "subsample",
    "k_list",
    "data_dir",
    "train_path",
    "test_path",
    "fields",
    "num_domains",
    "synth.k_true",
    "synth.num_domains",
    "synth.n_train",
    "synth.n_test",
    "synth.separation",
    "synth.label_noise",
    "synth.logit_scale",
    "synth.domain_purity",
    "synth.session_length",
    "synth.latent_dim",
    "synth.profile_fields",
    "synth.content_fields",
    "synth.seed",
];

/// Parses `key = value` lines into an ordered map, rejecting unknown keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut pairs = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
        insert_pair(&mut pairs, key.trim(), value.trim())?;
    }
    Ok(pairs)
}

/// Adds one assignment, checking the key.
pub fn insert_pair(pairs: &mut BTreeMap<String, String>, key: &str, value: &str) -> Result<(), CliError> {
    if !KEYS.contains(&key) {
        return Err(CliError::Config(format!("unknown key `{key}`")));
    }
    pairs.insert(key.to_string(), value.to_string());
    Ok(())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("`{key}` = `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_fields(key: &str, value: &str) -> Result<Vec<FieldSpec>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (name, vocab) = item
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("`{key}`: `{item}` is not name:vocab")))?;
            Ok(FieldSpec::new(name.trim(), parse(key, vocab.trim())?))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let get = |k: &str| pairs.get(k).map(String::as_str);
        let m = &mut cfg.model;
        if let Some(v) = get("kind") {
            m.kind = v.parse()?;
        }
        if let Some(v) = get("hidden") {
            m.hidden = parse_list("hidden", v)?;
        }
        if let Some(v) = get("embedding_dim") {
            m.embedding_dim = parse("embedding_dim", v)?;
        }
        if let Some(v) = get("embed_init_std") {
            m.embed_init_std = parse("embed_init_std", v)?;
        }
        if let Some(v) = get("num_clusters") {
            m.routing.num_clusters = parse("num_clusters", v)?;
        }
        if let Some(v) = get("routing_iterations") {
            m.routing.iterations = parse("routing_iterations", v)?;
        }
        if let Some(v) = get("ewma_beta") {
            m.routing.ewma_beta = parse("ewma_beta", v)?;
        }
        if let Some(v) = get("init_sigma") {
            m.routing.init_sigma = parse("init_sigma", v)?;
        }
        if let Some(v) = get("routing_fields") {
            m.routing_fields = parse_list("routing_fields", v)?;
        }
        if let Some(v) = get("learning_rate") {
            m.adam.learning_rate = parse("learning_rate", v)?;
        }
        if let Some(v) = get("adam_beta1") {
            m.adam.beta1 = parse("adam_beta1", v)?;
        }
        if let Some(v) = get("adam_beta2") {
            m.adam.beta2 = parse("adam_beta2", v)?;
        }
        if let Some(v) = get("adam_epsilon") {
            m.adam.epsilon = parse("adam_epsilon", v)?;
        }
        if let Some(v) = get("freeze_branches") {
            m.freeze_branches = parse("freeze_branches", v)?;
        }
        if let Some(v) = get("batch_size") {
            cfg.batch_size = parse("batch_size", v)?;
        }
        if let Some(v) = get("epochs") {
            cfg.epochs = parse("epochs", v)?;
        }
        if let Some(v) = get("threads") {
            cfg.threads = parse("threads", v)?;
        }
        if let Some(v) = get("out") {
            cfg.out_dir = PathBuf::from(v);
        }
        if let Some(v) = get("subsample") {
            cfg.subsample = parse("subsample", v)?;
        }
        if let Some(v) = get("k_list") {
            cfg.k_list = parse_list("k_list", v)?;
        }

        let synth_keys: Vec<&String> = pairs.keys().filter(|k| k.starts_with("synth.")).collect();
        let file_keys = ["train_path", "test_path", "fields", "num_domains"];
        let uses_files = file_keys.iter().any(|k| pairs.contains_key(*k));
        let uses_dir = pairs.contains_key("data_dir");
        if [uses_files, uses_dir, !synth_keys.is_empty()]
            .iter()
            .filter(|&&b| b)
            .count()
            > 1
        {
            return Err(CliError::Config(
                "choose one data source: data_dir, train_path/test_path/fields, or synth.* keys".into(),
            ));
        }
        if uses_dir {
            cfg.data = DataSource::Dir {
                path: PathBuf::from(get("data_dir").unwrap_or_default()),
            };
        } else if uses_files {
            let need = |k: &str| {
                get(k).ok_or_else(|| CliError::Config(format!("`{k}` is required with CSV input")))
            };
            cfg.data = DataSource::Files {
                train: PathBuf::from(need("train_path")?),
                test: PathBuf::from(need("test_path")?),
                fields: parse_fields("fields", need("fields")?)?,
                num_domains: get("num_domains").map(|v| parse("num_domains", v)).transpose()?,
            };
        } else {
            let mut s = SynthConfig::default();
            if let Some(v) = get("synth.k_true") {
                s.k_true = parse("synth.k_true", v)?;
            }
            if let Some(v) = get("synth.num_domains") {
                s.num_domains = parse("synth.num_domains", v)?;
            }
            if let Some(v) = get("synth.n_train") {
                s.n_train = parse("synth.n_train", v)?;
            }
            if let Some(v) = get("synth.n_test") {
                s.n_test = parse("synth.n_test", v)?;
            }
            if let Some(v) = get("synth.separation") {
                s.separation = parse("synth.separation", v)?;
            }
            if let Some(v) = get("synth.label_noise") {
                s.label_noise = parse("synth.label_noise", v)?;
            }
            if let Some(v) = get("synth.logit_scale") {
                s.logit_scale = parse("synth.logit_scale", v)?;
            }
            if let Some(v) = get("synth.domain_purity") {
                s.domain_purity = parse("synth.domain_purity", v)?;
            }
            if let Some(v) = get("synth.session_length") {
                s.mean_session_length = parse("synth.session_length", v)?;
            }
            if let Some(v) = get("synth.latent_dim") {
                s.latent_dim = parse("synth.latent_dim", v)?;
            }
            if let Some(v) = get("synth.profile_fields") {
                s.profile_fields = parse_fields("synth.profile_fields", v)?;
            }
            if let Some(v) = get("synth.content_fields") {
                s.content_fields = parse_fields("synth.content_fields", v)?;
            }
            cfg.data = DataSource::Synthetic(s);
        }

        let seed = get("seed").map(|v| parse("seed", v)).transpose()?.unwrap_or(0);
        let data_seed = get("synth.seed").map(|v| parse::<u64>("synth.seed", v)).transpose()?;
        cfg.set_seed(seed, data_seed.is_some());
        if let (Some(ds), DataSource::Synthetic(s)) = (data_seed, &mut cfg.data) {
            s.seed = ds;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_kv_str(text: &str) -> Result<Self, CliError> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    /// Seeds the model, the routing init, batch shuffling and, unless
    /// `keep_data_seed`, the generator.
    pub fn set_seed(&mut self, seed: u64, keep_data_seed: bool) {
        self.seed = seed;
        self.model.seed = seed;
        self.model.routing.seed = seed;
        if let (false, DataSource::Synthetic(s)) = (keep_data_seed, &mut self.data) {
            s.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, value) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("threads", self.threads),
            ("subsample", self.subsample),
        ] {
            if value == 0 {
                return Err(CliError::Config(format!("`{name}` must be positive")));
            }
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(CliError::Config("`k_list` needs positive cluster counts".into()));
        }
        self.model.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    #[test]
    fn empty_text_gives_desk_defaults() {
        let cfg = ExperimentConfig::from_kv_str("").unwrap();
        assert_eq!(cfg.batch_size, 1024);
        assert_eq!(cfg.model.hidden, vec![64, 32, 16]);
        assert_eq!(cfg.model.embedding_dim, 8);
        assert!(matches!(cfg.data, DataSource::Synthetic(_)));
    }

    #[test]
    fn keys_are_applied() {
        let text = "# comment\nkind = dnn\nhidden = 16, 8\nseed = 7\nsynth.n_train = 500\nsynth.profile_fields = a:10,b:12\n";
        let cfg = ExperimentConfig::from_kv_str(text).unwrap();
        assert_eq!(cfg.model.kind, ModelKind::Dnn);
        assert_eq!(cfg.model.hidden, vec![16, 8]);
        assert_eq!((cfg.model.seed, cfg.model.routing.seed), (7, 7));
        match cfg.data {
            DataSource::Synthetic(s) => {
                assert_eq!(s.n_train, 500);
                assert_eq!(s.seed, 7);
                assert_eq!(s.profile_fields[1], FieldSpec::new("b", 12));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(ExperimentConfig::from_kv_str("colour = red").is_err());
        assert!(ExperimentConfig::from_kv_str("epochs").is_err());
        assert!(ExperimentConfig::from_kv_str("epochs = 0").is_err());
        assert!(ExperimentConfig::from_kv_str("kind = ple").is_err());
        assert!(ExperimentConfig::from_kv_str("data_dir = x\nsynth.n_train = 5").is_err());
        assert!(ExperimentConfig::from_kv_str("train_path = a.csv").is_err());
    }

    #[test]
    fn explicit_data_seed_is_kept() {
        let cfg = ExperimentConfig::from_kv_str("seed = 3\nsynth.seed = 11").unwrap();
        assert_eq!(cfg.model.seed, 3);
        match cfg.data {
            DataSource::Synthetic(s) => assert_eq!(s.seed, 11),
            other => panic!("{other:?}"),
        }
    }
}
