//! Pipeline configuration, read from a TOML file. Every key is optional:
//!
//! ```toml
//! corpus_dir = "corpus"          # mined when set
//! db_path = "models.json"        # loaded when corpus_dir is unset
//! manifest_path = "manifest.json"
//! filter_threshold = 40          # >= 1
//! gmeans_alpha = 1e-4            # in (0, 1)
//! seed = 0
//! time_budget_s = 3600.0         # > 0
//! val_split = 0.2                # in (0, 1)
//! workers = 4                    # >= 1
//! dialect = "sequential"         # or "functional"; chosen per model when unset
//! strict = false
//!
//! [dropout_rates]                # each in (0, 1)
//! hidden = 0.25
//! fc = 0.5
//!
//! [default_optimizer]
//! func = "Adam"
//! lr = 0.001
//!
//! [evaluator]
//! kind = "surrogate"             # or "external" with command = ["prog", "arg"]
//! dropout_weight = 0.01
//! ```
//!
//! Command-line flags override file values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::adapt::default_optimizer;
use crate::ann::OptimizerSpec;
use crate::harness::{Evaluator, SearchConfig};
use crate::matching::{DEFAULT_ALPHA, DEFAULT_FILTER_THRESHOLD};
use crate::transform::DropoutRates;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Range(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus_dir: Option<PathBuf>,
    pub db_path: Option<PathBuf>,
    pub manifest_path: Option<PathBuf>,
    pub filter_threshold: usize,
    pub gmeans_alpha: f64,
    pub dropout_rates: DropoutRates,
    #[serde(serialize_with = "ser_optimizer", deserialize_with = "de_optimizer")]
    pub default_optimizer: OptimizerSpec,
    pub seed: u64,
    pub evaluator: Evaluator,
    pub time_budget_s: f64,
    pub val_split: f64,
    pub workers: usize,
    pub dialect: Option<String>,
    pub strict: bool,
}

fn ser_optimizer<S: Serializer>(o: &OptimizerSpec, s: S) -> Result<S::Ok, S::Error> {
    o.to_json().serialize(s)
}

fn de_optimizer<'de, D: Deserializer<'de>>(d: D) -> Result<OptimizerSpec, D::Error> {
    let v = serde_json::Value::deserialize(d)?;
    OptimizerSpec::from_json(&v).map_err(serde::de::Error::custom)
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let search = SearchConfig::default();
        PipelineConfig {
            corpus_dir: None,
            db_path: None,
            manifest_path: None,
            filter_threshold: DEFAULT_FILTER_THRESHOLD,
            gmeans_alpha: DEFAULT_ALPHA,
            dropout_rates: DropoutRates::default(),
            default_optimizer: default_optimizer(),
            seed: search.seed,
            evaluator: search.evaluator,
            time_budget_s: search.time_budget_s,
            val_split: search.val_split,
            workers: search.workers,
            dialect: None,
            strict: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.filter_threshold == 0 {
            return Err(ConfigError::Range("filter_threshold must be at least 1".into()));
        }
        if !(self.gmeans_alpha > 0.0 && self.gmeans_alpha < 1.0) {
            return Err(ConfigError::Range("gmeans_alpha must be in (0, 1)".into()));
        }
        if let Some(d) = &self.dialect {
            d.parse::<crate::adapt::Dialect>().map_err(|e| ConfigError::Range(e.to_string()))?;
        }
        self.search_config().validate().map_err(|e| ConfigError::Range(e.to_string()))
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            time_budget_s: self.time_budget_s,
            evaluator: self.evaluator.clone(),
            seed: self.seed,
            val_split: self.val_split,
            workers: self.workers,
            dropout_rates: self.dropout_rates,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::literal::Literal;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.filter_threshold, 40);
        assert_eq!(c.gmeans_alpha, 1e-4);
    }

    #[test]
    fn documented_example_parses() {
        let text = "seed = 7\nfilter_threshold = 10\n[dropout_rates]\nhidden = 0.5\nfc = 0.25\n\
                    [default_optimizer]\nfunc = \"SGD\"\nlr = 0.01\n\
                    [evaluator]\nkind = \"external\"\ncommand = [\"python\", \"train.py\"]\n";
        let c = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.dropout_rates, DropoutRates::figure());
        assert_eq!(c.default_optimizer, OptimizerSpec::new("SGD").with("lr", Literal::Float(0.01)));
        assert_eq!(c.evaluator, Evaluator::External { command: vec!["python".into(), "train.py".into()] });
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_toml("gmeans_alpha = 2.0").is_err());
        assert!(PipelineConfig::from_toml("unknown = 1").is_err());
        assert!(PipelineConfig::from_toml("[dropout_rates]\nhidden = 1.5\nfc = 0.5").is_err());
        assert!(PipelineConfig::from_toml("dialect = \"graph\"").is_err());
    }
}
