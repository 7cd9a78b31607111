//! The persisted model collection and its usage statistics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::ann::{ann_equal, AbstractNeuralNetwork, AnnError, LayerKind, LayerVocabulary};
use crate::characteristics::{from_model, DataCharacteristics};
use crate::json::to_canonical_string;
use crate::literal::py_float_repr;
use crate::miner::{is_complete, is_supported};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum DbError {
    #[error("model {0} is incomplete")]
    IncompleteModel(String),
    #[error("model {0} contains unsupported layers")]
    UnsupportedModel(String),
    #[error("model {provenance}: {source}")]
    InvalidModel { provenance: String, source: AnnError },
    #[error("invalid database: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Carries the optimizer and provenance.
    pub ann: AbstractNeuralNetwork,
    /// `None` when the model's input or output layer does not determine
    /// them; such records are skipped by matching.
    pub characteristics: Option<DataCharacteristics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDatabase {
    pub version: String,
    pub records: Vec<Record>,
}

impl Default for ModelDatabase {
    fn default() -> Self {
        ModelDatabase { version: SCHEMA_VERSION.into(), records: Vec::new() }
    }
}

impl ModelDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends `ann` unless an equal network is already stored. Returns
    /// whether a record was added.
    pub fn insert(
        &mut self,
        ann: AbstractNeuralNetwork,
        characteristics: Option<DataCharacteristics>,
        vocab: &LayerVocabulary,
    ) -> Result<bool, DbError> {
        if !is_complete(&ann) {
            return Err(DbError::IncompleteModel(ann.provenance));
        }
        if !is_supported(&ann, vocab) {
            return Err(DbError::UnsupportedModel(ann.provenance));
        }
        ann.validate().map_err(|source| DbError::InvalidModel { provenance: ann.provenance.clone(), source })?;
        if self.records.iter().any(|r| ann_equal(&r.ann, &ann)) {
            log::debug!("duplicate model {} not inserted", ann.provenance);
            return Ok(false);
        }
        self.records.push(Record { ann, characteristics });
        Ok(true)
    }

    /// Builds a database from mined models, deriving each record's
    /// characteristics from its input and output layers.
    pub fn from_models(models: Vec<AbstractNeuralNetwork>, vocab: &LayerVocabulary) -> Result<Self, DbError> {
        let mut db = ModelDatabase::new();
        for m in models {
            let dc = from_model(&m).ok();
            db.insert(m, dc, vocab)?;
        }
        Ok(db)
    }

    pub fn to_json(&self) -> Value {
        let records: Vec<Value> = self
            .records
            .iter()
            .map(|r| {
                let mut v = r.ann.to_json();
                v["characteristics"] = serde_json::to_value(r.characteristics).expect("characteristics");
                v
            })
            .collect();
        json!({ "version": self.version, "records": records })
    }

    pub fn from_json(value: &Value, vocab: &LayerVocabulary) -> Result<Self, DbError> {
        let version = value
            .get("version")
            .and_then(Value::as_str)
            .ok_or_else(|| DbError::Schema("missing version".into()))?;
        if version != SCHEMA_VERSION {
            return Err(DbError::Schema(format!("unsupported version {version}")));
        }
        let records = value
            .get("records")
            .and_then(Value::as_array)
            .ok_or_else(|| DbError::Schema("missing records".into()))?;
        let mut db = ModelDatabase { version: version.into(), records: Vec::with_capacity(records.len()) };
        for (i, r) in records.iter().enumerate() {
            let ann = AbstractNeuralNetwork::from_json(r)
                .map_err(|source| DbError::InvalidModel { provenance: format!("record {i}"), source })?;
            let characteristics = match r.get("characteristics") {
                None | Some(Value::Null) => None,
                Some(v) => Some(serde_json::from_value(v.clone()).map_err(|e| DbError::Schema(format!("record {i}: {e}")))?),
            };
            let provenance = ann.provenance.clone();
            if !db.insert(ann, characteristics, vocab)? {
                return Err(DbError::Schema(format!("record {i} ({provenance}) duplicates an earlier record")));
            }
        }
        Ok(db)
    }

    pub fn to_canonical_string(&self) -> String {
        to_canonical_string(&self.to_json())
    }

    pub fn save(&self, path: &Path) -> Result<(), DbError> {
        let mut text = self.to_canonical_string();
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path, vocab: &LayerVocabulary) -> Result<Self, DbError> {
        let text = fs::read_to_string(path)?;
        let value: Value = serde_json::from_str(&text).map_err(|e| DbError::Schema(e.to_string()))?;
        Self::from_json(&value, vocab)
    }
}

/// Layer usage counts over a database.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct UsageStats {
    /// Activation nodes attached to convolutions, by name.
    pub activation_counts: BTreeMap<String, usize>,
    /// Dropout nodes before the flatten/global-pooling boundary, by rate.
    pub hidden_dropout_rate_counts: BTreeMap<String, usize>,
    /// Dropout nodes after the boundary, by rate.
    pub fc_dropout_rate_counts: BTreeMap<String, usize>,
}

impl UsageStats {
    pub fn hidden_activations(&self) -> usize {
        self.activation_counts.values().sum()
    }

    /// Share of hidden activations that are `name`, in percent.
    pub fn activation_share(&self, name: &str) -> f64 {
        let total = self.hidden_activations();
        if total == 0 {
            return 0.0;
        }
        100.0 * *self.activation_counts.get(name).unwrap_or(&0) as f64 / total as f64
    }
}

/// Key used for a dropout rate in [`UsageStats`].
pub fn rate_key(rate: Option<f64>) -> String {
    rate.map_or_else(|| "unspecified".to_string(), py_float_repr)
}

/// Whether a flatten or global-pooling node precedes `node`.
pub fn after_boundary(ann: &AbstractNeuralNetwork, node: usize) -> bool {
    let mut stack = ann.predecessors(node);
    let mut seen = vec![false; ann.nodes.len()];
    while let Some(p) = stack.pop() {
        if std::mem::replace(&mut seen[p], true) {
            continue;
        }
        if matches!(ann.nodes[p].kind(), LayerKind::Flatten | LayerKind::GlobalPool) {
            return true;
        }
        stack.extend(ann.predecessors(p));
    }
    false
}

pub fn compute_usage_stats(db: &ModelDatabase) -> UsageStats {
    let mut stats = UsageStats::default();
    for r in &db.records {
        let ann = &r.ann;
        for (i, node) in ann.nodes.iter().enumerate() {
            match node.kind() {
                LayerKind::Activation if ann.is_hidden_activation(i) => {
                    *stats.activation_counts.entry(node.func.clone()).or_default() += 1;
                }
                LayerKind::Dropout => {
                    let map = if after_boundary(ann, i) {
                        &mut stats.fc_dropout_rate_counts
                    } else {
                        &mut stats.hidden_dropout_rate_counts
                    };
                    *map.entry(rate_key(node.rate())).or_default() += 1;
                }
                _ => {}
            }
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::AbstractLayer;
    use crate::literal::Literal;

    fn figure() -> AbstractNeuralNetwork {
        let src = crate::miner::ProgramSource::new("fig.py", include_str!("../fixtures/corpus/figure_model.py"));
        crate::miner::extract_models(&src).models.remove(0)
    }

    #[test]
    fn insert_dedupes_and_rejects_incomplete() {
        let vocab = LayerVocabulary::default();
        let mut db = ModelDatabase::new();
        assert!(db.insert(figure(), None, &vocab).unwrap());
        assert!(!db.insert(figure().with_provenance("other"), None, &vocab).unwrap());
        assert_eq!(db.len(), 1);
        let no_linear = AbstractNeuralNetwork::chain(vec![AbstractLayer::new("Conv2D"), AbstractLayer::new("relu")]);
        assert!(matches!(db.insert(no_linear, None, &vocab), Err(DbError::IncompleteModel(_))));
    }

    #[test]
    fn figure_stats_by_hand() {
        let vocab = LayerVocabulary::default();
        let db = ModelDatabase::from_models(vec![figure()], &vocab).unwrap();
        let s = compute_usage_stats(&db);
        assert_eq!(s.activation_counts, BTreeMap::from([("relu".to_string(), 2)]));
        assert_eq!(s.hidden_dropout_rate_counts, BTreeMap::from([("0.25".to_string(), 1)]));
        assert!(s.fc_dropout_rate_counts.is_empty());
        assert_eq!(compute_usage_stats(&ModelDatabase::new()), UsageStats::default());
    }

    #[test]
    fn save_load_is_bit_exact() {
        let vocab = LayerVocabulary::default();
        let mut m = figure();
        m.nodes[6] = AbstractLayer::new("Dropout").arg(1, Literal::Float(1e-6));
        let db = ModelDatabase::from_models(vec![m], &vocab).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("models.json");
        db.save(&p).unwrap();
        let back = ModelDatabase::load(&p, &vocab).unwrap();
        assert_eq!(back, db);
        assert_eq!(back.to_canonical_string(), db.to_canonical_string());
        assert!(db.to_canonical_string().contains("1e-06"));
    }
}
