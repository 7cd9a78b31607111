//! The end-to-end run: mine (or load) a database, match it to a dataset,
//! filter, transform, adapt and select the best warm-start model.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::adapt::{adapt, AdaptOptions, AdaptedModel};
use crate::ann::LayerVocabulary;
use crate::characteristics::{from_dataset, CharError, DataCharacteristics};
use crate::config::PipelineConfig;
use crate::database::{DbError, ModelDatabase};
use crate::harness::{select_best, HarnessError, Selection};
use crate::matching::{filter_most_used, select_initial, CandidateSet, MatchError};
use crate::miner::{mine_corpus, MiningReport, MiningOutcome};
use crate::transform::transform_pre_search;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no corpus directory or database given")]
    NoModelSource,
    #[error("no dataset manifest given")]
    NoManifest,
    #[error("cannot read corpus: {0}")]
    Corpus(std::io::Error),
    #[error(transparent)]
    Database(#[from] DbError),
    #[error(transparent)]
    Characteristics(#[from] CharError),
    #[error(transparent)]
    Matching(#[from] MatchError),
    #[error("no candidate could be adapted to the dataset")]
    NothingAdaptable,
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Adds mined models to a database, skipping ones it rejects.
pub fn database_from_mining(outcome: MiningOutcome, vocab: &LayerVocabulary) -> (ModelDatabase, Vec<String>) {
    let mut db = ModelDatabase::new();
    let mut skipped = Vec::new();
    for m in outcome.models {
        let dc = crate::characteristics::from_model(&m).ok();
        if let Err(e) = db.insert(m, dc, vocab) {
            skipped.push(e.to_string());
        }
    }
    (db, skipped)
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub mining: Option<MiningReport>,
    pub database_size: usize,
    pub characteristics: DataCharacteristics,
    pub candidates: CandidateSet,
    /// Record indices kept by architecture filtering.
    pub filtered: Vec<usize>,
    /// Record indices that could not be adapted, with the reason.
    pub unadaptable: Vec<(usize, String)>,
    pub selection: Selection,
    pub warnings: Vec<String>,
}

/// What [`run_on_database`] found for one dataset.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub candidates: CandidateSet,
    /// Record indices kept by architecture filtering.
    pub filtered: Vec<usize>,
    /// Record indices that could not be adapted, with the reason.
    pub unadaptable: Vec<(usize, String)>,
    pub selection: Selection,
}

/// Matches, filters, transforms and adapts candidates from `db`, then
/// selects the best.
pub fn run_on_database(
    db: &ModelDatabase,
    dc: &DataCharacteristics,
    config: &PipelineConfig,
    vocab: &LayerVocabulary,
) -> Result<SearchOutcome, PipelineError> {
    let candidates = select_initial(db, dc, config.gmeans_alpha, config.seed)?;
    let members: Vec<usize> = candidates.indices();
    let anns: Vec<_> = members.iter().map(|&i| &db.records[i].ann).collect();
    let filtered: Vec<usize> = filter_most_used(&anns, config.filter_threshold).into_iter().map(|k| members[k]).collect();
    let opts = AdaptOptions {
        vocab,
        default_optimizer: config.default_optimizer.clone(),
        dialect: config.dialect.as_deref().map(|d| d.parse().expect("validated dialect")),
        strict: config.strict,
    };
    let mut adapted: Vec<AdaptedModel> = Vec::new();
    let mut unadaptable = Vec::new();
    for &i in &filtered {
        let transformed = transform_pre_search(&db.records[i].ann);
        match adapt(&transformed, dc, &opts) {
            Ok(mut a) => {
                // Deltas are measured from what the model was built for.
                a.source_characteristics = db.records[i].characteristics.or(a.source_characteristics);
                adapted.push(a)
            }
            Err(e) => unadaptable.push((i, e.to_string())),
        }
    }
    if adapted.is_empty() {
        return Err(PipelineError::NothingAdaptable);
    }
    let manifest: Value = serde_json::to_value(dc).expect("characteristics serialize");
    let selection = select_best(&adapted, dc, &manifest, &config.search_config())?;
    Ok(SearchOutcome { candidates, filtered, unadaptable, selection })
}

/// Runs the whole pipeline as configured.
pub fn run(config: &PipelineConfig, vocab: &LayerVocabulary) -> Result<PipelineReport, PipelineError> {
    let manifest = config.manifest_path.as_deref().ok_or(PipelineError::NoManifest)?;
    let dc = from_dataset(manifest)?;
    let mut warnings = Vec::new();
    let (mining, db) = match (&config.corpus_dir, &config.db_path) {
        (Some(dir), _) => {
            let outcome = mine_corpus(dir, vocab).map_err(PipelineError::Corpus)?;
            let report = outcome.report.clone();
            let (db, skipped) = database_from_mining(outcome, vocab);
            warnings.extend(skipped);
            (Some(report), db)
        }
        (None, Some(path)) => (None, ModelDatabase::load(Path::new(path), vocab)?),
        (None, None) => return Err(PipelineError::NoModelSource),
    };
    let SearchOutcome { candidates, filtered, unadaptable, selection } = run_on_database(&db, &dc, config, vocab)?;
    warnings.extend(candidates.warnings.iter().cloned());
    Ok(PipelineReport {
        mining,
        database_size: db.len(),
        characteristics: dc,
        candidates,
        filtered,
        unadaptable,
        selection,
        warnings,
    })
}
