//! Evaluating candidate models and selecting the best one, with the
//! post-selection dropout comparison.
//!
//! Two evaluators are provided. The surrogate scores a model with a fixed
//! formula (version [`SURROGATE_VERSION`]):
//!
//! ```text
//! cost = 0.04·|log10(params) − 5| + 0.005·depth
//!      + 0.2·(1 − exp(−(Δo + Δs/10 + 5·Δi) / 10))
//!      + 0.01·u − dropout_weight·dropouts
//! ```
//!
//! floored at 0, where the deltas compare the model's original
//! characteristics with the dataset, `u ∈ [0, 1)` is drawn from a SHA-256
//! of the model JSON and the seed, and `dropouts` counts Dropout nodes.
//! The reported training loss is `0.9·cost`.
//!
//! The external evaluator runs a command with a job JSON on stdin
//! (`model_source`, `manifest`, `seed`, `budget_s`) and reads
//! `{"cost", "train_loss", "wall_time_s"}` from stdout.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::adapt::{emit_source, AdaptedModel, Dialect};
use crate::ann::LayerKind;
use crate::characteristics::DataCharacteristics;
use crate::json::to_canonical_string;
use crate::matching::deltas;
use crate::shape;
use crate::transform::{transform_post_selection, DropoutRates};

pub const SURROGATE_VERSION: &str = "surrogate-v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("evaluator failed: {0}")]
    EvaluatorFailure(String),
    #[error("evaluation exceeded its budget of {0:.3} s")]
    BudgetExceeded(f64),
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("no candidates to evaluate")]
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Evaluator {
    Surrogate {
        #[serde(default = "default_dropout_weight")]
        dropout_weight: f64,
    },
    External {
        command: Vec<String>,
    },
}

fn default_dropout_weight() -> f64 {
    0.01
}

impl Default for Evaluator {
    fn default() -> Self {
        Evaluator::Surrogate { dropout_weight: default_dropout_weight() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub time_budget_s: f64,
    pub evaluator: Evaluator,
    pub seed: u64,
    pub val_split: f64,
    pub workers: usize,
    pub dropout_rates: DropoutRates,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            time_budget_s: 3600.0,
            evaluator: Evaluator::default(),
            seed: 0,
            val_split: 0.2,
            workers: 4,
            dropout_rates: DropoutRates::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.time_budget_s > 0.0 && self.time_budget_s.is_finite()) {
            return Err(HarnessError::Config("time budget must be positive".into()));
        }
        if !(self.val_split > 0.0 && self.val_split < 1.0) {
            return Err(HarnessError::Config("val_split must be in (0, 1)".into()));
        }
        if self.workers == 0 {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        if let Evaluator::External { command } = &self.evaluator {
            if command.is_empty() {
                return Err(HarnessError::Config("external evaluator needs a command".into()));
            }
        }
        self.dropout_rates.validate().map_err(HarnessError::Config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationResult {
    pub cost: f64,
    pub train_loss: f64,
    pub params: u64,
    pub depth: usize,
    pub wall_time_s: f64,
}

/// One attempted evaluation, successful or not.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRecord {
    /// Candidate position, or `None` for the dropout variant.
    pub candidate: Option<usize>,
    pub provenance: String,
    pub result: Option<EvaluationResult>,
    pub error: Option<String>,
}

fn unit_hash(model_json: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(model_json.as_bytes());
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

/// The surrogate cost; see the module documentation.
pub fn surrogate_cost(params: u64, depth: usize, delta: (f64, f64, f64), u: f64, dropouts: usize, dropout_weight: f64) -> f64 {
    let (di, d_o, ds) = delta;
    let size = 0.04 * ((params.max(1) as f64).log10() - 5.0).abs();
    let mismatch = 0.2 * (1.0 - (-(d_o + ds / 10.0 + 5.0 * di) / 10.0).exp());
    let cost = size + 0.005 * depth as f64 + mismatch + 0.01 * u - dropout_weight * dropouts as f64;
    cost.max(0.0)
}

/// Evaluates one adapted candidate within `budget_s` seconds.
pub fn evaluate(
    candidate: &AdaptedModel,
    dc: &DataCharacteristics,
    manifest: &Value,
    config: &SearchConfig,
    budget_s: f64,
) -> Result<EvaluationResult, HarnessError> {
    let trace = shape::trace(&candidate.ann).map_err(|e| HarnessError::EvaluatorFailure(e.to_string()))?;
    match &config.evaluator {
        Evaluator::Surrogate { dropout_weight } => {
            let d = candidate.source_characteristics.map(|sc| deltas(&sc, dc));
            let delta = d.map_or((0.0, 0.0, 0.0), |d| (d.delta_i, d.delta_o, d.delta_s));
            let u = unit_hash(&to_canonical_string(&candidate.ann.to_json()), config.seed);
            let dropouts = candidate.ann.count_kind(LayerKind::Dropout);
            let cost = surrogate_cost(trace.params, trace.depth, delta, u, dropouts, *dropout_weight);
            Ok(EvaluationResult { cost, train_loss: 0.9 * cost, params: trace.params, depth: trace.depth, wall_time_s: 0.0 })
        }
        Evaluator::External { command } => {
            let job = json!({
                "model_source": candidate.emitted_source,
                "manifest": manifest,
                "seed": config.seed,
                "budget_s": budget_s,
            });
            let out = run_external(command, &to_canonical_string(&job), budget_s)?;
            Ok(EvaluationResult { cost: out.0, train_loss: out.1, params: trace.params, depth: trace.depth, wall_time_s: out.2 })
        }
    }
}

#[derive(Deserialize)]
struct ExternalResult {
    cost: f64,
    train_loss: f64,
    #[serde(default)]
    wall_time_s: Option<f64>,
}

fn run_external(command: &[String], job: &str, budget_s: f64) -> Result<(f64, f64, f64), HarnessError> {
    let fail = |m: String| HarnessError::EvaluatorFailure(m);
    let start = Instant::now();
    let mut child = Command::new(&command[0])
        .args(&command[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| fail(format!("cannot start `{}`: {e}", command[0])))?;
    if let Some(mut stdin) = child.stdin.take() {
        // A child that exits without reading its input is reported through
        // its exit status below.
        let _ = stdin.write_all(job.as_bytes());
    }
    let drain = |pipe: Option<Box<dyn std::io::Read + Send>>| {
        std::thread::spawn(move || {
            let mut buf = String::new();
            if let Some(mut s) = pipe {
                let _ = s.read_to_string(&mut buf);
            }
            buf
        })
    };
    let reader = drain(child.stdout.take().map(|s| Box::new(s) as Box<dyn std::io::Read + Send>));
    let errors = drain(child.stderr.take().map(|s| Box::new(s) as Box<dyn std::io::Read + Send>));
    let status = match child.wait_timeout(Duration::from_secs_f64(budget_s)).map_err(|e| fail(e.to_string()))? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(HarnessError::BudgetExceeded(budget_s));
        }
    };
    let text = reader.join().unwrap_or_default();
    let stderr = errors.join().unwrap_or_default();
    if !status.success() {
        let tail: String = stderr.trim().lines().last().map(|l| format!(": {l}")).unwrap_or_default();
        return Err(fail(format!("`{}` exited with {status}{tail}", command.join(" "))));
    }
    let r: ExternalResult = serde_json::from_str(text.trim()).map_err(|e| fail(format!("malformed result: {e}")))?;
    if !(r.cost.is_finite() && r.cost >= 0.0 && r.train_loss.is_finite()) {
        return Err(fail(format!("invalid cost {} / loss {}", r.cost, r.train_loss)));
    }
    Ok((r.cost, r.train_loss, r.wall_time_s.unwrap_or_else(|| start.elapsed().as_secs_f64())))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    /// Position of the best candidate.
    pub best_index: usize,
    pub best: AdaptedModel,
    pub best_result: EvaluationResult,
    /// Whether the dropout variant beat the plain model.
    pub dropout_selected: bool,
    pub report: Vec<EvaluationRecord>,
}

/// Position of the lowest-cost result; ties go to fewer parameters, then
/// to the earlier position.
pub fn argmin_cost(results: &[Option<EvaluationResult>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in results.iter().enumerate() {
        let Some(r) = r else { continue };
        let better = match best.and_then(|b| results[b].as_ref()) {
            None => true,
            Some(b) => r.cost < b.cost || (r.cost == b.cost && r.params < b.params),
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Evaluates every candidate, keeps the cheapest, then evaluates its
/// dropout variant and keeps whichever costs less. Each evaluation gets an
/// equal share of the budget.
pub fn select_best(
    candidates: &[AdaptedModel],
    dc: &DataCharacteristics,
    manifest: &Value,
    config: &SearchConfig,
) -> Result<Selection, HarnessError> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(HarnessError::NoCandidates);
    }
    let share = config.time_budget_s / (candidates.len() + 1) as f64;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let outcomes: Vec<Result<EvaluationResult, HarnessError>> =
        pool.install(|| candidates.par_iter().map(|c| evaluate(c, dc, manifest, config, share)).collect());

    let mut report: Vec<EvaluationRecord> = candidates
        .iter()
        .zip(&outcomes)
        .enumerate()
        .map(|(i, (c, o))| EvaluationRecord {
            candidate: Some(i),
            provenance: c.ann.provenance.clone(),
            result: o.as_ref().ok().cloned(),
            error: o.as_ref().err().map(ToString::to_string),
        })
        .collect();
    let results: Vec<Option<EvaluationResult>> = report.iter().map(|r| r.result.clone()).collect();
    let Some(best_index) = argmin_cost(&results) else {
        let err = outcomes.into_iter().filter_map(Result::err).find(|e| matches!(e, HarnessError::BudgetExceeded(_)));
        return Err(err.unwrap_or_else(|| HarnessError::EvaluatorFailure("every candidate failed".into())));
    };
    let mut best = candidates[best_index].clone();
    let mut best_result = results[best_index].clone().expect("evaluated");

    let variant_ann = transform_post_selection(&best.ann, config.dropout_rates);
    let mut dropout_selected = false;
    if variant_ann != best.ann {
        let dialect = Dialect::for_model(&variant_ann);
        let source = emit_source(&variant_ann, Some(&best.optimizer), dialect, false)
            .map_err(|e| HarnessError::EvaluatorFailure(e.to_string()))?;
        let variant = AdaptedModel { ann: variant_ann, emitted_source: source, ..best.clone() };
        let outcome = evaluate(&variant, dc, manifest, config, share);
        report.push(EvaluationRecord {
            candidate: None,
            provenance: variant.ann.provenance.clone(),
            result: outcome.as_ref().ok().cloned(),
            error: outcome.as_ref().err().map(ToString::to_string),
        });
        if let Ok(r) = outcome {
            if r.cost < best_result.cost {
                best = variant;
                best_result = r;
                dropout_selected = true;
            }
        }
    }
    Ok(Selection { best_index, best, best_result, dropout_selected, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_by_hand() {
        // 10^5 params, depth 10, matched dataset, u = 0: 0.05.
        assert!((surrogate_cost(100_000, 10, (0.0, 0.0, 0.0), 0.0, 0, 0.0) - 0.05).abs() < 1e-15);
        // A matched small model beats a mismatched huge one.
        let small = surrogate_cost(100_000, 12, (0.0, 0.0, 0.0), 0.9, 0, 0.0);
        let huge = surrogate_cost(100_000_000, 40, (2.0, 10.0, 100.0), 0.0, 0, 0.0);
        assert!(small < huge);
    }

    #[test]
    fn argmin_ties_prefer_fewer_params() {
        let r = |cost: f64, params: u64| Some(EvaluationResult { cost, train_loss: 0.0, params, depth: 1, wall_time_s: 0.0 });
        assert_eq!(argmin_cost(&[r(0.3, 1), r(0.1, 1), r(0.2, 1)]), Some(1));
        assert_eq!(argmin_cost(&[r(0.1, 9), None, r(0.1, 3)]), Some(2));
        assert_eq!(argmin_cost(&[None, None]), None);
    }
}
