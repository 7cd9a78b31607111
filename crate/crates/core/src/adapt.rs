//! Adapting a stored network to a target dataset and writing it back out
//! as a Keras model-definition script.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::ann::{denormalize, AbstractNeuralNetwork, AnnError, ArgValue, LayerKind, LayerVocabulary, OptimizerSpec, RawLayer};
use crate::catalog;
use crate::characteristics::{decode_shape, from_model, input_node, CharError, DataCharacteristics, Task};
use crate::literal::Literal;
use crate::shape::{self, ShapeError};

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error(transparent)]
    Characteristics(#[from] CharError),
    #[error("shape unadaptable: {0}")]
    ShapeUnadaptable(#[from] ShapeError),
    #[error("unsupported dialect `{0}`")]
    UnsupportedDialect(String),
    #[error("positional argument gap in `{func}` (arg{index} is set but an earlier slot is not)")]
    PositionalGap { func: String, index: u32 },
    #[error(transparent)]
    Ann(#[from] AnnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    /// `model = Sequential(); model.add(...)`; chains only.
    Sequential,
    /// Tensor-graph style with `Input` and `Model`.
    Functional,
}

impl Dialect {
    /// Sequential for chains, functional otherwise.
    pub fn for_model(ann: &AbstractNeuralNetwork) -> Dialect {
        if ann.is_chain() {
            Dialect::Sequential
        } else {
            Dialect::Functional
        }
    }
}

impl FromStr for Dialect {
    type Err = AdaptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(Dialect::Sequential),
            "functional" => Ok(Dialect::Functional),
            other => Err(AdaptError::UnsupportedDialect(other.to_string())),
        }
    }
}

/// The optimizer used when a model has none or an unsupported one.
pub fn default_optimizer() -> OptimizerSpec {
    OptimizerSpec::new("Adam").with("lr", Literal::Float(0.001))
}

/// Rewrites the input shape and output units of `ann` for `dc`, keeping
/// the channel layout of the original `input_shape`.
pub fn adapt_model(ann: &AbstractNeuralNetwork, dc: &DataCharacteristics) -> Result<AbstractNeuralNetwork, AdaptError> {
    let carrier = input_node(ann).ok_or(CharError::MissingInputShape)?;
    let shape = ann.nodes[carrier].input_shape().ok_or(CharError::MissingInputShape)?;
    let (layout, ..) = decode_shape(shape)?;
    let output = ann.last_of_kind(LayerKind::Linear).ok_or(CharError::MissingOutputUnits)?;
    let mut out = ann.clone();
    out.nodes[carrier].named.insert("input_shape".into(), Literal::IntList(dc.input_shape(layout)));
    out.nodes[output].set_out_channels(dc.output_channel as i64);
    shape::trace(&out)?;
    Ok(out)
}

/// Returns the mined optimizer when it is supported, else `default`
/// together with a warning.
pub fn adapt_optimizer(
    mined: Option<&OptimizerSpec>,
    vocab: &LayerVocabulary,
    default: &OptimizerSpec,
) -> (OptimizerSpec, Option<String>) {
    match mined {
        Some(o) if vocab.supported_optimizers.contains(&o.func) => (o.clone(), None),
        Some(o) => (default.clone(), Some(format!("optimizer `{}` is not supported; using `{}`", o.func, default.func))),
        None => (default.clone(), None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptedModel {
    pub ann: AbstractNeuralNetwork,
    pub optimizer: OptimizerSpec,
    pub emitted_source: String,
    /// Characteristics of the model before adaptation.
    pub source_characteristics: Option<DataCharacteristics>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AdaptOptions<'a> {
    pub vocab: &'a LayerVocabulary,
    pub default_optimizer: OptimizerSpec,
    pub dialect: Option<Dialect>,
    pub strict: bool,
}

/// Adapts the network and optimizer and emits the model source.
pub fn adapt(ann: &AbstractNeuralNetwork, dc: &DataCharacteristics, opts: &AdaptOptions) -> Result<AdaptedModel, AdaptError> {
    let source_characteristics = from_model(ann).ok();
    let mut adapted = adapt_model(ann, dc)?;
    let (optimizer, warning) = adapt_optimizer(ann.optimizer.as_ref(), opts.vocab, &opts.default_optimizer);
    adapted.optimizer = Some(optimizer.clone());
    let dialect = opts.dialect.unwrap_or_else(|| Dialect::for_model(&adapted));
    let mut warnings: Vec<String> = warning.into_iter().collect();
    let emitted_source = emit_source_with(&adapted, Some(&optimizer), dialect, opts.strict, &mut warnings)?;
    Ok(AdaptedModel { ann: adapted, optimizer, emitted_source, source_characteristics, warnings })
}

/// Emits a model-definition script that mines back to `ann` and
/// `optimizer`.
pub fn emit_source(ann: &AbstractNeuralNetwork, optimizer: Option<&OptimizerSpec>, dialect: Dialect, strict: bool) -> Result<String, AdaptError> {
    emit_source_with(ann, optimizer, dialect, strict, &mut Vec::new())
}

/// Moves positional arguments after a gap to keywords named by the
/// constructor signature; arguments without a known name are dropped.
fn close_gaps(ann: &AbstractNeuralNetwork, strict: bool, warnings: &mut Vec<String>) -> Result<AbstractNeuralNetwork, AdaptError> {
    let mut out = ann.clone();
    for node in out.nodes.iter_mut() {
        let start = if catalog::has_channel_slot(&node.func) { 2 } else { 1 };
        let mut expected = start;
        let mut moved = Vec::new();
        for (&k, _) in node.positional.range(start..) {
            if k != expected || !moved.is_empty() {
                moved.push(k);
            } else {
                expected += 1;
            }
        }
        if moved.is_empty() {
            continue;
        }
        if strict {
            return Err(AdaptError::PositionalGap { func: node.func.clone(), index: moved[0] });
        }
        let signature = catalog::positional_signature(catalog::emit_callee(&node.func));
        for k in moved {
            let value = node.positional.remove(&k).expect("present");
            match signature.get((k - start) as usize) {
                Some(name) if !node.named.contains_key(*name) => {
                    node.named.insert(name.to_string(), value);
                }
                _ => warnings.push(format!("`{}` arg{k} has no keyword form and is omitted", node.func)),
            }
        }
    }
    Ok(out)
}

fn render_call(raw: &RawLayer, skip: &[&str]) -> String {
    let mut parts: Vec<String> = Vec::new();
    for a in &raw.positional {
        if let ArgValue::Lit(l) = a {
            parts.push(l.to_python());
        }
    }
    for (k, a) in &raw.keywords {
        if skip.contains(&k.as_str()) {
            continue;
        }
        if let ArgValue::Lit(l) = a {
            parts.push(format!("{k}={}", l.to_python()));
        }
    }
    format!("{}({})", raw.callee, parts.join(", "))
}

fn render_optimizer(opt: &OptimizerSpec) -> Option<String> {
    catalog::lookup_optimizer(&opt.func)?;
    let mut parts = Vec::new();
    let mut k = 1;
    while let Some(v) = opt.args.get(&format!("arg{k}")) {
        parts.push(v.to_python());
        k += 1;
    }
    let mut named: Vec<_> = opt.args.iter().collect();
    named.sort_by(|a, b| a.0.cmp(b.0));
    for (key, v) in named {
        let positional = key.strip_prefix("arg").and_then(|d| d.parse::<usize>().ok()).is_some_and(|i| i >= 1 && i < k);
        if !positional {
            parts.push(format!("{key}={}", v.to_python()));
        }
    }
    Some(format!("{}({})", opt.func, parts.join(", ")))
}

fn emit_source_with(
    ann: &AbstractNeuralNetwork,
    optimizer: Option<&OptimizerSpec>,
    dialect: Dialect,
    strict: bool,
    warnings: &mut Vec<String>,
) -> Result<String, AdaptError> {
    if dialect == Dialect::Sequential && !ann.is_chain() {
        return Err(AdaptError::UnsupportedDialect("sequential (the model is not a chain)".into()));
    }
    let ann = close_gaps(ann, strict, warnings)?;
    let raws = denormalize(&ann)?;
    let mut layer_names: BTreeSet<&str> = raws.iter().map(|r| r.callee.as_str()).collect();
    if dialect == Dialect::Functional {
        layer_names.insert("Input");
    }
    let opt_call = optimizer.and_then(render_optimizer);

    let mut s = String::new();
    match dialect {
        Dialect::Sequential => s.push_str("from keras.models import Sequential\n"),
        Dialect::Functional => s.push_str("from keras.models import Model\n"),
    }
    let names: Vec<&str> = layer_names.into_iter().collect();
    writeln!(s, "from keras.layers import {}", names.join(", ")).unwrap();
    if let (Some(opt), Some(_)) = (optimizer, &opt_call) {
        writeln!(s, "from keras.optimizers import {}", opt.func).unwrap();
    }
    s.push('\n');

    match dialect {
        Dialect::Sequential => {
            s.push_str("model = Sequential()\n");
            for raw in &raws {
                writeln!(s, "model.add({})", render_call(raw, &[])).unwrap();
            }
        }
        Dialect::Functional => {
            let mut inputs = Vec::new();
            for (i, raw) in raws.iter().enumerate() {
                let var = format!("x{i}");
                let (call, source) = if raw.inputs.is_empty() {
                    let shape = raw.keywords.iter().find(|(k, _)| k == "input_shape").map(|(_, v)| v);
                    let input_var = format!("inp{}", inputs.len());
                    match shape {
                        Some(ArgValue::Lit(l)) => writeln!(s, "{input_var} = Input(shape={})", l.to_python()).unwrap(),
                        _ => writeln!(s, "{input_var} = Input(shape=None)").unwrap(),
                    }
                    inputs.push(input_var.clone());
                    (render_call(raw, &["input_shape"]), input_var)
                } else if raw.inputs.len() == 1 && !matches!(raw.callee.as_str(), "Add" | "Concatenate") {
                    (render_call(raw, &[]), format!("x{}", raw.inputs[0]))
                } else {
                    let list: Vec<String> = raw.inputs.iter().map(|j| format!("x{j}")).collect();
                    (render_call(raw, &[]), format!("[{}]", list.join(", ")))
                };
                writeln!(s, "{var} = {call}({source})").unwrap();
            }
            let sinks: Vec<String> = (0..ann.nodes.len())
                .filter(|&i| ann.successors(i).is_empty())
                .map(|i| raw_index_of(&ann, i))
                .collect::<BTreeSet<usize>>()
                .into_iter()
                .map(|j| format!("x{j}"))
                .collect();
            let one_or_list = |v: &[String]| if v.len() == 1 { v[0].clone() } else { format!("[{}]", v.join(", ")) };
            writeln!(s, "model = Model(inputs={}, outputs={})", one_or_list(&inputs), one_or_list(&sinks)).unwrap();
        }
    }

    let loss = match from_model(&ann).map(|dc| dc.task) {
        Ok(Task::Regression) => "mse",
        _ => "categorical_crossentropy",
    };
    match (optimizer, opt_call) {
        (Some(_), Some(call)) => {
            writeln!(s, "opt = {call}").unwrap();
            writeln!(s, "model.compile(loss='{loss}', optimizer=opt, metrics=['accuracy'])").unwrap();
        }
        (Some(opt), None) => {
            writeln!(s, "model.compile(loss='{loss}', optimizer={}, metrics=['accuracy'])", Literal::Str(opt.func.clone()).to_python())
                .unwrap();
        }
        (None, _) => writeln!(s, "model.compile(loss='{loss}', metrics=['accuracy'])").unwrap(),
    }
    Ok(s)
}

/// Position of node `i` among the raw layers produced by `denormalize`,
/// which folds an activation into the preceding host.
fn raw_index_of(ann: &AbstractNeuralNetwork, i: usize) -> usize {
    let raws_before = (0..=i).filter(|&j| !folded(ann, j)).count();
    raws_before - 1
}

fn folded(ann: &AbstractNeuralNetwork, j: usize) -> bool {
    j > 0 && {
        let act = &ann.nodes[j];
        let host = j - 1;
        ann.nodes[host].kind().is_trainable()
            && act.kind() == LayerKind::Activation
            && catalog::is_string_activation(&act.func)
            && !act.has_args()
            && ann.successors(host) == [j]
            && ann.predecessors(j) == [host]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::{extract_models, ProgramSource};

    fn figure() -> AbstractNeuralNetwork {
        let src = ProgramSource::new("f.py", include_str!("../fixtures/corpus/figure_model.py"));
        extract_models(&src).models.remove(0)
    }

    #[test]
    fn figure_adapts_two_fields() {
        let dc = DataCharacteristics::new(150, 150, 3, 6);
        let out = adapt_model(&figure(), &dc).unwrap();
        assert_eq!(out.nodes[0].input_shape(), Some(&[3, 150, 150][..]));
        assert_eq!(out.nodes[8].out_channels(), Some(6));
        assert_eq!(from_model(&out).unwrap(), dc);
        let same = from_model(&figure()).unwrap();
        assert_eq!(adapt_model(&figure(), &same).unwrap(), figure());
    }

    #[test]
    fn too_small_target_is_unadaptable() {
        let dc = DataCharacteristics::new(4, 4, 3, 6);
        assert!(matches!(adapt_model(&figure(), &dc), Err(AdaptError::ShapeUnadaptable(_))));
    }

    #[test]
    fn optimizer_fallback() {
        let vocab = LayerVocabulary::default();
        let sgd = figure().optimizer.unwrap();
        assert_eq!(adapt_optimizer(Some(&sgd), &vocab, &default_optimizer()).0, sgd);
        assert_eq!(adapt_optimizer(None, &vocab, &default_optimizer()).0, default_optimizer());
        let (o, w) = adapt_optimizer(Some(&OptimizerSpec::new("Ftrl")), &vocab, &default_optimizer());
        assert_eq!(o, default_optimizer());
        assert!(w.is_some());
    }

    #[test]
    fn figure_emission_round_trips() {
        let m = figure();
        for dialect in [Dialect::Sequential, Dialect::Functional] {
            let text = emit_source(&m, m.optimizer.as_ref(), dialect, true).unwrap();
            let back = extract_models(&ProgramSource::new("e.py", text.clone()));
            assert_eq!(back.models.len(), 1, "{text}\n{:?}", back.diagnostics);
            assert!(crate::ann::ann_equal(&back.models[0], &m), "{text}");
            assert_eq!(back.models[0].optimizer, m.optimizer);
        }
        assert!(matches!("graph".parse::<Dialect>(), Err(AdaptError::UnsupportedDialect(_))));
    }

    #[test]
    fn gaps_are_keywords_unless_strict() {
        let mut m = figure();
        m.nodes[3].positional.insert(4, Literal::IntList(vec![2, 2]));
        assert!(matches!(emit_source(&m, None, Dialect::Sequential, true), Err(AdaptError::PositionalGap { .. })));
        let text = emit_source(&m, None, Dialect::Sequential, false).unwrap();
        assert!(text.contains("Conv2D(32, strides=(2, 2), activation='relu')"), "{text}");
    }
}
