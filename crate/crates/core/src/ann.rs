//! The abstract neural network (ANN): nodes are layer API calls, edges are
//! the order in which outputs feed inputs.
//!
//! Every other stage produces or consumes this representation. Networks are
//! compared syntactically: two models are the same model iff their node
//! sequences (name and every argument) and edge sets coincide.

use indexmap::IndexMap;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::catalog::{self, CatalogEntry};
use crate::json::python_dict;
use crate::literal::Literal;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnError {
    #[error("malformed layer `{callee}`: {reason}")]
    MalformedLayer { callee: String, reason: String },
    #[error("node {0} has an empty func")]
    EmptyFunc(usize),
    #[error("node {node} has positional argument arg{index} after a gap")]
    PositionalGap { node: usize, index: u32 },
    #[error("node {node} carries an inline activation argument")]
    InlineActivation { node: usize },
    #[error("edge ({0}, {1}) references a missing node")]
    InvalidEdge(usize, usize),
    #[error("edge relation contains a cycle")]
    Cycle,
    #[error("input_shape appears on node {0}, which is not the first convolutional node")]
    MisplacedInputShape(usize),
    #[error("optimizer argument `{0}` is not a finite number")]
    BadOptimizerArg(String),
    #[error("invalid ANN json: {0}")]
    Json(String),
}

/// Coarse role of a node, derived from its canonical name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Convolution,
    Linear,
    BatchNorm,
    Concatenate,
    Add,
    MaxPool,
    AvgPool,
    GlobalPool,
    Dropout,
    Flatten,
    Activation,
    Other,
}

impl LayerKind {
    pub fn of(func: &str) -> LayerKind {
        match func {
            "Conv2D" | "Conv1D" | "Conv3D" | "SeparableConv2D" | "DepthwiseConv2D"
            | "Conv2DTranspose" => LayerKind::Convolution,
            "linear" => LayerKind::Linear,
            "BatchNorm2d" => LayerKind::BatchNorm,
            "Concatenate" => LayerKind::Concatenate,
            "Add" => LayerKind::Add,
            "MaxPool2d" | "MaxPooling1D" | "MaxPooling3D" => LayerKind::MaxPool,
            "AveragePooling2D" | "AveragePooling1D" => LayerKind::AvgPool,
            "GlobalAvgPool2d" | "GlobalMaxPool2d" | "GlobalAveragePooling1D"
            | "GlobalMaxPooling1D" => LayerKind::GlobalPool,
            "Dropout" | "SpatialDropout2D" | "AlphaDropout" | "GaussianDropout" => {
                LayerKind::Dropout
            }
            "Flatten" => LayerKind::Flatten,
            "LeakyReLU" | "PReLU" | "ELU" | "ThresholdedReLU" => LayerKind::Activation,
            f if catalog::is_string_activation(f) => LayerKind::Activation,
            _ => LayerKind::Other,
        }
    }

    pub fn is_trainable(self) -> bool {
        matches!(self, LayerKind::Convolution | LayerKind::Linear)
    }

    pub fn is_pooling(self) -> bool {
        matches!(self, LayerKind::MaxPool | LayerKind::AvgPool)
    }
}

/// One API call of a model definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractLayer {
    pub func: String,
    /// `argN` values keyed by N (1-based).
    pub positional: BTreeMap<u32, Literal>,
    /// Keyword arguments in source order; equality ignores order.
    pub named: BTreeMap<String, Literal>,
}

impl AbstractLayer {
    pub fn new(func: impl Into<String>) -> Self {
        AbstractLayer { func: func.into(), positional: BTreeMap::new(), named: BTreeMap::new() }
    }

    pub fn arg(mut self, index: u32, value: Literal) -> Self {
        self.positional.insert(index, value);
        self
    }

    pub fn kwarg(mut self, name: impl Into<String>, value: Literal) -> Self {
        self.named.insert(name.into(), value);
        self
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::of(&self.func)
    }

    pub fn has_args(&self) -> bool {
        !self.positional.is_empty() || !self.named.is_empty()
    }

    /// Output channels (filters / units) of a trainable layer.
    pub fn out_channels(&self) -> Option<i64> {
        let key = match self.kind() {
            LayerKind::Convolution => "filters",
            LayerKind::Linear => "units",
            _ => return None,
        };
        self.positional
            .get(&2)
            .or_else(|| self.named.get(key))
            .and_then(Literal::as_i64)
            .filter(|v| *v > 0)
    }

    pub fn set_out_channels(&mut self, value: i64) {
        let key = match self.kind() {
            LayerKind::Convolution => "filters",
            LayerKind::Linear => "units",
            _ => return,
        };
        if self.named.contains_key(key) && !self.positional.contains_key(&2) {
            self.named.insert(key.to_string(), Literal::Int(value));
        } else {
            self.positional.insert(2, Literal::Int(value));
        }
    }

    pub fn input_shape(&self) -> Option<&[i64]> {
        self.named.get("input_shape").and_then(Literal::as_int_list)
    }

    /// Drop rate of a dropout node.
    pub fn rate(&self) -> Option<f64> {
        self.positional.get(&1).or_else(|| self.named.get("rate")).and_then(Literal::as_f64)
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("func".into(), Value::String(self.func.clone()));
        for (i, v) in &self.positional {
            map.insert(format!("arg{i}"), v.to_json());
        }
        for (k, v) in &self.named {
            map.insert(k.clone(), v.to_json());
        }
        Value::Object(map)
    }

    pub fn from_json(value: &Value) -> Result<Self, AnnError> {
        let obj = value.as_object().ok_or_else(|| AnnError::Json("node is not an object".into()))?;
        let func = obj
            .get("func")
            .and_then(Value::as_str)
            .ok_or_else(|| AnnError::Json("node without func".into()))?;
        let mut layer = AbstractLayer::new(func);
        for (k, v) in obj {
            if k == "func" {
                continue;
            }
            let lit = Literal::from_json(v)
                .ok_or_else(|| AnnError::Json(format!("argument `{k}` is not a literal")))?;
            match positional_index(k) {
                Some(i) => {
                    layer.positional.insert(i, lit);
                }
                None => {
                    layer.named.insert(k.clone(), lit);
                }
            }
        }
        Ok(layer)
    }

    /// Python dict rendering: func, positional args, then keywords.
    pub fn to_python_dict(&self) -> String {
        let mut entries = vec![("func".to_string(), Literal::Str(self.func.clone()).to_string())];
        entries.extend(self.positional.iter().map(|(i, v)| (format!("arg{i}"), v.to_string())));
        entries.extend(self.named.iter().map(|(k, v)| (k.clone(), v.to_string())));
        python_dict(&entries)
    }
}

fn positional_index(key: &str) -> Option<u32> {
    key.strip_prefix("arg").and_then(|d| d.parse::<u32>().ok()).filter(|i| *i >= 1)
}

/// A mined optimizer constructor: `SGD(lr=0.01, decay=1e-6)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptimizerSpec {
    pub func: String,
    pub args: IndexMap<String, Literal>,
}

impl OptimizerSpec {
    pub fn new(func: impl Into<String>) -> Self {
        OptimizerSpec { func: func.into(), args: IndexMap::new() }
    }

    pub fn with(mut self, key: impl Into<String>, value: Literal) -> Self {
        self.args.insert(key.into(), value);
        self
    }

    pub fn validate(&self) -> Result<(), AnnError> {
        if self.func.is_empty() {
            return Err(AnnError::Json("optimizer without func".into()));
        }
        for (k, v) in &self.args {
            match v.as_f64() {
                Some(x) if x.is_finite() => {}
                _ => return Err(AnnError::BadOptimizerArg(k.clone())),
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("func".into(), Value::String(self.func.clone()));
        for (k, v) in &self.args {
            map.insert(k.clone(), v.to_json());
        }
        Value::Object(map)
    }

    pub fn from_json(value: &Value) -> Result<Self, AnnError> {
        let obj =
            value.as_object().ok_or_else(|| AnnError::Json("optimizer is not an object".into()))?;
        let func = obj
            .get("func")
            .and_then(Value::as_str)
            .ok_or_else(|| AnnError::Json("optimizer without func".into()))?;
        let mut spec = OptimizerSpec::new(func);
        for (k, v) in obj.iter().filter(|(k, _)| *k != "func") {
            let lit = Literal::from_json(v)
                .ok_or_else(|| AnnError::BadOptimizerArg(k.clone()))?;
            spec.args.insert(k.clone(), lit);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_python_dict(&self) -> String {
        let mut entries = vec![("func".to_string(), Literal::Str(self.func.clone()).to_string())];
        entries.extend(self.args.iter().map(|(k, v)| (k.clone(), v.to_string())));
        python_dict(&entries)
    }
}

/// The layer kinds the downstream search understands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerVocabulary {
    pub supported_layers: BTreeSet<String>,
    pub supported_optimizers: BTreeSet<String>,
    pub trainable_layers: BTreeSet<String>,
    pub activation_layers: BTreeSet<String>,
}

impl Default for LayerVocabulary {
    fn default() -> Self {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        LayerVocabulary {
            // convolutional, linear, batch normalization, concatenate, add,
            // max pooling, dropout, softmax, ReLU, flatten, global pooling
            supported_layers: set(&[
                "Conv2D",
                "linear",
                "BatchNorm2d",
                "Concatenate",
                "Add",
                "MaxPool2d",
                "Dropout",
                "softmax",
                "relu",
                "Flatten",
                "GlobalAvgPool2d",
                "GlobalMaxPool2d",
            ]),
            supported_optimizers: set(&[
                "SGD", "Adam", "RMSprop", "Adagrad", "Adadelta", "Adamax", "Nadam",
            ]),
            trainable_layers: set(&["Conv2D", "linear"]),
            activation_layers: set(&["relu", "softmax", "tanh", "sigmoid"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractNeuralNetwork {
    pub nodes: Vec<AbstractLayer>,
    /// Sorted, duplicate-free `(from, to)` pairs.
    pub edges: Vec<(usize, usize)>,
    pub optimizer: Option<OptimizerSpec>,
    pub provenance: String,
}

impl AbstractNeuralNetwork {
    pub fn new(nodes: Vec<AbstractLayer>, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let edges: BTreeSet<(usize, usize)> = edges.into_iter().collect();
        AbstractNeuralNetwork {
            nodes,
            edges: edges.into_iter().collect(),
            optimizer: None,
            provenance: String::new(),
        }
    }

    /// Linear chain in node order.
    pub fn chain(nodes: Vec<AbstractLayer>) -> Self {
        let n = nodes.len();
        Self::new(nodes, (1..n).map(|i| (i - 1, i)))
    }

    pub fn with_optimizer(mut self, optimizer: Option<OptimizerSpec>) -> Self {
        self.optimizer = optimizer;
        self
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn predecessors(&self, node: usize) -> Vec<usize> {
        self.edges.iter().filter(|(_, t)| *t == node).map(|(f, _)| *f).collect()
    }

    pub fn successors(&self, node: usize) -> Vec<usize> {
        self.edges.iter().filter(|(f, _)| *f == node).map(|(_, t)| *t).collect()
    }

    pub fn is_chain(&self) -> bool {
        let n = self.nodes.len();
        self.edges.len() + 1 == n.max(1) && self.edges.iter().all(|(f, t)| f + 1 == *t)
    }

    pub fn count_kind(&self, kind: LayerKind) -> usize {
        self.nodes.iter().filter(|n| n.kind() == kind).count()
    }

    pub fn first_of_kind(&self, kind: LayerKind) -> Option<usize> {
        self.nodes.iter().position(|n| n.kind() == kind)
    }

    pub fn last_of_kind(&self, kind: LayerKind) -> Option<usize> {
        self.nodes.iter().rposition(|n| n.kind() == kind)
    }

    /// Node order respecting edges, ties broken by index.
    pub fn topological_order(&self) -> Result<Vec<usize>, AnnError> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for &(f, t) in &self.edges {
            if f >= n || t >= n {
                return Err(AnnError::InvalidEdge(f, t));
            }
            indegree[t] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|i| indegree[*i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&next) = ready.iter().next() {
            ready.remove(&next);
            order.push(next);
            for s in self.successors(next) {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        if order.len() != n {
            return Err(AnnError::Cycle);
        }
        Ok(order)
    }

    /// Trainable nodes reachable backwards from `node` through non-trainable
    /// nodes only. The highest-index one is the nearest.
    pub fn nearest_trainable_ancestor(&self, node: usize) -> Option<usize> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<usize> = self.predecessors(node).into();
        let mut found: Option<usize> = None;
        while let Some(p) = queue.pop_front() {
            if !seen.insert(p) {
                continue;
            }
            if self.nodes[p].kind().is_trainable() {
                found = Some(found.map_or(p, |f| f.max(p)));
            } else {
                queue.extend(self.predecessors(p));
            }
        }
        found
    }

    /// Activation node attached to a convolution (its nearest trainable
    /// ancestor is convolutional).
    pub fn is_hidden_activation(&self, node: usize) -> bool {
        self.nodes[node].kind() == LayerKind::Activation
            && self
                .nearest_trainable_ancestor(node)
                .is_some_and(|a| self.nodes[a].kind() == LayerKind::Convolution)
    }

    /// Inserts `layer` at position `at`, shifting later indices. No edges are
    /// added for the new node.
    fn insert_node(&mut self, at: usize, layer: AbstractLayer) {
        self.nodes.insert(at, layer);
        let shift = |i: usize| if i >= at { i + 1 } else { i };
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(f, t)| (shift(f), shift(t))).collect();
        self.set_edges(edges);
    }

    fn set_edges(&mut self, edges: impl IntoIterator<Item = (usize, usize)>) {
        let set: BTreeSet<(usize, usize)> = edges.into_iter().collect();
        self.edges = set.into_iter().collect();
    }

    /// Places `layer` right after `node`, taking over all of its outgoing
    /// edges. Returns the new node's index.
    pub fn insert_after(&mut self, node: usize, layer: AbstractLayer) -> usize {
        let at = node + 1;
        self.insert_node(at, layer);
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(f, t)| if f == node { (at, t) } else { (f, t) })
            .chain(std::iter::once((node, at)))
            .collect();
        self.set_edges(edges);
        at
    }

    /// Splits edge `from -> to` with `layer`, placed immediately before
    /// `to`. Returns the new node's index.
    pub fn insert_between(&mut self, from: usize, to: usize, layer: AbstractLayer) -> usize {
        let at = to;
        self.insert_node(at, layer);
        let to = to + 1;
        let from = if from >= at { from + 1 } else { from };
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .copied()
            .filter(|&e| e != (from, to))
            .chain([(from, at), (at, to)])
            .collect();
        self.set_edges(edges);
        at
    }

    /// Checks the structural invariants of a normalized network.
    pub fn validate(&self) -> Result<(), AnnError> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.func.is_empty() {
                return Err(AnnError::EmptyFunc(i));
            }
            if node.named.contains_key("activation") {
                return Err(AnnError::InlineActivation { node: i });
            }
            let start = if catalog::has_channel_slot(&node.func) { 2 } else { 1 };
            let mut expected = start;
            for &k in node.positional.keys() {
                if k < start {
                    continue;
                }
                if k != expected {
                    return Err(AnnError::PositionalGap { node: i, index: k });
                }
                expected += 1;
            }
        }
        self.topological_order()?;
        let carriers: Vec<usize> =
            (0..self.nodes.len()).filter(|&i| self.nodes[i].input_shape().is_some()).collect();
        if let Some(&c) = carriers.first() {
            let first_conv = self.first_of_kind(LayerKind::Convolution);
            if carriers.len() > 1 || (first_conv.is_some() && first_conv != Some(c)) {
                return Err(AnnError::MisplacedInputShape(*carriers.last().unwrap()));
            }
        }
        if let Some(opt) = &self.optimizer {
            opt.validate()?;
        }
        Ok(())
    }

    /// Fills `arg1` of channel-slot layers with the incoming channel count
    /// wherever it follows statically from upstream layers. Values that
    /// cannot be derived are left as they are.
    pub fn infer_input_channels(&mut self) {
        let Ok(order) = self.topological_order() else { return };
        let mut out: Vec<Option<i64>> = vec![None; self.nodes.len()];
        for &i in &order {
            let preds = self.predecessors(i);
            let incoming = match preds.as_slice() {
                [p] => out[*p],
                _ => None,
            };
            let node = &self.nodes[i];
            if catalog::has_channel_slot(&node.func) {
                if let Some(c) = incoming {
                    self.nodes[i].positional.insert(1, Literal::Int(c));
                }
            }
            let node = &self.nodes[i];
            out[i] = match node.kind() {
                LayerKind::Convolution | LayerKind::Linear => node.out_channels(),
                LayerKind::BatchNorm
                | LayerKind::Activation
                | LayerKind::MaxPool
                | LayerKind::AvgPool
                | LayerKind::GlobalPool
                | LayerKind::Dropout => incoming,
                LayerKind::Add => {
                    let vals: Vec<Option<i64>> = preds.iter().map(|p| out[*p]).collect();
                    match vals.first() {
                        Some(Some(c)) if vals.iter().all(|v| *v == Some(*c)) => Some(*c),
                        _ => None,
                    }
                }
                LayerKind::Concatenate => {
                    let channel_axis = match node.named.get("axis").or(node.positional.get(&1)) {
                        None => true,
                        Some(l) => l.as_i64() == Some(-1),
                    };
                    let vals: Option<Vec<i64>> = preds.iter().map(|p| out[*p]).collect();
                    match vals {
                        Some(v) if channel_axis && !v.is_empty() => Some(v.iter().sum()),
                        _ => None,
                    }
                }
                LayerKind::Flatten | LayerKind::Other => None,
            };
        }
    }

    /// String key identifying the equivalence class under [`ann_equal`].
    pub fn structural_key(&self) -> String {
        let nodes: Vec<Value> = self.nodes.iter().map(AbstractLayer::to_json).collect();
        let edges: Vec<Value> = self.edges.iter().map(|(f, t)| Value::from(vec![*f, *t])).collect();
        let v = serde_json::json!({ "nodes": nodes, "edges": edges });
        crate::json::to_canonical_string(&v)
    }

    pub fn to_json(&self) -> Value {
        let nodes: Vec<Value> = self.nodes.iter().map(AbstractLayer::to_json).collect();
        let edges: Vec<Value> = self.edges.iter().map(|(f, t)| Value::from(vec![*f, *t])).collect();
        serde_json::json!({
            "nodes": nodes,
            "edges": edges,
            "optimizer": self.optimizer.as_ref().map(OptimizerSpec::to_json),
            "provenance": self.provenance,
        })
    }

    pub fn from_json(value: &Value) -> Result<Self, AnnError> {
        let nodes = value
            .get("nodes")
            .and_then(Value::as_array)
            .ok_or_else(|| AnnError::Json("missing nodes".into()))?
            .iter()
            .map(AbstractLayer::from_json)
            .collect::<Result<Vec<_>, _>>()?;
        let edges = value
            .get("edges")
            .and_then(Value::as_array)
            .ok_or_else(|| AnnError::Json("missing edges".into()))?
            .iter()
            .map(|e| match e.as_array().map(Vec::as_slice) {
                Some([a, b]) => match (a.as_u64(), b.as_u64()) {
                    (Some(a), Some(b)) => Ok((a as usize, b as usize)),
                    _ => Err(AnnError::Json("edge endpoints must be indices".into())),
                },
                _ => Err(AnnError::Json("edge must be a pair".into())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let optimizer = match value.get("optimizer") {
            None | Some(Value::Null) => None,
            Some(v) => Some(OptimizerSpec::from_json(v)?),
        };
        let provenance = value.get("provenance").and_then(Value::as_str).unwrap_or("").to_string();
        let ann = AbstractNeuralNetwork::new(nodes, edges)
            .with_optimizer(optimizer)
            .with_provenance(provenance);
        for &(f, t) in &ann.edges {
            if f >= ann.nodes.len() || t >= ann.nodes.len() {
                return Err(AnnError::InvalidEdge(f, t));
            }
        }
        Ok(ann)
    }

    /// One Python dict per node, then the optimizer after a blank line.
    pub fn listing(&self) -> String {
        let mut out: Vec<String> = self.nodes.iter().map(AbstractLayer::to_python_dict).collect();
        if let Some(opt) = &self.optimizer {
            out.push(String::new());
            out.push(opt.to_python_dict());
        }
        out.join("\n")
    }
}

/// Same model: identical node sequences and edge sets. Provenance and the
/// optimizer do not take part.
pub fn ann_equal(a: &AbstractNeuralNetwork, b: &AbstractNeuralNetwork) -> bool {
    a.nodes == b.nodes && a.edges == b.edges
}

macro_rules! serialize_via_json {
    ($($t:ty),*) => {$(
        impl serde::Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                self.to_json().serialize(s)
            }
        }
    )*};
}

serialize_via_json!(AbstractLayer, OptimizerSpec, AbstractNeuralNetwork);

/// A layer call argument as lifted from source.
#[derive(Debug, Clone, PartialEq)]
pub enum ArgValue {
    Lit(Literal),
    /// Anything outside the literal domain (variables, expressions).
    Opaque(String),
}

/// A layer constructor call as it appears in a model definition, before
/// normalization. `inputs` index earlier raw layers.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLayer {
    pub callee: String,
    pub positional: Vec<ArgValue>,
    pub keywords: Vec<(String, ArgValue)>,
    pub inputs: Vec<usize>,
}

impl RawLayer {
    pub fn new(callee: impl Into<String>) -> Self {
        RawLayer { callee: callee.into(), positional: Vec::new(), keywords: Vec::new(), inputs: Vec::new() }
    }

    pub fn pos(mut self, v: Literal) -> Self {
        self.positional.push(ArgValue::Lit(v));
        self
    }

    pub fn kw(mut self, k: &str, v: Literal) -> Self {
        self.keywords.push((k.to_string(), ArgValue::Lit(v)));
        self
    }

    pub fn after(mut self, inputs: &[usize]) -> Self {
        self.inputs = inputs.to_vec();
        self
    }
}

fn lit_arg(callee: &str, arg: &ArgValue) -> Result<Literal, AnnError> {
    match arg {
        ArgValue::Lit(l) => Ok(l.clone()),
        ArgValue::Opaque(reason) => Err(AnnError::MalformedLayer {
            callee: callee.to_string(),
            reason: reason.clone(),
        }),
    }
}

fn activation_name(callee: &str, value: &Literal) -> Result<String, AnnError> {
    value.as_str().map(str::to_ascii_lowercase).ok_or_else(|| AnnError::MalformedLayer {
        callee: callee.to_string(),
        reason: format!("activation must be named by string, got {value}"),
    })
}

/// Builds the abstract network from raw layer calls in program order.
///
/// Inline `activation=` arguments become separate nodes right after their
/// host, positional arguments are renamed `argN`, and channel-slot layers get
/// their incoming channel count inferred where possible.
pub fn normalize(raw_layers: &[RawLayer]) -> Result<AbstractNeuralNetwork, AnnError> {
    let mut nodes: Vec<AbstractLayer> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    // raw index -> (first node, last node); None for identity layers, which
    // forward their single input.
    let mut span: Vec<Option<(usize, usize)>> = Vec::with_capacity(raw_layers.len());
    let mut forward: Vec<Vec<usize>> = Vec::with_capacity(raw_layers.len());

    for raw in raw_layers {
        let callee = raw.callee.as_str();
        let entry = catalog::lookup_layer(callee);
        let channel_slot = entry.is_some_and(|e| e.channel_slot);
        // Unknown callees keep their source name.
        let func: Option<String> = match entry {
            Some(CatalogEntry { func, .. }) => func.map(str::to_string),
            None => Some(callee.to_string()),
        };

        // Resolve the producer nodes feeding this call.
        let mut sources = Vec::new();
        for &inp in &raw.inputs {
            match span.get(inp) {
                Some(Some((_, last))) => sources.push(*last),
                Some(None) => sources.extend(forward[inp].iter().copied()),
                None => {
                    return Err(AnnError::MalformedLayer {
                        callee: callee.to_string(),
                        reason: format!("input {inp} refers to a later call"),
                    })
                }
            }
        }

        let mut node: AbstractLayer;
        let mut trailing_activation: Option<AbstractLayer> = None;
        match func {
            None => {
                // Activation('name', ...)
                let mut name = None;
                let mut rest = AbstractLayer::new("");
                for (i, arg) in raw.positional.iter().enumerate() {
                    let lit = lit_arg(callee, arg)?;
                    if i == 0 {
                        name = Some(activation_name(callee, &lit)?);
                    } else {
                        rest.positional.insert(i as u32, lit);
                    }
                }
                for (k, arg) in &raw.keywords {
                    let lit = lit_arg(callee, arg)?;
                    if k == "activation" && name.is_none() {
                        name = Some(activation_name(callee, &lit)?);
                    } else {
                        rest.named.insert(k.clone(), lit);
                    }
                }
                let name = name.ok_or_else(|| AnnError::MalformedLayer {
                    callee: callee.to_string(),
                    reason: "activation without a name".into(),
                })?;
                if name == "linear" && !rest.has_args() {
                    span.push(None);
                    forward.push(sources);
                    continue;
                }
                rest.func = name;
                node = rest;
            }
            Some(func) => {
                node = AbstractLayer::new(func);
                let offset = if channel_slot { 2 } else { 1 };
                let signature = catalog::positional_signature(callee);
                for (i, arg) in raw.positional.iter().enumerate() {
                    let lit = lit_arg(callee, arg)?;
                    if signature.get(i) == Some(&"activation") {
                        let name = activation_name(callee, &lit)?;
                        if name != "linear" {
                            trailing_activation = Some(AbstractLayer::new(name));
                        }
                        continue;
                    }
                    node.positional.insert(i as u32 + offset, lit);
                }
                for (k, arg) in &raw.keywords {
                    let lit = lit_arg(callee, arg)?;
                    if k == "activation" {
                        let name = activation_name(callee, &lit)?;
                        if name != "linear" {
                            trailing_activation = Some(AbstractLayer::new(name));
                        }
                    } else {
                        node.named.insert(k.clone(), lit);
                    }
                }
            }
        }

        let first = nodes.len();
        nodes.push(node);
        edges.extend(sources.iter().map(|&s| (s, first)));
        let mut last = first;
        if let Some(act) = trailing_activation {
            nodes.push(act);
            edges.push((first, first + 1));
            last = first + 1;
        }
        span.push(Some((first, last)));
        forward.push(Vec::new());
    }

    let mut ann = AbstractNeuralNetwork::new(nodes, edges);
    ann.infer_input_channels();
    Ok(ann)
}

/// Inverse of [`normalize`]: folds single-use string activations back into
/// their convolutional/linear host and drops inferred `arg1` slots.
pub fn denormalize(ann: &AbstractNeuralNetwork) -> Result<Vec<RawLayer>, AnnError> {
    let n = ann.nodes.len();
    let mut folded_into: Vec<Option<usize>> = vec![None; n];
    for h in 0..n {
        let host = &ann.nodes[h];
        if !host.kind().is_trainable() || h + 1 >= n {
            continue;
        }
        let act = &ann.nodes[h + 1];
        if act.kind() == LayerKind::Activation
            && catalog::is_string_activation(&act.func)
            && !act.has_args()
            && ann.successors(h) == [h + 1]
            && ann.predecessors(h + 1) == [h]
        {
            folded_into[h + 1] = Some(h);
        }
    }

    let mut raw_index: Vec<usize> = vec![0; n];
    let mut out: Vec<RawLayer> = Vec::new();
    for i in 0..n {
        if let Some(host) = folded_into[i] {
            raw_index[i] = raw_index[host];
            continue;
        }
        let node = &ann.nodes[i];
        let mut raw = if node.kind() == LayerKind::Activation && catalog::is_string_activation(&node.func) {
            if !node.has_args() {
                RawLayer::new(catalog::ACTIVATION_CALLEE).pos(Literal::Str(node.func.clone()))
            } else if node.func == "relu" && node.positional.is_empty() {
                RawLayer::new("ReLU")
            } else if node.func == "softmax" && node.positional.is_empty() {
                RawLayer::new("Softmax")
            } else {
                RawLayer::new(catalog::ACTIVATION_CALLEE).pos(Literal::Str(node.func.clone()))
            }
        } else {
            RawLayer::new(catalog::emit_callee(&node.func))
        };
        let start = if catalog::has_channel_slot(&node.func) { 2 } else { 1 };
        let mut expected = start;
        for (&k, v) in &node.positional {
            if k < start {
                continue;
            }
            if k != expected {
                return Err(AnnError::PositionalGap { node: i, index: k });
            }
            expected += 1;
            raw.positional.push(ArgValue::Lit(v.clone()));
        }
        for (k, v) in &node.named {
            raw.keywords.push((k.clone(), ArgValue::Lit(v.clone())));
        }
        if i + 1 < n && folded_into[i + 1] == Some(i) {
            raw.keywords.push(("activation".into(), ArgValue::Lit(Literal::Str(ann.nodes[i + 1].func.clone()))));
        }
        raw.inputs = ann.predecessors(i).iter().map(|&p| raw_index[p]).collect();
        raw_index[i] = out.len();
        out.push(raw);
    }
    Ok(out)
}
