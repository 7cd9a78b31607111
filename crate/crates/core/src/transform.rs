//! Rule-based rewrites of mined networks: batch normalization before
//! hidden activations, global average pooling instead of flatten, ReLU for
//! hidden activations, and dropout after hidden and fully-connected blocks.

use serde::{Deserialize, Serialize};

use crate::ann::{AbstractLayer, AbstractNeuralNetwork, LayerKind};
use crate::literal::Literal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformRule {
    BatchNorm,
    GlobalAvgPool,
    ActivationReLU,
    Dropout,
}

/// Drop rates used by the dropout rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutRates {
    pub hidden: f64,
    pub fc: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        DropoutRates { hidden: 0.25, fc: 0.5 }
    }
}

impl DropoutRates {
    /// The rates shown in the transformed-model figure, which swap the
    /// hidden and fully-connected values of the written rule.
    pub fn figure() -> Self {
        DropoutRates { hidden: 0.5, fc: 0.25 }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, r) in [("hidden", self.hidden), ("fc", self.fc)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(format!("{name} dropout rate {r} is not in (0, 1)"));
            }
        }
        Ok(())
    }
}

fn relu() -> AbstractLayer {
    AbstractLayer::new("relu")
}

/// Inserts a BatchNorm2d between every convolution and an activation that
/// directly follows it.
pub fn apply_bn(ann: &AbstractNeuralNetwork) -> AbstractNeuralNetwork {
    let mut out = ann.clone();
    loop {
        let site = out.edges.iter().copied().find(|&(f, t)| {
            out.nodes[f].kind() == LayerKind::Convolution && out.nodes[t].kind() == LayerKind::Activation
        });
        let Some((f, t)) = site else { break };
        out.insert_between(f, t, AbstractLayer::new("BatchNorm2d"));
    }
    out.infer_input_channels();
    out
}

/// Replaces every Flatten with GlobalAvgPool2d.
pub fn apply_gap(ann: &AbstractNeuralNetwork) -> AbstractNeuralNetwork {
    let mut out = ann.clone();
    for node in out.nodes.iter_mut() {
        if node.kind() == LayerKind::Flatten {
            *node = AbstractLayer::new("GlobalAvgPool2d");
        }
    }
    out.infer_input_channels();
    out
}

/// Replaces every hidden activation (one attached to a convolution) with
/// ReLU. Output activations are kept.
pub fn apply_relu(ann: &AbstractNeuralNetwork) -> AbstractNeuralNetwork {
    let mut out = ann.clone();
    for i in 0..out.nodes.len() {
        if ann.is_hidden_activation(i) && out.nodes[i] != relu() {
            out.nodes[i] = relu();
        }
    }
    out
}

fn is_hidden_member(ann: &AbstractNeuralNetwork, i: usize) -> bool {
    match ann.nodes[i].kind() {
        LayerKind::Convolution | LayerKind::MaxPool | LayerKind::AvgPool => true,
        LayerKind::BatchNorm | LayerKind::Activation => ann
            .nearest_trainable_ancestor(i)
            .is_some_and(|a| ann.nodes[a].kind() == LayerKind::Convolution),
        _ => false,
    }
}

fn ends_in_dropout(ann: &AbstractNeuralNetwork, i: usize) -> bool {
    ann.successors(i).iter().any(|&s| ann.nodes[s].kind() == LayerKind::Dropout)
}

/// Terminal nodes of hidden blocks: every pooling node, and any other block
/// member that has a successor outside the block or no successor at all.
pub fn hidden_block_terminals(ann: &AbstractNeuralNetwork) -> Vec<usize> {
    (0..ann.nodes.len())
        .filter(|&i| is_hidden_member(ann, i))
        .filter(|&i| {
            ann.nodes[i].kind().is_pooling() || {
                let succ = ann.successors(i);
                succ.is_empty() || succ.iter().any(|&s| !is_hidden_member(ann, s))
            }
        })
        .collect()
}

/// Terminal nodes of non-output fully-connected blocks: a linear node
/// followed by its single-successor chain of BN and activation nodes.
pub fn fc_block_terminals(ann: &AbstractNeuralNetwork) -> Vec<usize> {
    let Some(output) = ann.last_of_kind(LayerKind::Linear) else { return Vec::new() };
    let mut out = Vec::new();
    for i in 0..ann.nodes.len() {
        if ann.nodes[i].kind() != LayerKind::Linear || i == output {
            continue;
        }
        let mut end = i;
        loop {
            match ann.successors(end).as_slice() {
                [s] if matches!(ann.nodes[*s].kind(), LayerKind::Activation | LayerKind::BatchNorm)
                    && ann.predecessors(*s).len() == 1 =>
                {
                    end = *s
                }
                _ => break,
            }
        }
        out.push(end);
    }
    out
}

/// Appends Dropout after every hidden block and non-output
/// fully-connected block that does not already end in one.
pub fn apply_dropout(ann: &AbstractNeuralNetwork, rates: DropoutRates) -> AbstractNeuralNetwork {
    let mut sites: Vec<(usize, f64)> = hidden_block_terminals(ann)
        .into_iter()
        .map(|t| (t, rates.hidden))
        .chain(fc_block_terminals(ann).into_iter().map(|t| (t, rates.fc)))
        .filter(|&(t, _)| !ends_in_dropout(ann, t))
        .collect();
    sites.sort_by_key(|s| std::cmp::Reverse(s.0));
    sites.dedup_by_key(|s| s.0);
    let mut out = ann.clone();
    // Highest index first so earlier indices stay valid.
    for (t, rate) in sites {
        out.insert_after(t, AbstractLayer::new("Dropout").arg(1, Literal::Float(rate)));
    }
    out
}

/// The rules applied to every candidate before the search: ReLU, then
/// global average pooling, then batch normalization.
pub fn transform_pre_search(ann: &AbstractNeuralNetwork) -> AbstractNeuralNetwork {
    apply_bn(&apply_gap(&apply_relu(ann)))
}

/// The dropout variant evaluated against the selected model.
pub fn transform_post_selection(best: &AbstractNeuralNetwork, rates: DropoutRates) -> AbstractNeuralNetwork {
    apply_dropout(best, rates)
}

pub fn apply(rule: TransformRule, ann: &AbstractNeuralNetwork, rates: DropoutRates) -> AbstractNeuralNetwork {
    match rule {
        TransformRule::BatchNorm => apply_bn(ann),
        TransformRule::GlobalAvgPool => apply_gap(ann),
        TransformRule::ActivationReLU => apply_relu(ann),
        TransformRule::Dropout => apply_dropout(ann, rates),
    }
}

/// Violations of the pre-search post-conditions, as readable strings.
pub fn pre_search_violations(ann: &AbstractNeuralNetwork) -> Vec<String> {
    let mut v = Vec::new();
    for (i, n) in ann.nodes.iter().enumerate() {
        if n.kind() == LayerKind::Flatten {
            v.push(format!("node {i} is Flatten"));
        }
        if ann.is_hidden_activation(i) && n.func != "relu" {
            v.push(format!("hidden activation {i} is {}", n.func));
        }
    }
    for &(f, t) in &ann.edges {
        if ann.nodes[f].kind() == LayerKind::Convolution && ann.nodes[t].kind() == LayerKind::Activation {
            v.push(format!("convolution {f} feeds activation {t} directly"));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(cin: i64, cout: i64) -> AbstractLayer {
        AbstractLayer::new("Conv2D").arg(1, Literal::Int(cin)).arg(2, Literal::Int(cout))
    }

    fn linear(cin: i64, cout: i64) -> AbstractLayer {
        AbstractLayer::new("linear").arg(1, Literal::Int(cin)).arg(2, Literal::Int(cout))
    }

    #[test]
    fn bn_goes_between_conv_and_activation() {
        let ann = AbstractNeuralNetwork::chain(vec![conv(3, 32), AbstractLayer::new("relu")]);
        let out = apply_bn(&ann);
        assert_eq!(out.nodes[1], AbstractLayer::new("BatchNorm2d").arg(1, Literal::Int(32)));
        assert_eq!(apply_bn(&out), out);
    }

    #[test]
    fn gap_replaces_every_flatten() {
        let ann = AbstractNeuralNetwork::chain(vec![
            AbstractLayer::new("Flatten"),
            AbstractLayer::new("Flatten"),
            linear(32, 32),
        ]);
        let out = apply_gap(&ann);
        assert_eq!(out.count_kind(LayerKind::Flatten), 0);
        assert_eq!(out.count_kind(LayerKind::GlobalPool), 2);
    }

    #[test]
    fn output_activation_is_kept() {
        let ann = AbstractNeuralNetwork::chain(vec![
            conv(3, 8),
            AbstractLayer::new("tanh"),
            AbstractLayer::new("Flatten"),
            linear(8, 2),
            AbstractLayer::new("softmax"),
        ]);
        let out = apply_relu(&ann);
        assert_eq!(out.nodes[1].func, "relu");
        assert_eq!(out.nodes[4].func, "softmax");
    }

    #[test]
    fn dropout_rule_on_figure_model() {
        let src = crate::miner::ProgramSource::new("f.py", include_str!("../fixtures/corpus/figure_model.py"));
        let ann = crate::miner::extract_models(&src).models.remove(0);
        let out = apply_dropout(&ann, DropoutRates::default());
        // One hidden dropout after the first pool; the second pool already
        // ends in dropout and the only linear layer is the output.
        assert_eq!(out.len(), ann.len() + 1);
        assert_eq!(out.nodes[3].func, "Dropout");
        assert_eq!(out.nodes[3].rate(), Some(0.25));
        assert_eq!(apply_dropout(&out, DropoutRates::default()), out);
    }
}
