//! Static shape tracing over an ANN, used to reject adaptations that cannot
//! fit the target input and to count parameters.
//!
//! Convolutions without a `kernel_size` are traced with a 3×3 kernel.

use thiserror::Error;

use crate::ann::{AbstractLayer, AbstractNeuralNetwork, LayerKind};
use crate::characteristics::decode_shape;
use crate::literal::Literal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    /// Channels, height, width.
    Spatial(u64, u64, u64),
    Vector(u64),
}

impl Tensor {
    fn channels(self) -> u64 {
        match self {
            Tensor::Spatial(c, ..) | Tensor::Vector(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("model has no usable input_shape: {0}")]
    Input(String),
    #[error("node {node} (`{func}`) cannot be applied to {input:?}: {reason}")]
    Unadaptable { node: usize, func: String, input: Tensor, reason: String },
    #[error("node {0} has no traced input")]
    Disconnected(usize),
    #[error("graph has a cycle")]
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub params: u64,
    pub depth: usize,
    pub output: Tensor,
}

fn pair(v: Option<&Literal>, default: (u64, u64)) -> Option<(u64, u64)> {
    match v {
        None => Some(default),
        Some(Literal::Int(k)) if *k > 0 => Some((*k as u64, *k as u64)),
        Some(Literal::IntList(l)) => match l.as_slice() {
            [a, b] if *a > 0 && *b > 0 => Some((*a as u64, *b as u64)),
            [a] if *a > 0 => Some((*a as u64, *a as u64)),
            _ => None,
        },
        Some(_) => None,
    }
}

fn param<'a>(node: &'a AbstractLayer, name: &str, pos: u32) -> Option<&'a Literal> {
    node.named.get(name).or_else(|| node.positional.get(&pos))
}

fn same_padding(node: &AbstractLayer, pos: u32) -> bool {
    param(node, "padding", pos).and_then(Literal::as_str) == Some("same")
}

fn window(h: u64, w: u64, k: (u64, u64), s: (u64, u64), same: bool) -> Option<(u64, u64)> {
    if same {
        Some((h.div_ceil(s.0), w.div_ceil(s.1)))
    } else if h >= k.0 && w >= k.1 {
        Some(((h - k.0) / s.0 + 1, (w - k.1) / s.1 + 1))
    } else {
        None
    }
}

/// Traces the network from the `input_shape` of its input node.
pub fn trace(ann: &AbstractNeuralNetwork) -> Result<Trace, ShapeError> {
    let carrier = crate::characteristics::input_node(ann).ok_or_else(|| ShapeError::Input("missing".into()))?;
    let shape = ann.nodes[carrier].input_shape().expect("carrier");
    let (_, c, h, w) = decode_shape(shape).map_err(|e| ShapeError::Input(e.to_string()))?;
    let order = ann.topological_order().map_err(|_| ShapeError::Cycle)?;
    let mut out: Vec<Option<Tensor>> = vec![None; ann.nodes.len()];
    let mut params = 0u64;

    for &i in &order {
        let node = &ann.nodes[i];
        let preds = ann.predecessors(i);
        let inputs: Vec<Tensor> = if i == carrier || preds.is_empty() {
            vec![Tensor::Spatial(c as u64, h as u64, w as u64)]
        } else {
            preds.iter().map(|&p| out[p].ok_or(ShapeError::Disconnected(i))).collect::<Result<_, _>>()?
        };
        let input = inputs[0];
        let fail = |reason: &str| ShapeError::Unadaptable {
            node: i,
            func: node.func.clone(),
            input,
            reason: reason.to_string(),
        };
        let result = match node.kind() {
            LayerKind::Convolution => {
                let Tensor::Spatial(cin, h, w) = input else { return Err(fail("expects a spatial input")) };
                let depthwise = node.func == "DepthwiseConv2D";
                let (kpos, spos, ppos) = if depthwise { (2, 3, 4) } else { (3, 4, 5) };
                let k = pair(param(node, "kernel_size", kpos), (3, 3)).ok_or_else(|| fail("bad kernel_size"))?;
                let s = pair(param(node, "strides", spos), (1, 1)).ok_or_else(|| fail("bad strides"))?;
                let filters = if depthwise {
                    cin * param(node, "depth_multiplier", 0).and_then(Literal::as_i64).unwrap_or(1).max(1) as u64
                } else {
                    node.out_channels().filter(|&f| f > 0).ok_or_else(|| fail("no filter count"))? as u64
                };
                let (oh, ow) = if node.func == "Conv2DTranspose" {
                    (h * s.0 + k.0.saturating_sub(s.0), w * s.1 + k.1.saturating_sub(s.1))
                } else {
                    window(h, w, k, s, same_padding(node, ppos)).ok_or_else(|| fail("kernel larger than input"))?
                };
                let bias = match node.named.get("use_bias") {
                    Some(Literal::Int(0)) => 0,
                    _ => filters,
                };
                params += match node.func.as_str() {
                    "DepthwiseConv2D" => k.0 * k.1 * filters,
                    "SeparableConv2D" => k.0 * k.1 * cin + cin * filters,
                    _ => k.0 * k.1 * cin * filters,
                } + bias;
                Tensor::Spatial(filters, oh, ow)
            }
            LayerKind::Linear => {
                let units = node.out_channels().filter(|&u| u > 0).ok_or_else(|| fail("no unit count"))? as u64;
                let fan_in = input.channels();
                params += fan_in * units + units;
                match input {
                    Tensor::Spatial(_, h, w) => Tensor::Spatial(units, h, w),
                    Tensor::Vector(_) => Tensor::Vector(units),
                }
            }
            LayerKind::BatchNorm => {
                params += 4 * input.channels();
                input
            }
            LayerKind::MaxPool | LayerKind::AvgPool => {
                let Tensor::Spatial(c, h, w) = input else { return Err(fail("expects a spatial input")) };
                let k = pair(param(node, "pool_size", 1), (2, 2)).ok_or_else(|| fail("bad pool_size"))?;
                let s = pair(param(node, "strides", 2), k).ok_or_else(|| fail("bad strides"))?;
                let (oh, ow) = window(h, w, k, s, same_padding(node, 3)).ok_or_else(|| fail("pool larger than input"))?;
                if oh == 0 || ow == 0 {
                    return Err(fail("pooling reduces the input below 1×1"));
                }
                Tensor::Spatial(c, oh, ow)
            }
            LayerKind::GlobalPool => Tensor::Vector(input.channels()),
            LayerKind::Flatten => match input {
                Tensor::Spatial(c, h, w) => Tensor::Vector(c * h * w),
                v => v,
            },
            LayerKind::Add => {
                if inputs.iter().any(|t| *t != input) {
                    return Err(fail("add inputs differ in shape"));
                }
                input
            }
            LayerKind::Concatenate => {
                let total: u64 = inputs.iter().map(|t| t.channels()).sum();
                match input {
                    Tensor::Spatial(_, h, w) => {
                        if inputs.iter().any(|t| !matches!(t, Tensor::Spatial(_, a, b) if *a == h && *b == w)) {
                            return Err(fail("concatenate inputs differ in spatial size"));
                        }
                        Tensor::Spatial(total, h, w)
                    }
                    Tensor::Vector(_) => Tensor::Vector(total),
                }
            }
            LayerKind::Dropout | LayerKind::Activation | LayerKind::Other => input,
        };
        out[i] = Some(result);
    }
    let last = *order.last().ok_or_else(|| ShapeError::Input("empty network".into()))?;
    Ok(Trace { params, depth: ann.nodes.len(), output: out[last].expect("traced") })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(filters: i64) -> AbstractLayer {
        AbstractLayer::new("Conv2D").arg(2, Literal::Int(filters)).kwarg("kernel_size", Literal::IntList(vec![3, 3]))
    }

    #[test]
    fn counts_parameters_by_hand() {
        let ann = AbstractNeuralNetwork::chain(vec![
            conv(8).kwarg("input_shape", Literal::IntList(vec![28, 28, 1])),
            AbstractLayer::new("relu"),
            AbstractLayer::new("MaxPool2d"),
            AbstractLayer::new("Flatten"),
            AbstractLayer::new("linear").arg(2, Literal::Int(10)),
        ]);
        let t = trace(&ann).unwrap();
        // conv: 3*3*1*8 + 8 = 80; 26x26 -> pool 13x13; dense: 8*13*13*10 + 10.
        assert_eq!(t.params, 80 + 8 * 169 * 10 + 10);
        assert_eq!(t.output, Tensor::Vector(10));
    }

    #[test]
    fn pooling_below_one_pixel_fails() {
        let mut nodes = vec![conv(4).kwarg("input_shape", Literal::IntList(vec![8, 8, 1]))];
        for _ in 0..4 {
            nodes.push(AbstractLayer::new("MaxPool2d"));
        }
        assert!(matches!(trace(&AbstractNeuralNetwork::chain(nodes)), Err(ShapeError::Unadaptable { .. })));
    }
}
