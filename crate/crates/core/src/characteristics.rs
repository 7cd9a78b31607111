//! Dataset meta-features: input size, input channel and output channel,
//! derived either from a mined model or from a dataset on disk.

use std::fs;
use std::path::{Path, PathBuf};

use image::ImageDecoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::{AbstractNeuralNetwork, LayerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataCharacteristics {
    pub height: u32,
    pub width: u32,
    pub input_channel: u32,
    pub output_channel: u32,
    #[serde(default)]
    pub task: Task,
}

/// Where the channel axis sits in an `input_shape` triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelLayout {
    First,
    Last,
}

#[derive(Debug, Error)]
pub enum CharError {
    #[error("model has no input_shape")]
    MissingInputShape,
    #[error("input_shape {0:?} does not have three positive dimensions")]
    BadShape(Vec<i64>),
    #[error("input_shape {0:?} has a plausible channel count at both ends")]
    AmbiguousShape(Vec<i64>),
    #[error("input_shape {0:?} has no channel count of 1 or 3 at either end")]
    NoChannelAxis(Vec<i64>),
    #[error("model has no output layer with a unit count")]
    MissingOutputUnits,
    #[error("dataset at {0} has no class directories with images")]
    EmptyDataset(PathBuf),
    #[error("dataset images disagree on channel count ({0} vs {1})")]
    InconsistentImages(u32, u32),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("cannot read image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DataCharacteristics {
    pub fn new(height: u32, width: u32, input_channel: u32, output_channel: u32) -> Self {
        DataCharacteristics { height, width, input_channel, output_channel, task: Task::Classification }
    }

    /// `input_shape` value for this dataset in the given layout.
    pub fn input_shape(&self, layout: ChannelLayout) -> Vec<i64> {
        let (h, w, c) = (self.height as i64, self.width as i64, self.input_channel as i64);
        match layout {
            ChannelLayout::First => vec![c, h, w],
            ChannelLayout::Last => vec![h, w, c],
        }
    }
}

/// Splits an `input_shape` into its layout and `(c, h, w)`.
pub fn decode_shape(shape: &[i64]) -> Result<(ChannelLayout, u32, u32, u32), CharError> {
    let bad = || CharError::BadShape(shape.to_vec());
    let [a, b, c] = shape else { return Err(bad()) };
    let dims: Vec<u32> = [a, b, c].iter().map(|v| u32::try_from(**v).ok().filter(|&d| d > 0)).collect::<Option<_>>().ok_or_else(bad)?;
    let first = matches!(dims[0], 1 | 3);
    let last = matches!(dims[2], 1 | 3);
    match (first, last) {
        (true, true) => Err(CharError::AmbiguousShape(shape.to_vec())),
        (true, false) => Ok((ChannelLayout::First, dims[0], dims[1], dims[2])),
        (false, true) => Ok((ChannelLayout::Last, dims[2], dims[0], dims[1])),
        (false, false) => Err(CharError::NoChannelAxis(shape.to_vec())),
    }
}

/// Index of the node carrying `input_shape`, preferring the first
/// convolution.
pub fn input_node(ann: &AbstractNeuralNetwork) -> Option<usize> {
    let conv = ann.first_of_kind(LayerKind::Convolution);
    conv.filter(|&c| ann.nodes[c].input_shape().is_some())
        .or_else(|| (0..ann.nodes.len()).find(|&i| ann.nodes[i].input_shape().is_some()))
}

/// Reads the characteristics a model was written for.
///
/// The task is regression when the output layer has a single unit and no
/// activation follows it; otherwise classification.
pub fn from_model(ann: &AbstractNeuralNetwork) -> Result<DataCharacteristics, CharError> {
    let carrier = input_node(ann).ok_or(CharError::MissingInputShape)?;
    let shape = ann.nodes[carrier].input_shape().ok_or(CharError::MissingInputShape)?;
    let (_, c, h, w) = decode_shape(shape)?;
    let out = ann.last_of_kind(LayerKind::Linear).ok_or(CharError::MissingOutputUnits)?;
    let units = ann.nodes[out].out_channels().filter(|&u| u >= 1).ok_or(CharError::MissingOutputUnits)?;
    let units = u32::try_from(units).map_err(|_| CharError::MissingOutputUnits)?;
    let activated = ann.successors(out).iter().any(|&s| ann.nodes[s].kind() == LayerKind::Activation);
    let task = if units == 1 && !activated { Task::Regression } else { Task::Classification };
    Ok(DataCharacteristics { height: h, width: w, input_channel: c, output_channel: units, task })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    height: u32,
    width: u32,
    channels: u32,
    #[serde(default)]
    num_classes: Option<u32>,
    #[serde(default)]
    task: Task,
}

/// Parses a dataset manifest. Regression manifests get one output channel.
pub fn from_manifest(text: &str) -> Result<DataCharacteristics, CharError> {
    let m: Manifest = serde_json::from_str(text).map_err(|e| CharError::Manifest(e.to_string()))?;
    if m.height == 0 || m.width == 0 {
        return Err(CharError::Manifest("height and width must be positive".into()));
    }
    if !matches!(m.channels, 1 | 3) {
        return Err(CharError::Manifest(format!("channels must be 1 or 3, got {}", m.channels)));
    }
    let output_channel = match m.task {
        Task::Regression => 1,
        Task::Classification => match m.num_classes {
            Some(k) if k >= 1 => k,
            _ => return Err(CharError::Manifest("classification needs num_classes >= 1".into())),
        },
    };
    Ok(DataCharacteristics { height: m.height, width: m.width, input_channel: m.channels, output_channel, task: m.task })
}

/// Reads characteristics from a manifest file or an image directory laid
/// out as one subdirectory per class. The size comes from the first image
/// in path order.
pub fn from_dataset(path: &Path) -> Result<DataCharacteristics, CharError> {
    if path.is_file() {
        return from_manifest(&fs::read_to_string(path)?);
    }
    let mut classes: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(path)? {
        let p = entry?.path();
        if p.is_dir() {
            classes.push(p);
        }
    }
    classes.sort();
    let mut images: Vec<PathBuf> = Vec::new();
    for class in &classes {
        let mut found: Vec<PathBuf> = Vec::new();
        for entry in fs::read_dir(class)? {
            let p = entry?.path();
            let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if p.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
                found.push(p);
            }
        }
        images.extend(found);
    }
    images.sort();
    if images.is_empty() {
        return Err(CharError::EmptyDataset(path.to_path_buf()));
    }
    let headers: Vec<(u32, u32, u32)> = images.par_iter().map(|p| image_header(p)).collect::<Result<_, _>>()?;
    let (w, h, c) = headers[0];
    if let Some(other) = headers.iter().find(|x| x.2 != c) {
        return Err(CharError::InconsistentImages(c, other.2));
    }
    Ok(DataCharacteristics::new(h, w, c, classes.len() as u32))
}

/// `(width, height, channels)` from an image header. Alpha channels are
/// not counted.
fn image_header(path: &Path) -> Result<(u32, u32, u32), CharError> {
    let err = |e: &dyn std::fmt::Display| CharError::Image { path: path.to_path_buf(), reason: e.to_string() };
    let reader = image::ImageReader::open(path)?.with_guessed_format()?;
    let decoder = reader.into_decoder().map_err(|e| err(&e))?;
    let (w, h) = decoder.dimensions();
    let c = match decoder.color_type().channel_count() {
        1 | 2 => 1,
        _ => 3,
    };
    Ok((w, h, c))
}
