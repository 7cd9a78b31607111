//! Naming tables for the mined framework's layer and optimizer APIs.
//!
//! Source code calls are resolved by the last segment of their callee
//! (`keras.layers.Conv2D` and `Conv2D` are the same layer); the canonical
//! names below are what abstract networks store.

/// How a source-level constructor maps onto an abstract node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CatalogEntry {
    /// Canonical node name, or `None` for `Activation(...)` whose node name
    /// is its first argument.
    pub func: Option<&'static str>,
    /// Layer whose `arg1` is reserved for the incoming channel count, so
    /// source positional argument `k` is stored as `arg{k+1}`.
    pub channel_slot: bool,
    /// Lower-case functional merge helpers (`add([a, b])`) take their input
    /// tensors as the first positional argument.
    pub functional_merge: bool,
}

const fn entry(func: &'static str, channel_slot: bool) -> CatalogEntry {
    CatalogEntry { func: Some(func), channel_slot, functional_merge: false }
}

const fn merge(func: &'static str) -> CatalogEntry {
    CatalogEntry { func: Some(func), channel_slot: false, functional_merge: true }
}

pub const ACTIVATION_CALLEE: &str = "Activation";

/// `Input` and `InputLayer` only carry the input shape; they never become
/// nodes.
pub fn is_input_callee(name: &str) -> bool {
    matches!(name, "Input" | "InputLayer")
}

pub fn is_model_callee(name: &str) -> bool {
    matches!(name, "Model" | "Functional")
}

pub fn is_sequential_callee(name: &str) -> bool {
    name == "Sequential"
}

pub fn lookup_layer(name: &str) -> Option<CatalogEntry> {
    let e = match name {
        "Conv2D" | "Convolution2D" => entry("Conv2D", true),
        "Conv1D" | "Convolution1D" => entry("Conv1D", true),
        "Conv3D" | "Convolution3D" => entry("Conv3D", true),
        "SeparableConv2D" | "SeparableConvolution2D" => entry("SeparableConv2D", true),
        "DepthwiseConv2D" => entry("DepthwiseConv2D", true),
        "Conv2DTranspose" | "Deconvolution2D" => entry("Conv2DTranspose", true),
        "Dense" => entry("linear", true),
        "BatchNormalization" => entry("BatchNorm2d", true),
        "MaxPooling2D" | "MaxPool2D" => entry("MaxPool2d", false),
        "MaxPooling1D" | "MaxPool1D" => entry("MaxPooling1D", false),
        "MaxPooling3D" | "MaxPool3D" => entry("MaxPooling3D", false),
        "AveragePooling2D" | "AvgPool2D" => entry("AveragePooling2D", false),
        "AveragePooling1D" => entry("AveragePooling1D", false),
        "GlobalAveragePooling2D" | "GlobalAvgPool2D" => entry("GlobalAvgPool2d", false),
        "GlobalMaxPooling2D" | "GlobalMaxPool2D" => entry("GlobalMaxPool2d", false),
        "GlobalAveragePooling1D" => entry("GlobalAveragePooling1D", false),
        "GlobalMaxPooling1D" => entry("GlobalMaxPooling1D", false),
        "Dropout" => entry("Dropout", false),
        "SpatialDropout2D" => entry("SpatialDropout2D", false),
        "AlphaDropout" => entry("AlphaDropout", false),
        "GaussianDropout" => entry("GaussianDropout", false),
        "GaussianNoise" => entry("GaussianNoise", false),
        "Flatten" => entry("Flatten", false),
        "Reshape" => entry("Reshape", false),
        "Permute" => entry("Permute", false),
        "RepeatVector" => entry("RepeatVector", false),
        "ZeroPadding2D" => entry("ZeroPadding2D", false),
        "UpSampling2D" => entry("UpSampling2D", false),
        "Cropping2D" => entry("Cropping2D", false),
        "Concatenate" => entry("Concatenate", false),
        "Add" => entry("Add", false),
        "Multiply" => entry("Multiply", false),
        "Subtract" => entry("Subtract", false),
        "Average" => entry("Average", false),
        "Maximum" => entry("Maximum", false),
        "Minimum" => entry("Minimum", false),
        "Dot" => entry("Dot", false),
        "concatenate" => merge("Concatenate"),
        "add" => merge("Add"),
        "multiply" => merge("Multiply"),
        "subtract" => merge("Subtract"),
        "average" => merge("Average"),
        "maximum" => merge("Maximum"),
        "minimum" => merge("Minimum"),
        "dot" => merge("Dot"),
        "ReLU" => entry("relu", false),
        "Softmax" => entry("softmax", false),
        "LeakyReLU" => entry("LeakyReLU", false),
        "PReLU" => entry("PReLU", false),
        "ELU" => entry("ELU", false),
        "ThresholdedReLU" => entry("ThresholdedReLU", false),
        "LayerNormalization" => entry("LayerNormalization", false),
        "Embedding" => entry("Embedding", false),
        "LSTM" => entry("LSTM", false),
        "GRU" => entry("GRU", false),
        "SimpleRNN" => entry("SimpleRNN", false),
        "ConvLSTM2D" => entry("ConvLSTM2D", false),
        "Bidirectional" => entry("Bidirectional", false),
        "TimeDistributed" => entry("TimeDistributed", false),
        "Masking" => entry("Masking", false),
        "Lambda" => entry("Lambda", false),
        ACTIVATION_CALLEE => CatalogEntry { func: None, channel_slot: false, functional_merge: false },
        _ => return None,
    };
    Some(e)
}

/// Whether a canonical node name reserves `arg1` for incoming channels.
pub fn has_channel_slot(func: &str) -> bool {
    matches!(
        func,
        "Conv2D"
            | "Conv1D"
            | "Conv3D"
            | "SeparableConv2D"
            | "DepthwiseConv2D"
            | "Conv2DTranspose"
            | "linear"
            | "BatchNorm2d"
    )
}

/// Activation functions that may be named by string (`activation='relu'`).
pub const STRING_ACTIVATIONS: &[&str] = &[
    "relu", "softmax", "tanh", "sigmoid", "elu", "selu", "softplus", "softsign", "hard_sigmoid",
    "exponential", "swish", "silu", "gelu", "relu6", "leaky_relu", "mish",
];

pub fn is_string_activation(name: &str) -> bool {
    STRING_ACTIVATIONS.contains(&name)
}

/// Source callee to emit for a canonical node name.
pub fn emit_callee(func: &str) -> &str {
    match func {
        "linear" => "Dense",
        "BatchNorm2d" => "BatchNormalization",
        "MaxPool2d" => "MaxPooling2D",
        "GlobalAvgPool2d" => "GlobalAveragePooling2D",
        "GlobalMaxPool2d" => "GlobalMaxPooling2D",
        other => other,
    }
}

/// Positional parameter names of the source constructors, used when a
/// positional argument has to be written as a keyword.
pub fn positional_signature(callee: &str) -> &'static [&'static str] {
    match callee {
        "Conv2D" | "Conv1D" | "Conv3D" | "SeparableConv2D" | "Conv2DTranspose" => {
            &["filters", "kernel_size", "strides", "padding"]
        }
        "DepthwiseConv2D" => &["kernel_size", "strides", "padding"],
        "Dense" => &["units", "activation"],
        "BatchNormalization" => &["axis", "momentum", "epsilon"],
        "MaxPooling2D" | "AveragePooling2D" => &["pool_size", "strides", "padding"],
        "Dropout" | "SpatialDropout2D" => &["rate", "noise_shape", "seed"],
        "Concatenate" => &["axis"],
        _ => &[],
    }
}

/// Optimizer constructors of the mined framework, by class name.
pub const OPTIMIZERS: &[&str] =
    &["SGD", "Adam", "RMSprop", "Adagrad", "Adadelta", "Adamax", "Nadam", "Ftrl", "AdamW"];

pub fn lookup_optimizer(name: &str) -> Option<&'static str> {
    OPTIMIZERS.iter().copied().find(|o| *o == name)
}

/// Optimizers named by string in `compile(optimizer='adam')`.
pub fn optimizer_from_string(name: &str) -> Option<&'static str> {
    let lower = name.to_ascii_lowercase();
    OPTIMIZERS.iter().copied().find(|o| o.to_ascii_lowercase() == lower)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliases_share_canonical_names() {
        assert_eq!(lookup_layer("MaxPool2D").unwrap().func, Some("MaxPool2d"));
        assert_eq!(lookup_layer("Convolution2D").unwrap().func, Some("Conv2D"));
        assert!(lookup_layer("concatenate").unwrap().functional_merge);
        assert!(lookup_layer("Sequential").is_none());
    }

    #[test]
    fn emit_names_invert_lookup() {
        for func in ["linear", "BatchNorm2d", "MaxPool2d", "GlobalAvgPool2d", "Conv2D", "Add"] {
            let callee = emit_callee(func);
            assert_eq!(lookup_layer(callee).unwrap().func, Some(func));
        }
    }

    #[test]
    fn string_optimizers() {
        assert_eq!(optimizer_from_string("adam"), Some("Adam"));
        assert_eq!(optimizer_from_string("rmsprop"), Some("RMSprop"));
        assert_eq!(optimizer_from_string("lbfgs"), None);
    }
}
