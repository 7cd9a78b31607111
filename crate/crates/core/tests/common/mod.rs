//! Random Keras programs, corpora and networks shared by the integration
//! tests.

#![allow(dead_code)]

use std::fmt::Write as _;

use nas_curator::miner::{extract_models, ProgramSource};
use nas_curator::AbstractNeuralNetwork;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const FIXTURE_CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus");

/// Knobs for [`cnn_source`].
#[derive(Debug, Clone, Copy)]
pub struct GenOptions {
    /// Chance of a hidden activation other than ReLU (tanh is outside the
    /// default vocabulary).
    pub tanh: f64,
    /// Chance of an average-pooling layer (also unsupported).
    pub avg_pool: f64,
    /// Chance of a program without convolutions.
    pub mlp: f64,
    /// Chance of a tensor-graph program with a residual connection.
    pub functional: f64,
}

impl GenOptions {
    pub const SUPPORTED: GenOptions = GenOptions { tanh: 0.0, avg_pool: 0.0, mlp: 0.0, functional: 0.3 };
    pub const MIXED: GenOptions = GenOptions { tanh: 0.2, avg_pool: 0.1, mlp: 0.15, functional: 0.3 };
}

/// What the generator expects the miner to make of one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Expect {
    pub complete: bool,
    pub supported: bool,
}

const RATES: [&str; 5] = ["0.1", "0.2", "0.25", "0.3", "0.5"];
const FILTERS: [u32; 5] = [8, 16, 32, 48, 64];
const SIDES: [u32; 5] = [16, 28, 32, 48, 64];

fn optimizer_line(rng: &mut ChaCha8Rng) -> (Option<String>, String) {
    match rng.random_range(0..5) {
        0 => (None, "'adam'".into()),
        1 => (Some(format!("opt = SGD(lr={}, momentum=0.9)", ["0.1", "0.01", "0.001"].choose(rng).unwrap())), "opt".into()),
        2 => (Some(format!("opt = Adam(lr={})", ["0.001", "0.0005"].choose(rng).unwrap())), "opt".into()),
        3 => (Some("opt = RMSprop()".into()), "opt".into()),
        _ => (None, "'sgd'".into()),
    }
}

struct Emitter {
    functional: bool,
    lines: Vec<String>,
    var: usize,
}

impl Emitter {
    fn layer(&mut self, call: String) {
        if self.functional {
            let prev = if self.var == 0 { "inp".to_string() } else { format!("x{}", self.var) };
            self.var += 1;
            self.lines.push(format!("x{} = {call}({prev})", self.var));
        } else {
            self.lines.push(format!("model.add({call})"));
        }
    }
}

/// A random convolutional Keras program with one model, and the
/// generator's expectation for it.
pub fn cnn_source(rng: &mut ChaCha8Rng, o: GenOptions) -> (String, Expect) {
    let functional = rng.random_bool(o.functional);
    let mlp = rng.random_bool(o.mlp);
    let mut e = Emitter { functional, lines: Vec::new(), var: 0 };
    let mut supported = true;
    let side = *SIDES.choose(rng).unwrap();
    let channels = if rng.random_bool(0.5) { 1 } else { 3 };
    let mut spatial = side;
    let mut filters = *FILTERS.choose(rng).unwrap();
    let act = |rng: &mut ChaCha8Rng, supported: &mut bool| {
        if rng.random_bool(o.tanh) {
            *supported = false;
            "tanh"
        } else {
            "relu"
        }
    };

    if functional {
        e.lines.push(format!("inp = Input(shape=({side}, {side}, {channels}))"));
    } else {
        e.lines.push("model = Sequential()".into());
    }
    let shape_kw = if functional { String::new() } else { format!(", input_shape=({side}, {side}, {channels})") };

    if mlp {
        e.layer(format!("Flatten({})", shape_kw.trim_start_matches(", ")));
        e.layer(format!("Dense({}, activation='relu')", 32 * rng.random_range(1..5)));
    } else {
        let a = act(rng, &mut supported);
        e.layer(format!("Conv2D({filters}, (3, 3), padding='same', activation='{a}'{shape_kw})"));
        let blocks = rng.random_range(0..4);
        for b in 0..blocks {
            let residual = functional && b == 0 && rng.random_bool(0.5);
            if residual {
                let skip = e.var;
                e.layer(format!("Conv2D({filters}, (3, 3), padding='same')"));
                e.layer("BatchNormalization()".into());
                let y = e.var;
                e.var += 1;
                e.lines.push(format!("x{} = Add()([x{y}, x{skip}])", e.var));
                e.layer("Activation('relu')".into());
                continue;
            }
            if rng.random_bool(0.5) {
                filters = *FILTERS.choose(rng).unwrap();
            }
            let a = act(rng, &mut supported);
            if rng.random_bool(0.4) {
                e.layer(format!("Conv2D({filters}, (3, 3), padding='same')"));
                if rng.random_bool(0.5) {
                    e.layer("BatchNormalization()".into());
                }
                e.layer(format!("Activation('{a}')"));
            } else {
                e.layer(format!("Conv2D({filters}, (3, 3), padding='same', activation='{a}')"));
            }
            if spatial >= 4 && rng.random_bool(0.6) {
                if rng.random_bool(o.avg_pool) {
                    supported = false;
                    e.layer("AveragePooling2D((2, 2))".into());
                } else {
                    e.layer("MaxPooling2D((2, 2))".into());
                }
                spatial /= 2;
            }
            if rng.random_bool(0.3) {
                e.layer(format!("Dropout({})", RATES.choose(rng).unwrap()));
            }
        }
        if rng.random_bool(0.5) {
            e.layer("Flatten()".into());
        } else {
            e.layer("GlobalAveragePooling2D()".into());
        }
        if rng.random_bool(0.5) {
            e.layer(format!("Dense({}, activation='relu')", 32 * rng.random_range(1..5)));
            if rng.random_bool(0.4) {
                e.layer(format!("Dropout({})", RATES.choose(rng).unwrap()));
            }
        }
    }
    let classes = rng.random_range(2..12);
    e.layer(format!("Dense({classes}, activation='softmax')"));
    if functional {
        e.lines.push(format!("model = Model(inputs=inp, outputs=x{})", e.var));
    }
    let (opt_def, opt_ref) = optimizer_line(rng);
    if let Some(d) = opt_def {
        e.lines.push(d);
    }
    e.lines.push(format!("model.compile(loss='categorical_crossentropy', optimizer={opt_ref})"));

    let mut src = String::from(
        "from keras.models import Sequential, Model\n\
         from keras.layers import Input, Conv2D, Dense, Dropout, Flatten, Activation, Add\n\
         from keras.layers import MaxPooling2D, AveragePooling2D, BatchNormalization, GlobalAveragePooling2D\n\
         from keras.optimizers import SGD, Adam, RMSprop\n\n",
    );
    for l in &e.lines {
        let _ = writeln!(src, "{l}");
    }
    (src, Expect { complete: !mlp, supported: supported && !mlp })
}

/// A random corpus of `(path, text)` files and the per-model expectations
/// for the model-bearing files.
pub fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<(String, String)>, Vec<Expect>) {
    let n = rng.random_range(1..15);
    let mut files: Vec<(String, String)> = Vec::new();
    let mut per_file: Vec<Option<Expect>> = Vec::new();
    for i in 0..n {
        let path = format!("repo{}/file{i}.py", rng.random_range(0..3));
        let (text, ex) = match rng.random_range(0..10) {
            0 => ("import numpy as np\n\ndef scale(x):\n    return x / 255.0\n".to_string(), None),
            1 => ("from keras.models import Sequential\nprint \"old syntax\"\n".to_string(), None),
            2 if !files.is_empty() => {
                let k = rng.random_range(0..files.len());
                (files[k].1.clone(), per_file[k])
            }
            _ => {
                let (src, ex) = cnn_source(rng, GenOptions::MIXED);
                (src, Some(ex))
            }
        };
        files.push((path, text));
        per_file.push(ex);
    }
    (files, per_file.into_iter().flatten().collect())
}

/// `n` mined networks from random supported programs.
pub fn random_anns(seed: u64, n: usize, o: GenOptions) -> Vec<AbstractNeuralNetwork> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while out.len() < n {
        let (src, _) = cnn_source(&mut r, o);
        let ps = ProgramSource::new(format!("gen{i}.py"), src);
        let mut models = extract_models(&ps).models;
        assert_eq!(models.len(), 1, "generated program did not mine:\n{}", ps.text);
        out.push(models.remove(0));
        i += 1;
    }
    out
}
