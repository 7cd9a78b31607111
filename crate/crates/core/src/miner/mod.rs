//! Model mining: framework detection, per-file model extraction and the
//! corpus funnel (extracted → complete → supported → deduplicated).

mod interp;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::ann::{ann_equal, normalize, AbstractNeuralNetwork, LayerKind, LayerVocabulary, OptimizerSpec};
use crate::literal::Literal;
use crate::python::ast::{walk_stmts, Module, StmtKind};
use crate::python::{parse_module, ParseError};

pub use interp::{MAX_INLINE_DEPTH, MAX_PATHS};

/// One source file of the corpus.
#[derive(Debug, Clone)]
pub struct ProgramSource {
    pub path: String,
    pub text: String,
    /// Dotted module names referenced by import statements anywhere in the
    /// file. `from m import x` contributes `m.x`.
    pub imports: Vec<String>,
    parsed: Result<Module, ParseError>,
}

impl ProgramSource {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let parsed = parse_module(&text);
        let mut imports = Vec::new();
        if let Ok(module) = &parsed {
            walk_stmts(&module.body, &mut |stmt| match &stmt.kind {
                StmtKind::Import(aliases) => imports.extend(aliases.iter().map(|a| a.name.clone())),
                StmtKind::ImportFrom { module, names } => {
                    for a in names {
                        if a.name == "*" {
                            imports.push(module.clone());
                        } else {
                            imports.push(format!("{module}.{}", a.name));
                        }
                    }
                }
                _ => {}
            });
        }
        ProgramSource { path: path.into(), text, imports, parsed }
    }

    pub fn parse_error(&self) -> Option<&ParseError> {
        self.parsed.as_ref().err()
    }
}

/// True iff some import statement references the Keras namespace
/// (`keras`, `tensorflow.keras`, `from tensorflow import keras`, ...).
pub fn detect_framework_program(src: &ProgramSource) -> bool {
    src.parsed.is_ok()
        && src.imports.iter().any(|m| m.trim_start_matches('.').split('.').any(|seg| seg == "keras"))
}

/// Models found in one file together with the reasons for anything that
/// was dropped.
#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub models: Vec<AbstractNeuralNetwork>,
    pub diagnostics: Vec<String>,
}

/// Extracts every model assembled along the control-flow paths of `src`.
///
/// Models are returned in source order of their creation site. When a
/// site yields different models on different paths, every complete variant
/// is kept; if none is complete, the variant on the first path is kept.
pub fn extract_models(src: &ProgramSource) -> Extraction {
    let mut ex = Extraction::default();
    let module = match &src.parsed {
        Ok(m) => m,
        Err(e) => {
            ex.diagnostics.push(format!("parse failure: {e}"));
            return ex;
        }
    };
    let mut interp = interp::Interp::new();
    let candidates = interp.run(module);
    ex.diagnostics = interp.into_diagnostics();

    let mut groups: BTreeMap<(Vec<usize>, usize), Vec<AbstractNeuralNetwork>> = BTreeMap::new();
    let mut reported: HashSet<String> = HashSet::new();
    for c in candidates {
        let line = c.line();
        let raw = match c.raw {
            Ok(raw) => raw,
            Err(reason) => {
                let msg = format!("line {line}: model dropped: {reason}");
                if reported.insert(msg.clone()) {
                    ex.diagnostics.push(msg);
                }
                continue;
            }
        };
        let mut ann = match normalize(&raw) {
            Ok(ann) => ann,
            Err(e) => {
                let msg = format!("line {line}: model dropped: {e}");
                if reported.insert(msg.clone()) {
                    ex.diagnostics.push(msg);
                }
                continue;
            }
        };
        relocate_input_shape(&mut ann);
        ann.optimizer = c.optimizer.filter(|o| o.validate().is_ok());
        ann.provenance = format!("{}:{line}", src.path);
        groups.entry((c.site, c.occurrence)).or_default().push(ann);
    }

    for ((site, _), variants) in groups {
        let mut kept: Vec<AbstractNeuralNetwork> = Vec::new();
        for v in variants.iter().filter(|v| is_complete(v)) {
            if !kept.iter().any(|k| same_model(k, v)) {
                kept.push(v.clone());
            }
        }
        if kept.is_empty() {
            kept.push(variants[0].clone());
        }
        if kept.len() > 1 {
            ex.diagnostics.push(format!(
                "line {}: {} complete variants on different control-flow paths",
                site.last().copied().unwrap_or(0),
                kept.len()
            ));
        }
        for k in kept {
            if !ex.models.iter().any(|m| same_model(m, &k)) {
                ex.models.push(k);
            }
        }
    }
    ex
}

fn same_model(a: &AbstractNeuralNetwork, b: &AbstractNeuralNetwork) -> bool {
    ann_equal(a, b) && a.optimizer == b.optimizer
}

/// Keeps one `input_shape` and moves it onto the first convolutional node.
fn relocate_input_shape(ann: &mut AbstractNeuralNetwork) {
    let carriers: Vec<usize> = (0..ann.nodes.len()).filter(|&i| ann.nodes[i].named.contains_key("input_shape")).collect();
    let Some(&first) = carriers.first() else { return };
    let target = ann.first_of_kind(LayerKind::Convolution).unwrap_or(first);
    if carriers == [target] {
        return;
    }
    let shape: Literal = ann.nodes[first].named.get("input_shape").cloned().expect("carrier");
    for &c in &carriers {
        ann.nodes[c].named.remove("input_shape");
    }
    let node = &mut ann.nodes[target];
    let rest = std::mem::take(&mut node.named);
    node.named.insert("input_shape".into(), shape);
    node.named.extend(rest);
}

/// Returns the optimizer associated with the first model created within
/// `lines` (inclusive).
pub fn extract_optimizer(src: &ProgramSource, lines: std::ops::RangeInclusive<usize>) -> Option<OptimizerSpec> {
    extract_models(src)
        .models
        .into_iter()
        .find(|m| provenance_line(&m.provenance).is_some_and(|l| lines.contains(&l)))
        .and_then(|m| m.optimizer)
}

fn provenance_line(p: &str) -> Option<usize> {
    p.rsplit(':').next()?.parse().ok()
}

/// A model is complete when it has an input (convolutional) layer, an
/// activation and an output (linear) layer.
pub fn is_complete(ann: &AbstractNeuralNetwork) -> bool {
    ann.count_kind(LayerKind::Convolution) > 0
        && ann.count_kind(LayerKind::Activation) > 0
        && ann.count_kind(LayerKind::Linear) > 0
}

pub fn is_supported(ann: &AbstractNeuralNetwork, vocab: &LayerVocabulary) -> bool {
    ann.nodes.iter().all(|n| vocab.supported_layers.contains(&n.func))
}

/// Keeps the first model of each [`ann_equal`] class, preserving order.
pub fn dedupe(models: Vec<AbstractNeuralNetwork>) -> Vec<AbstractNeuralNetwork> {
    let mut seen = HashSet::new();
    models.into_iter().filter(|m| seen.insert(m.structural_key())).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MiningReport {
    pub programs_scanned: usize,
    pub framework_programs: usize,
    pub models_extracted: usize,
    pub complete_models: usize,
    pub supported_models: usize,
    pub deduped_models: usize,
    pub diagnostics: Vec<(String, String)>,
}

/// Result of mining a set of programs: the funnel counts and the surviving
/// models.
#[derive(Debug, Clone, Default)]
pub struct MiningOutcome {
    pub report: MiningReport,
    pub models: Vec<AbstractNeuralNetwork>,
}

struct FileResult {
    framework: bool,
    extraction: Extraction,
}

fn mine_file(path: &str, text: &str) -> FileResult {
    let src = ProgramSource::new(path, text);
    if let Some(e) = src.parse_error() {
        return FileResult {
            framework: false,
            extraction: Extraction { models: Vec::new(), diagnostics: vec![format!("parse failure: {e}")] },
        };
    }
    if !detect_framework_program(&src) {
        return FileResult { framework: false, extraction: Extraction::default() };
    }
    FileResult { framework: true, extraction: extract_models(&src) }
}

/// Runs the mining funnel over `(path, text)` pairs. Files are processed in
/// parallel and merged in path order, so the outcome does not depend on the
/// input order or the thread count.
pub fn mine_sources(sources: &[(String, String)], vocab: &LayerVocabulary) -> MiningOutcome {
    let mut order: Vec<&(String, String)> = sources.iter().collect();
    order.sort_by(|a, b| a.0.cmp(&b.0));
    let results: Vec<FileResult> = order.par_iter().map(|(p, t)| mine_file(p, t)).collect();

    let mut report = MiningReport { programs_scanned: order.len(), ..Default::default() };
    let mut supported = Vec::new();
    for ((path, _), r) in order.iter().zip(results) {
        report.framework_programs += usize::from(r.framework);
        report.diagnostics.extend(r.extraction.diagnostics.into_iter().map(|d| (path.clone(), d)));
        for m in r.extraction.models {
            report.models_extracted += 1;
            if !is_complete(&m) {
                report.diagnostics.push((path.clone(), format!("{}: incomplete model", m.provenance)));
                continue;
            }
            report.complete_models += 1;
            if !is_supported(&m, vocab) {
                let bad: Vec<&str> = m
                    .nodes
                    .iter()
                    .filter(|n| !vocab.supported_layers.contains(&n.func))
                    .map(|n| n.func.as_str())
                    .collect();
                report.diagnostics.push((path.clone(), format!("{}: unsupported layers {bad:?}", m.provenance)));
                continue;
            }
            report.supported_models += 1;
            supported.push(m);
        }
    }
    let models = dedupe(supported);
    report.deduped_models = models.len();
    MiningOutcome { report, models }
}

/// Mines every `.py` file under `dir`. Notebooks and other files are not
/// read. Paths in provenance are relative to `dir` with `/` separators.
pub fn mine_corpus(dir: &Path, vocab: &LayerVocabulary) -> io::Result<MiningOutcome> {
    let mut files = Vec::new();
    collect_py_files(dir, &mut files)?;
    let mut sources = Vec::with_capacity(files.len());
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(&f);
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let bytes = fs::read(&f)?;
        sources.push((rel, String::from_utf8_lossy(&bytes).into_owned()));
    }
    Ok(mine_sources(&sources, vocab))
}

fn collect_py_files(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_py_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "py") {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::AbstractLayer;

    const FIGURE_SOURCE: &str = include_str!("../../fixtures/corpus/figure_model.py");

    fn mine(text: &str) -> Extraction {
        let src = ProgramSource::new("t.py", text);
        assert!(detect_framework_program(&src), "not detected");
        extract_models(&src)
    }

    #[test]
    fn figure_source_mines_to_figure_network() {
        let ex = mine(FIGURE_SOURCE);
        assert_eq!(ex.models.len(), 1, "{:?}", ex.diagnostics);
        let m = &ex.models[0];
        let funcs: Vec<&str> = m.nodes.iter().map(|n| n.func.as_str()).collect();
        assert_eq!(
            funcs,
            ["Conv2D", "relu", "MaxPool2d", "Conv2D", "relu", "MaxPool2d", "Dropout", "Flatten", "linear", "softmax"]
        );
        assert_eq!(m.nodes[3].positional.get(&1), Some(&Literal::Int(64)));
        assert!(!m.nodes[8].positional.contains_key(&1));
        let opt = m.optimizer.as_ref().unwrap();
        assert_eq!(opt.to_python_dict(), "{'func': 'SGD', 'lr': 0.01, 'decay': 1e-06}");
        assert_eq!(m.provenance, "t.py:6");
    }

    #[test]
    fn literal_loop_is_unrolled() {
        let ex = mine(
            "from keras.models import Sequential\nfrom keras.layers import *\nmodel = Sequential()\n\
             for i in range(3):\n    model.add(Conv2D(32, (3, 3), activation='relu'))\n\
             model.add(Flatten())\nmodel.add(Dense(10))\n",
        );
        assert_eq!(ex.models.len(), 1);
        assert_eq!(ex.models[0].count_kind(LayerKind::Convolution), 3);
    }

    #[test]
    fn variable_loop_is_dropped() {
        let ex = mine(
            "from keras.models import Sequential\nfrom keras.layers import *\nimport sys\nn = int(sys.argv[1])\n\
             model = Sequential()\nfor i in range(n):\n    model.add(Conv2D(32, (3, 3), activation='relu'))\n\
             model.add(Flatten())\nmodel.add(Dense(10))\n",
        );
        assert!(ex.models.is_empty());
        assert!(ex.diagnostics.iter().any(|d| d.contains("loop")), "{:?}", ex.diagnostics);
    }

    #[test]
    fn helper_is_inlined_and_string_optimizer_mapped() {
        let ex = mine(
            "from tensorflow import keras\nfrom tensorflow.keras import layers\n\
             def block(m, f):\n    m.add(layers.Conv2D(f, 3, activation='relu'))\n    m.add(layers.MaxPooling2D())\n\
             model = keras.Sequential()\nblock(model, 16)\nblock(model, 32)\nmodel.add(layers.Flatten())\n\
             model.add(layers.Dense(10, activation='softmax'))\nmodel.compile(optimizer='adam', loss='mse')\n",
        );
        assert_eq!(ex.models.len(), 1, "{:?}", ex.diagnostics);
        let m = &ex.models[0];
        assert_eq!(m.count_kind(LayerKind::Convolution), 2);
        assert_eq!(m.nodes[3].positional.get(&1), Some(&Literal::Int(16)));
        assert_eq!(m.optimizer, Some(OptimizerSpec::new("Adam")));
    }

    #[test]
    fn functional_graph_with_skip() {
        let ex = mine(
            "from keras.layers import Input, Conv2D, Add, Flatten, Dense\nfrom keras.models import Model\n\
             inp = Input(shape=(32, 32, 3))\nx = Conv2D(16, 3, padding='same', activation='relu')(inp)\n\
             y = Conv2D(16, 3, padding='same')(x)\nz = Add()([x, y])\nf = Flatten()(z)\n\
             out = Dense(10, activation='softmax')(f)\nmodel = Model(inputs=inp, outputs=out)\n",
        );
        assert_eq!(ex.models.len(), 1, "{:?}", ex.diagnostics);
        let m = &ex.models[0];
        let funcs: Vec<&str> = m.nodes.iter().map(|n| n.func.as_str()).collect();
        assert_eq!(funcs, ["Conv2D", "relu", "Conv2D", "Add", "Flatten", "linear", "softmax"]);
        assert_eq!(m.edges, vec![(0, 1), (1, 2), (1, 3), (2, 3), (3, 4), (4, 5), (5, 6)]);
        assert_eq!(m.nodes[0].input_shape(), Some(&[32, 32, 3][..]));
    }

    #[test]
    fn branches_keep_complete_variants() {
        let ex = mine(
            "import keras\nfrom keras.layers import *\nimport sys\nmodel = keras.models.Sequential()\n\
             if sys.argv[1] == 'big':\n    model.add(Conv2D(64, 3, activation='relu', input_shape=(28, 28, 1)))\n\
             else:\n    model.add(Conv2D(16, 3, activation='relu', input_shape=(28, 28, 1)))\n\
             model.add(Flatten())\nmodel.add(Dense(10))\n",
        );
        assert_eq!(ex.models.len(), 2);
        assert!(ex.diagnostics.iter().any(|d| d.contains("variants")));
    }

    #[test]
    fn framework_detection() {
        let yes = ProgramSource::new("a.py", "def f():\n    import keras.layers\n");
        let no = ProgramSource::new("b.py", "import matplotlib.pyplot as plt\nimport tensorflow as tf\n");
        let bad = ProgramSource::new("c.py", "print 'x'\n");
        assert!(detect_framework_program(&yes));
        assert!(!detect_framework_program(&no));
        assert!(!detect_framework_program(&bad));
    }

    #[test]
    fn completeness_and_support() {
        let vocab = LayerVocabulary::default();
        let m = mine(FIGURE_SOURCE).models.remove(0);
        assert!(is_complete(&m) && is_supported(&m, &vocab));
        let mut stripped = m.clone();
        let keep: Vec<AbstractLayer> =
            stripped.nodes.iter().filter(|n| n.kind() != LayerKind::Activation).cloned().collect();
        stripped = AbstractNeuralNetwork::chain(keep);
        assert!(!is_complete(&stripped));
        let lstm = AbstractNeuralNetwork::chain(vec![AbstractLayer::new("LSTM")]);
        assert!(!is_supported(&lstm, &vocab));
    }

    #[test]
    fn dedupe_keeps_first() {
        let a = AbstractNeuralNetwork::chain(vec![AbstractLayer::new("Flatten")]).with_provenance("x");
        let b = AbstractNeuralNetwork::chain(vec![AbstractLayer::new("relu")]);
        let out = dedupe(vec![a.clone(), a.clone().with_provenance("y"), b.clone()]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].provenance, "x");
    }
}
