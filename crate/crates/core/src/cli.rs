//! Command-line interface. Exit codes: 0 on success, 1 on a domain error,
//! 2 on a usage error.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::adapt::{adapt, AdaptOptions};
use crate::ann::{AbstractNeuralNetwork, LayerVocabulary};
use crate::characteristics::from_dataset;
use crate::config::PipelineConfig;
use crate::corpus::{collect_metadata, save_metadata, Fetcher, LiveFetcher, OfflineFetcher};
use crate::database::{compute_usage_stats, ModelDatabase};
use crate::harness::Selection;
use crate::json::to_canonical_string;
use crate::matching::{filter_most_used, select_initial};
use crate::miner::mine_corpus;
use crate::pipeline::{self, database_from_mining, PipelineReport};
use crate::transform::{transform_post_selection, transform_pre_search, DropoutRates};

#[derive(Debug, Parser)]
#[command(name = "nas-curator", version, about = "Mine, match, transform and adapt warm-start CNN models")]
struct Cli {
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect repository metadata for a creation-date window.
    Fetch(FetchArgs),
    /// Mine a source corpus into a model database.
    Mine(MineArgs),
    /// Database inspection.
    Db {
        #[command(subcommand)]
        command: DbCommand,
    },
    /// Select the initial candidates for a dataset.
    Match(MatchArgs),
    /// Apply the transformation rules to one model.
    Transform(TransformArgs),
    /// Adapt one model to a dataset and emit its source.
    Adapt(AdaptArgs),
    /// Match, transform, adapt and evaluate candidates from a database.
    Select(SelectArgs),
    /// Run everything from a corpus or database.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Subcommand)]
enum DbCommand {
    /// Activation and dropout usage counts.
    Stats {
        /// Model database file.
        #[arg(long)]
        db: PathBuf,
    },
}

#[derive(Debug, Args)]
struct FetchArgs {
    /// First creation date, YYYY-MM-DD.
    #[arg(long)]
    start: NaiveDate,
    /// Last creation date, inclusive.
    #[arg(long)]
    end: NaiveDate,
    /// Keep this many most-starred repositories.
    #[arg(long, default_value_t = 10_000)]
    top: usize,
    /// Read saved responses from this directory instead of the network.
    #[arg(long)]
    offline: Option<PathBuf>,
    /// Cache live responses here.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Parallel date queries.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Metadata file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MineArgs {
    /// Directory of Python sources, searched recursively.
    #[arg(long)]
    corpus: PathBuf,
    /// Database file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Manifest file or image directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Seed for clustering and evaluation.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct MatchArgs {
    /// Model database file.
    #[arg(long)]
    db: PathBuf,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// G-means significance level.
    #[arg(long)]
    alpha: Option<f64>,
    /// Candidate count above which filtering applies.
    #[arg(long)]
    threshold: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// A single network as JSON.
    #[arg(long, conflicts_with_all = ["db", "index"])]
    model: Option<PathBuf>,
    /// Model database file.
    #[arg(long, requires = "index")]
    db: Option<PathBuf>,
    /// Record index in the database.
    #[arg(long, requires = "db")]
    index: Option<usize>,
}

#[derive(Debug, Args)]
struct TransformArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Apply the dropout rule instead of the pre-search rules.
    #[arg(long)]
    with_dropout: bool,
    /// Write the transformed network here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AdaptArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// `sequential` or `functional`.
    #[arg(long)]
    dialect: Option<String>,
    /// Fail instead of rewriting positional gaps as keywords.
    #[arg(long)]
    strict: bool,
    /// Write the emitted source here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Model database file.
    #[arg(long)]
    db: PathBuf,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Directory of Python sources to mine.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Model database file, used when no corpus is given.
    #[arg(long)]
    db: Option<PathBuf>,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

type Outcome = Result<String, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn json_text<T: Serialize>(v: &T) -> String {
    to_canonical_string(&serde_json::to_value(v).expect("serializable")) + "\n"
}

fn write_artifact(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, String> {
    match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(err),
        None => Ok(PipelineConfig::default()),
    }
}

fn apply_dataset(config: &mut PipelineConfig, d: &DatasetArgs) -> Result<(), String> {
    if let Some(m) = &d.manifest {
        config.manifest_path = Some(m.clone());
    }
    if let Some(s) = d.seed {
        config.seed = s;
    }
    config.validate().map_err(err)
}

fn load_model(args: &ModelArgs, vocab: &LayerVocabulary) -> Result<AbstractNeuralNetwork, String> {
    match (&args.model, &args.db, args.index) {
        (Some(p), _, _) => {
            let text = fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            let v: Value = serde_json::from_str(&text).map_err(err)?;
            AbstractNeuralNetwork::from_json(&v).map_err(err)
        }
        (None, Some(db), Some(i)) => {
            let db = ModelDatabase::load(db, vocab).map_err(err)?;
            db.records.get(i).map(|r| r.ann.clone()).ok_or_else(|| format!("no record {i} in a database of {}", db.len()))
        }
        _ => Err("give --model or --db with --index".into()),
    }
}

fn selection_table(s: &Selection, out: &mut String) {
    let _ = writeln!(out, "{:>5}  {:>10}  {:>10}  {:>5}  provenance", "cand", "cost", "params", "depth");
    for r in &s.report {
        let cand = r.candidate.map_or("drop".to_string(), |c| c.to_string());
        match &r.result {
            Some(e) => {
                let _ = writeln!(out, "{cand:>5}  {:>10.6}  {:>10}  {:>5}  {}", e.cost, e.params, e.depth, r.provenance);
            }
            None => {
                let _ = writeln!(out, "{cand:>5}  failed: {}  {}", r.error.as_deref().unwrap_or(""), r.provenance);
            }
        }
    }
    let _ = writeln!(
        out,
        "best: candidate {} ({}) cost {:.6}{}",
        s.best_index,
        s.best.ann.provenance,
        s.best_result.cost,
        if s.dropout_selected { " with dropout" } else { "" }
    );
}

fn fetch(cli: &Cli, a: &FetchArgs) -> Outcome {
    let fetcher: Box<dyn Fetcher> = match &a.offline {
        Some(dir) => Box::new(OfflineFetcher::new(dir)),
        None => Box::new(LiveFetcher::new(a.cache.clone())),
    };
    let repos = collect_metadata(fetcher.as_ref(), a.start, a.end, a.top, a.concurrency).map_err(err)?;
    if let Some(p) = &a.out {
        save_metadata(&repos, p).map_err(err)?;
    }
    if cli.json {
        return Ok(json_text(&repos));
    }
    let mut s = String::new();
    for r in &repos {
        let _ = writeln!(s, "{:>7}  {}  {}", r.stars, r.created, r.full_name);
    }
    let _ = writeln!(s, "{} repositories", repos.len());
    Ok(s)
}

fn mine(cli: &Cli, a: &MineArgs, vocab: &LayerVocabulary) -> Outcome {
    let outcome = mine_corpus(&a.corpus, vocab).map_err(|e| format!("cannot read corpus {}: {e}", a.corpus.display()))?;
    let report = outcome.report.clone();
    let (db, skipped) = database_from_mining(outcome, vocab);
    if let Some(p) = &a.out {
        db.save(p).map_err(err)?;
    }
    if cli.json {
        return Ok(json_text(&serde_json::json!({ "report": report, "database_size": db.len(), "skipped": skipped })));
    }
    let mut s = String::new();
    for (k, v) in [
        ("programs scanned", report.programs_scanned),
        ("framework programs", report.framework_programs),
        ("models extracted", report.models_extracted),
        ("complete models", report.complete_models),
        ("supported models", report.supported_models),
        ("deduplicated models", report.deduped_models),
        ("database records", db.len()),
    ] {
        let _ = writeln!(s, "{k:<20} {v:>6}");
    }
    for (path, d) in &report.diagnostics {
        let _ = writeln!(s, "  {path}: {d}");
    }
    for k in &skipped {
        let _ = writeln!(s, "  skipped: {k}");
    }
    Ok(s)
}

fn db_stats(cli: &Cli, db: &Path, vocab: &LayerVocabulary) -> Outcome {
    let db = ModelDatabase::load(db, vocab).map_err(err)?;
    let stats = compute_usage_stats(&db);
    if cli.json {
        return Ok(json_text(&stats));
    }
    let mut s = format!("{} records, {} hidden activations\n", db.len(), stats.hidden_activations());
    for (name, n) in &stats.activation_counts {
        let _ = writeln!(s, "  {name:<12} {n:>6}  {:>6.2}%", stats.activation_share(name));
    }
    for (label, map) in [("hidden dropout", &stats.hidden_dropout_rate_counts), ("fc dropout", &stats.fc_dropout_rate_counts)] {
        let _ = writeln!(s, "{label} rates:");
        for (rate, n) in map {
            let _ = writeln!(s, "  {rate:<12} {n:>6}");
        }
    }
    Ok(s)
}

fn match_cmd(cli: &Cli, a: &MatchArgs, vocab: &LayerVocabulary) -> Outcome {
    let mut config = load_config(cli)?;
    if let Some(x) = a.alpha {
        config.gmeans_alpha = x;
    }
    if let Some(t) = a.threshold {
        config.filter_threshold = t;
    }
    apply_dataset(&mut config, &a.dataset)?;
    let manifest = config.manifest_path.clone().ok_or("no dataset manifest given")?;
    let dc = from_dataset(&manifest).map_err(err)?;
    let db = ModelDatabase::load(&a.db, vocab).map_err(err)?;
    let cs = select_initial(&db, &dc, config.gmeans_alpha, config.seed).map_err(err)?;
    let members = cs.indices();
    let anns: Vec<_> = members.iter().map(|&i| &db.records[i].ann).collect();
    let filtered: Vec<usize> = filter_most_used(&anns, config.filter_threshold).into_iter().map(|k| members[k]).collect();
    if cli.json {
        return Ok(json_text(&serde_json::json!({ "candidates": cs, "filtered": filtered })));
    }
    let mut s = format!("closest: record {} ({})\n", cs.closest, db.records[cs.closest].ann.provenance);
    for w in &cs.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(s, "{:>6}  {:>6}  {:>8}  {:>10}  kept  provenance", "record", "Δi", "Δo", "Δs");
    for c in &cs.members {
        let kept = if filtered.contains(&c.index) { "yes " } else { "no  " };
        let _ = writeln!(
            s,
            "{:>6}  {:>6}  {:>8}  {:>10.3}  {kept}  {}",
            c.index, c.deltas.delta_i, c.deltas.delta_o, c.deltas.delta_s, c.provenance
        );
    }
    Ok(s)
}

fn transform(cli: &Cli, a: &TransformArgs, vocab: &LayerVocabulary) -> Outcome {
    let config = load_config(cli)?;
    let ann = load_model(&a.model, vocab)?;
    let out = if a.with_dropout {
        let rates: DropoutRates = config.dropout_rates;
        transform_post_selection(&ann, rates)
    } else {
        transform_pre_search(&ann)
    };
    let text = to_canonical_string(&out.to_json()) + "\n";
    if let Some(p) = &a.out {
        write_artifact(p, &text)?;
    }
    Ok(if cli.json { text } else { out.listing() })
}

fn adapt_cmd(cli: &Cli, a: &AdaptArgs, vocab: &LayerVocabulary) -> Outcome {
    let mut config = load_config(cli)?;
    if a.dialect.is_some() {
        config.dialect = a.dialect.clone();
    }
    config.strict |= a.strict;
    apply_dataset(&mut config, &a.dataset)?;
    let manifest = config.manifest_path.clone().ok_or("no dataset manifest given")?;
    let dc = from_dataset(&manifest).map_err(err)?;
    let ann = load_model(&a.model, vocab)?;
    let opts = AdaptOptions {
        vocab,
        default_optimizer: config.default_optimizer.clone(),
        dialect: config.dialect.as_deref().map(|d| d.parse().expect("validated dialect")),
        strict: config.strict,
    };
    let adapted = adapt(&ann, &dc, &opts).map_err(err)?;
    if let Some(p) = &a.out {
        write_artifact(p, &adapted.emitted_source)?;
    }
    if cli.json {
        return Ok(json_text(&adapted));
    }
    let mut s = String::new();
    for w in &adapted.warnings {
        let _ = writeln!(s, "# warning: {w}");
    }
    s.push_str(&adapted.emitted_source);
    Ok(s)
}

fn select(cli: &Cli, a: &SelectArgs, vocab: &LayerVocabulary) -> Outcome {
    let mut config = load_config(cli)?;
    apply_dataset(&mut config, &a.dataset)?;
    let manifest = config.manifest_path.clone().ok_or("no dataset manifest given")?;
    let dc = from_dataset(&manifest).map_err(err)?;
    let db = ModelDatabase::load(&a.db, vocab).map_err(err)?;
    let pipeline::SearchOutcome { candidates, filtered, unadaptable, selection } = pipeline::run_on_database(&db, &dc, &config, vocab).map_err(err)?;
    let warnings = candidates.warnings.clone();
    let report = PipelineReport {
        mining: None,
        database_size: db.len(),
        characteristics: dc,
        candidates,
        filtered,
        unadaptable,
        selection,
        warnings,
    };
    finish_report(cli, &report, a.out.as_deref())
}

fn finish_report(cli: &Cli, report: &PipelineReport, out: Option<&Path>) -> Outcome {
    let text = json_text(report);
    if let Some(p) = out {
        write_artifact(p, &text)?;
    }
    if cli.json {
        return Ok(text);
    }
    let mut s = String::new();
    if let Some(m) = &report.mining {
        let _ = writeln!(s, "mined {} programs, {} models kept", m.programs_scanned, m.deduped_models);
    }
    let _ = writeln!(
        s,
        "{} records, {} candidates, {} after filtering",
        report.database_size,
        report.candidates.members.len(),
        report.filtered.len()
    );
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    for (i, e) in &report.unadaptable {
        let _ = writeln!(s, "record {i} not adaptable: {e}");
    }
    selection_table(&report.selection, &mut s);
    Ok(s)
}

fn pipeline_cmd(cli: &Cli, a: &PipelineArgs, vocab: &LayerVocabulary) -> Outcome {
    let mut config = load_config(cli)?;
    if let Some(c) = &a.corpus {
        config.corpus_dir = Some(c.clone());
    }
    if let Some(d) = &a.db {
        config.db_path = Some(d.clone());
    }
    apply_dataset(&mut config, &a.dataset)?;
    let report = pipeline::run(&config, vocab).map_err(err)?;
    finish_report(cli, &report, a.out.as_deref())
}

/// Runs the command line `argv` (program name first), writing results to
/// `out` and errors to `err_out`. Returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err_out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err_out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let vocab = LayerVocabulary::default();
    let result = match &cli.command {
        Command::Fetch(a) => fetch(&cli, a),
        Command::Mine(a) => mine(&cli, a, &vocab),
        Command::Db { command: DbCommand::Stats { db } } => db_stats(&cli, db, &vocab),
        Command::Match(a) => match_cmd(&cli, a, &vocab),
        Command::Transform(a) => transform(&cli, a, &vocab),
        Command::Adapt(a) => adapt_cmd(&cli, a, &vocab),
        Command::Select(a) => select(&cli, a, &vocab),
        Command::Pipeline(a) => pipeline_cmd(&cli, a, &vocab),
    };
    match result {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            let _ = writeln!(err_out, "error: {e}");
            1
        }
    }
}

/// Runs with the process's stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
