use std::path::Path;
use std::process::Command;

use nas_curator::cli::run_with;
use serde_json::Value;

const CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus");
const MANIFEST: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/manifest.json");
const SEARCH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/search");

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("nas-curator").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

fn mine_fixture(dir: &Path) -> String {
    let db = dir.join("models.json");
    let (code, _, err) = run(&["mine", "--corpus", CORPUS, "--out", db.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    db.to_str().unwrap().to_string()
}

#[test]
fn mine_reports_the_fixture_funnel() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("models.json");
    let (code, out, _) = run(&["mine", "--corpus", CORPUS, "--out", db.to_str().unwrap(), "--json"]);
    assert_eq!(code, 0);
    let r = &json(&out)["report"];
    let counts: Vec<u64> = ["programs_scanned", "framework_programs", "models_extracted", "complete_models", "supported_models", "deduped_models"]
        .iter()
        .map(|k| r[k].as_u64().unwrap())
        .collect();
    assert_eq!(counts, [24, 22, 21, 18, 15, 13]);
    assert!(db.is_file());
    let (_, table, _) = run(&["mine", "--corpus", CORPUS]);
    assert!(table.contains("deduplicated models"));
}

#[test]
fn usage_errors_exit_two() {
    let (code, _, err) = run(&["match", "--manifest", MANIFEST]);
    assert_eq!(code, 2);
    assert!(err.contains("--db"));
    assert_eq!(run(&["frobnicate"]).0, 2);
    assert_eq!(run(&[]).0, 2);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn domain_errors_exit_one() {
    let (code, _, err) = run(&["db", "stats", "--db", "/nonexistent/models.json"]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error: "));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("c.toml");
    std::fs::write(&bad, "gmeans_alpha = 5").unwrap();
    let db = mine_fixture(dir.path());
    let (code, _, err) = run(&["--config", bad.to_str().unwrap(), "match", "--db", &db, "--manifest", MANIFEST]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn db_stats_match_hand_counts() {
    let dir = tempfile::tempdir().unwrap();
    let db = mine_fixture(dir.path());
    let (code, out, _) = run(&["db", "stats", "--db", &db, "--json"]);
    assert_eq!(code, 0);
    let v = json(&out);
    assert_eq!(v["activation_counts"], serde_json::json!({"relu": 27}));
    assert_eq!(v["hidden_dropout_rate_counts"], serde_json::json!({"0.25": 4}));
    assert_eq!(v["fc_dropout_rate_counts"], serde_json::json!({"0.5": 2}));
}

#[test]
fn match_transform_and_adapt() {
    let dir = tempfile::tempdir().unwrap();
    let db = mine_fixture(dir.path());
    let (code, out, _) = run(&["match", "--db", &db, "--manifest", MANIFEST, "--json"]);
    assert_eq!(code, 0);
    let v = json(&out);
    let closest = v["candidates"]["closest"].as_u64().unwrap();
    assert!(v["filtered"].as_array().unwrap().iter().any(|i| i.as_u64() == Some(closest)));

    let t = dir.path().join("t.json");
    let index = closest.to_string();
    let (code, _, err) = run(&["transform", "--db", &db, "--index", &index, "--out", t.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let transformed = json(&std::fs::read_to_string(&t).unwrap());
    assert!(transformed["nodes"].as_array().unwrap().iter().all(|n| n["func"] != "Flatten"));
    let (_, with_dropout, _) = run(&["transform", "--model", t.to_str().unwrap(), "--with-dropout", "--json"]);
    assert!(json(&with_dropout)["nodes"].as_array().unwrap().iter().any(|n| n["func"] == "Dropout"));

    let py = dir.path().join("model.py");
    let (code, out, err) =
        run(&["adapt", "--model", t.to_str().unwrap(), "--manifest", MANIFEST, "--dialect", "functional", "--out", py.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let src = std::fs::read_to_string(&py).unwrap();
    assert!(out.contains(&src));
    assert!(src.contains("Model(inputs="));
    let (code, _, _) = run(&["adapt", "--model", t.to_str().unwrap(), "--manifest", MANIFEST, "--dialect", "graph"]);
    assert_eq!(code, 1);
    assert_eq!(run(&["transform", "--db", &db]).0, 2);
}

#[test]
fn select_and_pipeline_agree() {
    let dir = tempfile::tempdir().unwrap();
    let db = mine_fixture(dir.path());
    let (code, from_db, _) = run(&["select", "--db", &db, "--manifest", MANIFEST, "--seed", "7", "--json"]);
    assert_eq!(code, 0);
    let (code, from_corpus, _) = run(&["pipeline", "--corpus", CORPUS, "--manifest", MANIFEST, "--seed", "7", "--json"]);
    assert_eq!(code, 0);
    let (a, b) = (json(&from_db), json(&from_corpus));
    assert_eq!(a["selection"], b["selection"]);
    assert!(b["mining"].is_object() && a["mining"].is_null());
}

#[test]
fn config_file_overrides_defaults_and_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 3\nfilter_threshold = 1\n[evaluator]\nkind = \"surrogate\"\ndropout_weight = 0.0\n").unwrap();
    let c = cfg.to_str().unwrap();
    let (code, out, err) = run(&["--config", c, "pipeline", "--corpus", CORPUS, "--manifest", MANIFEST, "--json"]);
    assert_eq!(code, 0, "{err}");
    let v = json(&out);
    assert_eq!(v["filtered"].as_array().unwrap().len(), v["selection"]["report"].as_array().unwrap().iter().filter(|r| !r["candidate"].is_null()).count());
    let (_, seeded, _) = run(&["--config", c, "pipeline", "--corpus", CORPUS, "--manifest", MANIFEST, "--seed", "3", "--json"]);
    assert_eq!(seeded, out);
}

#[test]
fn fetch_offline() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("repos.json");
    let (code, out, err) = run(&[
        "fetch", "--start", "2015-01-01", "--end", "2015-01-03", "--top", "2", "--offline", SEARCH, "--out",
        out_path.to_str().unwrap(), "--json",
    ]);
    assert_eq!(code, 0, "{err}");
    let repos = json(&out);
    let names: Vec<&str> = repos.as_array().unwrap().iter().map(|r| r["full_name"].as_str().unwrap()).collect();
    assert_eq!(names, ["fchollet/keras-examples", "dave/face-detect"]);
    assert_eq!(std::fs::read_to_string(out_path).unwrap(), out);
    let (code, _, _) = run(&["fetch", "--start", "2015-01-03", "--end", "2015-01-01", "--offline", SEARCH]);
    assert_eq!(code, 1);
}

#[test]
fn binary_pipeline_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let outputs: Vec<(Vec<u8>, Vec<u8>)> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("run{i}.json"));
            let o = Command::new(env!("CARGO_BIN_EXE_nas-curator"))
                .args(["pipeline", "--manifest", MANIFEST, "--corpus", CORPUS, "--seed", "7", "--out"])
                .arg(&out)
                .output()
                .unwrap();
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            (std::fs::read(&out).unwrap(), o.stdout)
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}
