use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use jcce::config::RunConfig;
use jcce::datagen::genre_names;
use jcce::features::{AttrKind, AttributeDef, Schema, Side};

const SMALL: &[&str] = &[
    "--set",
    "generator.n_households=20",
    "--set",
    "generator.n_days=14",
    "--set",
    "data.min_content_count=1",
    "--set",
    "train.max_epochs=6",
    "--set",
    "content_encoder.hidden=[32]",
    "--set",
    "context_encoder.hidden=[32]",
    "--set",
    "content_encoder.out_dim=8",
    "--set",
    "context_encoder.out_dim=8",
    "--set",
    "linear_embed_dim=8",
    "--set",
    "wide_deep.hidden=[16,16]",
    "--set",
    "wide_deep.epochs=1",
    "--set",
    "analysis.sample_size=60",
    "--set",
    "analysis.tsne.perplexity=10",
];

/// `SMALL` goes before the subcommand; overrides in `args` come later and
/// therefore win.
fn jcce(run_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jcce"))
        .args(SMALL)
        .args(args)
        .arg("--run-dir")
        .arg(run_dir)
        .output()
        .expect("binary runs")
}

fn ok(run_dir: &Path, args: &[&str]) -> String {
    let out = jcce(run_dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the parsed one-line error report.
fn err(run_dir: &Path, args: &[&str]) -> (i32, Value) {
    let out = jcce(run_dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().expect("error line");
    (out.status.code().unwrap(), serde_json::from_str(line).expect("JSON error line"))
}

fn prepared(dir: &Path, extra: &[&str]) -> PathBuf {
    let run = dir.join("run");
    ok(&run, &[&["datagen"], extra].concat());
    ok(&run, &[&["prepare"], extra].concat());
    run
}

#[test]
fn full_pipeline_emits_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepared(tmp.path(), &[]);
    ok(&run, &["train"]);
    let table = ok(&run, &["evaluate"]);
    for m in ["random", "toppop", "toppop_temporal", "wide_deep", "l_jcce", "jcce"] {
        assert!(table.contains(m), "{m} missing from\n{table}");
    }
    ok(&run, &["export-embeddings"]);
    ok(&run, &["project"]);
    for f in [
        "config.json",
        "events.csv",
        "train.csv",
        "test.csv",
        "model_jcce.json",
        "model_l_jcce.json",
        "model_wide_deep.json",
        "train_log_jcce.csv",
        "results.csv",
        "hit_ratio_curve.csv",
        "mcnemar.csv",
        "embeddings.csv",
        "projection.csv",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let results = std::fs::read_to_string(run.join("results.csv")).unwrap();
    assert!(results.starts_with("method,metric,k,value\n"));
    let mcnemar = std::fs::read_to_string(run.join("mcnemar.csv")).unwrap();
    // Six methods give fifteen pairs.
    assert_eq!(mcnemar.lines().count(), 16);

    // The recorded config parses back to the one that produced the run.
    let recorded = RunConfig::load(&run.join("config.json")).unwrap();
    assert_eq!(recorded.generator.n_households, 20);
    assert_eq!(RunConfig::from_json(&recorded.to_json()).unwrap(), recorded);
}

#[test]
fn training_is_reproducible_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepared(tmp.path(), &[]);
    ok(&run, &["train", "--method", "jcce", "--method", "wide_deep"]);
    let first = std::fs::read(run.join("model_jcce.json")).unwrap();
    let first_wd = std::fs::read(run.join("model_wide_deep.json")).unwrap();
    ok(&run, &["train", "--method", "jcce", "--method", "wide_deep"]);
    assert_eq!(first, std::fs::read(run.join("model_jcce.json")).unwrap());
    assert_eq!(first_wd, std::fs::read(run.join("model_wide_deep.json")).unwrap());
}

#[test]
fn recommend_finds_planted_genre() {
    let tmp = tempfile::tempdir().unwrap();
    let planted = [
        "--set",
        "generator.habit_strength=1.0",
        "--set",
        "generator.slot_rules=[{\"slot\":40,\"genre\":5}]",
        "--set",
        "train.max_epochs=15",
    ];
    let run = prepared(tmp.path(), &planted);
    ok(&run, &[&["train", "--method", "jcce"], &planted[..]].concat());
    let out = ok(
        &run,
        &[&["recommend", "--attr", "time_slot=20:00", "--attr", "day_of_week=Thu", "--k", "3"], &planted[..]].concat(),
    );
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["ranked"].as_array().unwrap().len(), 3);
    assert_eq!(v["ranked"][0]["content_id"], genre_names(64, 8)[5].0.as_str());
    assert_eq!(v["model_version"], 1);
}

#[test]
fn failures_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepared(tmp.path(), &[]);

    let (code, e) = err(&run, &["recommend", "--attr", "day_of_week=Sat"]);
    assert_eq!((code, e["error"].as_str().unwrap()), (4, "missing_input"));

    ok(&run, &["train", "--method", "jcce"]);
    let (code, e) = err(&run, &["recommend", "--attr", "colour=blue"]);
    assert_eq!((code, e["error"].as_str().unwrap()), (5, "unknown_attribute"));
    assert!(e["message"].as_str().unwrap().contains("colour"));

    let (code, _) = err(&run, &["recommend", "--attr", "child_present=maybe"]);
    assert_eq!(code, 7);

    let (code, e) = err(&run, &["train", "--set", "train.nonsense=1"]);
    assert_eq!((code, e["error"].as_str().unwrap()), (3, "config"));

    // A model trained under another schema is refused.
    let mut schema = Schema::default_tv();
    schema = Schema::new(
        "tv-v2",
        schema
            .side(Side::Context)
            .chain(schema.side(Side::Content))
            .cloned()
            .chain([AttributeDef::new("channel", AttrKind::Categorical, Side::Context)])
            .collect(),
    )
    .unwrap();
    let schema_path = tmp.path().join("schema.json");
    schema.save(&schema_path).unwrap();
    let set_schema = format!("data.schema=\"{}\"", schema_path.display());
    let model = run.join("model_jcce.json");
    let (code, e) = err(
        &tmp.path().join("other"),
        &["recommend", "--set", &set_schema, "--model", model.to_str().unwrap(), "--attr", "day_of_week=Sat"],
    );
    assert_eq!((code, e["error"].as_str().unwrap()), (6, "schema_mismatch"));

    let corrupt = tmp.path().join("corrupt.json");
    std::fs::write(&corrupt, "{\"format\":\"jcce-model\",\"version\":1").unwrap();
    let (code, e) = err(&run, &["recommend", "--model", corrupt.to_str().unwrap()]);
    assert_eq!((code, e["error"].as_str().unwrap()), (9, "bad_model_file"));
}
