use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/duck").join(name)
}

fn storyloom(project: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_storyloom"))
        .arg("--project")
        .arg(project)
        .arg("--mock-fixtures")
        .arg(fixture("mock"))
        .args(args)
        .env_remove("STORYLOOM_LLM_ENDPOINT")
        .output()
        .unwrap()
}

fn ok(project: &Path, args: &[&str]) -> String {
    let out = storyloom(project, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn duck_project() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let sw = fixture("storyworld.json");
    let rules = fixture("rules.json");
    ok(dir.path(), &["init", "--storyworld", sw.to_str().unwrap(), "--rules", rules.to_str().unwrap()]);
    dir
}

fn define_author_dims(p: &Path) {
    ok(p, &["dimensions", "define", "--name", "ducks_advantage", "--description", "the ducks' advantage against the goose", "--values", "low,medium,high"]);
    ok(p, &["dimensions", "define", "--name", "duckling_behavior", "--description", "how the duckling acts", "--values", "passive,neutral,proactive"]);
}

#[test]
fn upload_define_and_graph() {
    let dir = duck_project();
    let p = dir.path();
    define_author_dims(p);
    let up: serde_json::Value = serde_json::from_str(&ok(p, &["upload", fixture("batch_v1.json").to_str().unwrap()])).unwrap();
    assert_eq!(up["batch_id"], 1);

    let g: serde_json::Value = serde_json::from_str(&ok(p, &["bsv", "--dims", "ducks_advantage"])).unwrap();
    assert_eq!(g["nodes"].as_array().unwrap().len(), 7);
    assert_eq!(g["edges"].as_array().unwrap().len(), 6);
    let grid: serde_json::Value =
        serde_json::from_str(&ok(p, &["bsv", "--dims", "ducks_advantage,duckling_behavior"])).unwrap();
    assert_eq!(grid["nodes"].as_array().unwrap().len(), 7);
    assert!(ok(p, &["bsv", "--dims", "ducks_advantage", "--out", "dot"]).starts_with("digraph"));

    let list: serde_json::Value = serde_json::from_str(&ok(p, &["dimensions", "list"])).unwrap();
    assert_eq!(list.as_array().unwrap().len(), 2);
    assert!(p.join("cache.json").exists());
}

#[test]
fn classify_unknown_dimension_fails() {
    let dir = duck_project();
    let p = dir.path();
    ok(p, &["upload", fixture("batch_v1.json").to_str().unwrap()]);
    let out = storyloom(p, &["classify", "--dim", "nope"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown dimension"));
}

#[test]
fn diff_batches_attaches_the_older_batch() {
    let dir = duck_project();
    let p = dir.path();
    define_author_dims(p);
    ok(p, &["upload", fixture("batch_v1.json").to_str().unwrap()]);
    ok(p, &["upload", fixture("batch_v2.json").to_str().unwrap()]);
    let g: serde_json::Value =
        serde_json::from_str(&ok(p, &["diff-batches", "--dims", "ducks_advantage", "--from", "1", "--to", "2"])).unwrap();
    assert_eq!(g["batch_id"], 2);
    assert_eq!(g["previous_overlay"]["batch_id"], 1);
    let compare = ok(p, &["bsv", "--dims", "ducks_advantage", "--compare"]);
    assert_eq!(serde_json::from_str::<serde_json::Value>(&compare).unwrap(), g);
}

#[test]
fn schema_edit_and_values() {
    let dir = duck_project();
    let p = dir.path();
    define_author_dims(p);
    ok(p, &["upload", fixture("batch_v1.json").to_str().unwrap()]);
    let e: serde_json::Value =
        serde_json::from_str(&ok(p, &["dimensions", "edit", "--dim", "ducks_advantage", "--values", "low,high"])).unwrap();
    assert_eq!(e["changed"], true);
    assert_eq!(e["dimension"]["values"], serde_json::json!(["low", "high"]));
    let v: serde_json::Value = serde_json::from_str(&ok(
        p,
        &["dimensions", "induce-values", "--name", "duck_mom_stance", "--description", "what Duck Mom does"],
    ))
    .unwrap();
    assert_eq!(v["dimensions"][0]["values"], serde_json::json!(["protective", "encouraging", "absent"]));
    let s: serde_json::Value = serde_json::from_str(&ok(p, &["dimensions", "suggest", "-k", "2"])).unwrap();
    assert!(!s["suggestions"].as_array().unwrap().is_empty());
}

#[test]
fn commands_need_a_project() {
    let dir = tempfile::tempdir().unwrap();
    let out = storyloom(dir.path(), &["dimensions", "list"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("storyloom init"));
    let dup = duck_project();
    let sw = fixture("storyworld.json");
    assert!(!storyloom(dup.path(), &["init", "--storyworld", sw.to_str().unwrap()]).status.success());
}

#[test]
fn simulate_prints_a_batch_file() {
    let dir = duck_project();
    let p = dir.path();
    let out: serde_json::Value = serde_json::from_str(&ok(p, &["simulate", "--count", "3", "--rounds", "5"])).unwrap();
    let storylines = out["storylines"].as_array().unwrap();
    assert_eq!(storylines.len(), 3);
    assert!(storylines.iter().all(|s| s["rounds"].as_array().unwrap().len() == 5));
    let err = storyloom(p, &["simulate", "--profiles", "nobody"]);
    assert!(!err.status.success());
}

#[test]
fn duck_timeline_as_dot() {
    let dir = duck_project();
    let p = dir.path();
    define_author_dims(p);
    ok(p, &["upload", fixture("batch_v1.json").to_str().unwrap()]);
    let dot = ok(p, &["bsv", "--dims", "ducks_advantage", "--view", "timeline", "--out", "dot"]);
    assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), 6);
    for n in ["low@t1", "medium@t1", "low@t2", "medium@t2", "low@t3", "medium@t3", "high@t3"] {
        assert!(dot.contains(&format!("\"{n}\" [")), "{n} missing:\n{dot}");
    }
}
