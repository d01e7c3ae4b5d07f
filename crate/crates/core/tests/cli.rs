mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use common::{all_subcommands, exported_tree, p, run, run_ok, tree_bytes};
use serde_json::Value;

fn error_record(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("stderr has an error record");
    serde_json::from_str(last).expect("error record is JSON")
}

#[test]
fn every_subcommand_is_identical_at_one_and_eight_workers() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("tree");
    exported_tree(&tree);
    // same scratch path for both runs: some commands echo their output paths
    let scratch = dir.path().join("scratch");
    let one = all_subcommands(&tree, "1", &scratch);
    std::fs::remove_dir_all(&scratch).unwrap();
    let eight = all_subcommands(&tree, "8", &scratch);
    assert_eq!(one.keys().collect::<Vec<_>>(), eight.keys().collect::<Vec<_>>());
    for (name, a) in &one {
        let b = &eight[name];
        assert_eq!(a.0, b.0, "{name}: exit code");
        assert!(a.1 == b.1, "{name}: stdout differs");
        assert_eq!(a.2.keys().collect::<Vec<_>>(), b.2.keys().collect::<Vec<_>>(), "{name}: file sets");
        for (f, bytes) in &a.2 {
            assert!(bytes == &b.2[f], "{name}: {f} differs");
        }
    }
    // sanity: the runs did real work
    assert!(one["ingest"].2.len() > 50);
    assert!(one["export"].2.contains_key("grounding.json"));
    assert_eq!(one["taxonomy"].0, 1);
}

#[test]
fn gen_fixtures_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run_ok(&["gen-fixtures", "--out", p(&a), "--seed", "7"]);
    run_ok(&["gen-fixtures", "--out", p(&b), "--seed", "7"]);
    run_ok(&["gen-fixtures", "--out", p(&c), "--seed", "8"]);
    let (ta, tb, tc) = (tree_bytes(&a), tree_bytes(&b), tree_bytes(&c));
    assert!(ta == tb);
    assert!(ta != tc);
}

#[test]
fn unknown_subcommand_exits_one_with_json_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_record(&out);
    assert_eq!(e["error"], "UnknownSubcommand");
    assert_eq!(e["kind"], "validation");
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["eval", "--gt", p(&dir.path().join("absent.json")), "--pred", p(&dir.path().join("p.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["kind"], "io");
}

#[test]
fn foreign_image_ids_are_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = exported_tree(dir.path());
    let preds = dir.path().join("bad.json");
    std::fs::write(
        &preds,
        r#"[{"image_id": 9999, "category_id": 1, "bbox": [0, 0, 2, 2], "score": 0.5},
            {"image_id": 4242, "category_id": 1, "bbox": [0, 0, 2, 2], "score": 0.4}]"#,
    )
    .unwrap();
    let out = run(&["eval", "--gt", p(&out_dir.join("grounding.json")), "--pred", p(&preds)]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_record(&out);
    assert_eq!(e["error"], "IdSpaceMismatch");
    let msg = e["message"].as_str().unwrap();
    assert!(msg.contains("4242") && msg.contains("9999"), "{msg}");
}

#[test]
fn out_of_range_options_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["gen-fixtures", "--out", p(dir.path())]);
    let cfg = dir.path().join("medground.toml");
    for bad in [["--connectivity", "5"], ["--min-area-fraction", "1.5"], ["--axes", "0,3"]] {
        let out = run(&["--config", p(&cfg), "qc", "--out", p(&dir.path().join("o")), bad[0], bad[1]]);
        assert_eq!(out.status.code(), Some(1), "{bad:?}");
        assert_eq!(error_record(&out)["kind"], "validation");
    }
    let out = run(&["--workers", "0", "taxonomy", "check"]);
    assert_eq!(out.status.code(), Some(1));
}

fn qc_min_area(cfg: &Path, out: &Path, env: Option<&str>, flag: Option<&str>) -> String {
    let mut cmd = Command::new(common::BIN);
    cmd.env_remove("MEDGROUND_MIN_AREA_FRACTION");
    if let Some(v) = env {
        cmd.env("MEDGROUND_MIN_AREA_FRACTION", v);
    }
    cmd.args(["--config", p(cfg), "qc", "--out", p(out)]);
    if let Some(v) = flag {
        cmd.args(["--min-area-fraction", v]);
    }
    let o = cmd.output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix("min_area_fraction: ").map(str::to_string))
        .unwrap()
}

#[test]
fn flags_beat_env_beat_config_file() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["gen-fixtures", "--out", p(dir.path())]);
    let cfg = dir.path().join("medground.toml");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("min_area_fraction = 0.015", "min_area_fraction = 0.02");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("o");
    assert_eq!(qc_min_area(&cfg, &out, None, None), "0.02");
    assert_eq!(qc_min_area(&cfg, &out, Some("0.03"), None), "0.03");
    assert_eq!(qc_min_area(&cfg, &out, Some("0.03"), Some("0.04")), "0.04");
}

#[test]
fn end_to_end_pipeline_finishes_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path();
    let start = Instant::now();
    run_ok(&["gen-fixtures", "--out", p(tree), "--seed", "7"]);
    let cfg = tree.join("medground.toml");
    let out = tree.join("out");
    run_ok(&["--config", p(&cfg), "ingest", "--out", p(&out)]);
    let qc = run_ok(&["--config", p(&cfg), "qc", "--out", p(&out)]);
    run_ok(&["--config", p(&cfg), "export", "--out", p(&out)]);
    let stats = run_ok(&["stats", "--out", p(&out)]);
    let eval = run_ok(&["eval", "--gt", p(&out.join("grounding.json")), "--pred", p(&tree.join("predictions.json")), "--format", "json"]);
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "{elapsed:?}");

    assert!(String::from_utf8_lossy(&qc.stdout).contains("accepted: 91"));
    assert!(String::from_utf8_lossy(&stats.stdout).starts_with("images: 91\nannotations: 165\n"));
    let v: Value = serde_json::from_slice(&eval.stdout).unwrap();
    let ap = v["predictions"]["pooled"]["ap"].as_f64().unwrap();
    assert!(ap > 0.0 && ap <= 1.0);
}
