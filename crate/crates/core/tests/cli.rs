use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wowbench"))
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn error_json(o: &Output) -> serde_json::Value {
    let text = stderr(o);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("json error line");
    serde_json::from_str(line).unwrap()
}

fn score(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "score",
        "--input",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn demo_score_writes_every_output_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = score(&fixture("demo/manifest.toml"), dir.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    let hash = run["registry_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(run["seed"], 17);
    assert_eq!(run["folds"], 3);
    for f in ["scored.jsonl", "model_scores.jsonl", "leaderboard.md"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.contains(&hash), "{f} lacks the registry hash");
    }
    let scored = fs::read_to_string(dir.path().join("scored.jsonl")).unwrap();
    assert_eq!(scored.lines().count(), 12);
    // identical reference and generated clip
    assert!(scored.contains(r#""psnr":"inf""#));
    for line in scored.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["frozen_hash"], "none");
        for key in ["plan_s_plan", "traj_dtw_norm", "consistency_mean", "ssim"] {
            assert!(
                v["measurements"].get(key).is_some(),
                "{key} missing in {line}"
            );
        }
    }
    assert!(stderr(&o).contains("warning: baseline-b/s03"));
}

#[test]
fn repeated_runs_are_byte_identical_outside_metadata() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(score(&fixture("demo/manifest.toml"), d.path(), &[])
            .status
            .success());
    }
    for f in ["scored.jsonl", "model_scores.jsonl", "leaderboard.md"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let strip = |p: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(p.join("run.json")).unwrap()).unwrap();
        v["metadata"]["generated_at_unix"] = 0.into();
        v
    };
    assert_eq!(strip(a.path()), strip(b.path()));
}

#[test]
fn empty_records_give_empty_leaderboard() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("records.jsonl"), "").unwrap();
    fs::write(
        dir.path().join("m.toml"),
        format!(
            "registry = {:?}\nrecords = \"records.jsonl\"\nformat = \"json-lines\"\n",
            fixture("table2/registry.toml")
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = score(&dir.path().join("m.toml"), &out, &[]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("leaderboard is empty"));
    assert_eq!(
        fs::read_to_string(out.join("leaderboard.jsonl")).unwrap(),
        ""
    );
}

#[test]
fn cyclic_dag_is_an_input_error_naming_file_and_cycle() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("dags.jsonl"),
        concat!(
            r#"{"sample_id":"s1","nodes":[{"id":"a","action":"pick(x)"},{"id":"b","action":"place(x)"}],"edges":[["a","b"],["b","a"]]}"#,
            "\n"
        ),
    )
    .unwrap();
    fs::write(dir.path().join("plans.jsonl"), "").unwrap();
    fs::write(
        dir.path().join("m.toml"),
        format!(
            "registry = {:?}\ndags = \"dags.jsonl\"\nplans = \"plans.jsonl\"\n",
            Path::new(env!("CARGO_MANIFEST_DIR")).join("config/default_registry.toml")
        ),
    )
    .unwrap();
    let o = score(&dir.path().join("m.toml"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = error_json(&o);
    assert_eq!(err["error"], "input");
    assert!(err["file"].as_str().unwrap().ends_with("dags.jsonl"));
    assert_eq!(err["key"], "s1");
    assert_eq!(err["line"], 1);
    assert!(
        err["message"].as_str().unwrap().contains("a -> b -> a"),
        "{err}"
    );
}

#[test]
fn registry_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("r.toml"),
        "[[groups]]\nid = \"g\"\n[[metrics]]\nid = \"flat\"\ngroup = \"g\"\ndirection = \"hib\"\nlow = 5.0\nhigh = 5.0\n",
    )
    .unwrap();
    fs::write(dir.path().join("m.toml"), "registry = \"r.toml\"\n").unwrap();
    let o = score(&dir.path().join("m.toml"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = error_json(&o);
    assert_eq!(err["key"], "flat");
    assert!(err["file"].as_str().unwrap().ends_with("r.toml"));
}

#[test]
fn unknown_flags_and_missing_inputs_fail() {
    let o = run(&["score", "--input", "x.toml", "--out", "o", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&[
        "score",
        "--input",
        "/nonexistent/manifest.toml",
        "--out",
        "/tmp/never",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(error_json(&o)["file"]
        .as_str()
        .unwrap()
        .contains("nonexistent"));
    let o = run(&[
        "report",
        "--input",
        "/nonexistent/dir",
        "--out",
        "/tmp/never",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(run(&["--help"]).status.success());
}

fn calibrate(manifest: &Path, out: &Path) -> Output {
    run(&[
        "calibrate",
        "--input",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn calibration_is_deterministic_and_feeds_scoring() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = calibrate(&fixture("demo/manifest.toml"), d.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let fa = fs::read(a.path().join("frozen.json")).unwrap();
    assert_eq!(fa, fs::read(b.path().join("frozen.json")).unwrap());
    let frozen: serde_json::Value = serde_json::from_slice(&fa).unwrap();
    // ratings are 1 + 4·x̂² of the fvd pre-scale
    assert_eq!(frozen["metrics"][0]["metric_id"], "fvd");
    assert_eq!(frozen["metrics"][0]["theta"], 2.0);

    let demo = fixture("demo");
    let mut text = format!(
        "registry = {:?}\nfrozen = {:?}\nseed = 17\nfolds = 3\n",
        Path::new(env!("CARGO_MANIFEST_DIR")).join("config/default_registry.toml"),
        a.path().join("frozen.json")
    );
    for (key, file) in [
        ("records", "records.jsonl"),
        ("reference_trajectories", "reference_tracks.jsonl"),
        ("generated_trajectories", "generated_tracks.jsonl"),
        ("dags", "dags.jsonl"),
        ("plans", "plans.jsonl"),
        ("embeddings", "embeddings.jsonl"),
        ("frames", "frames.jsonl"),
    ] {
        text.push_str(&format!("{key} = {:?}\n", demo.join(file)));
    }
    let m = a.path().join("m.toml");
    fs::write(&m, text).unwrap();
    let out = a.path().join("scored");
    let o = score(&m, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = fs::read_to_string(out.join("model_scores.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_ne!(first["frozen_hash"], "none");
    let fvd = &first["metrics"]["fvd"];
    let xhat = 1.0 - fvd["raw"].as_f64().unwrap() / 2000.0;
    assert!((fvd["desirability"].as_f64().unwrap() - 100.0 * xhat * xhat).abs() < 1e-9);
}

#[test]
fn calibration_without_overlap_reports_insufficiency() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("ratings.jsonl"),
        r#"{"model_id":"nobody","sample_id":"s01","metric_id":"fvd","rating":3.0}"#.to_string()
            + "\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("m.toml"),
        format!(
            "registry = {:?}\nrecords = {:?}\nratings = \"ratings.jsonl\"\n",
            Path::new(env!("CARGO_MANIFEST_DIR")).join("config/default_registry.toml"),
            fixture("demo/records.jsonl")
        ),
    )
    .unwrap();
    let o = calibrate(&dir.path().join("m.toml"), dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = error_json(&o);
    assert_eq!(err["key"], "fvd");
    assert!(err["message"]
        .as_str()
        .unwrap()
        .contains("insufficient samples"));
}

#[test]
fn table1_fixture_through_the_cli() {
    let published: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixture("table1/published.json")).unwrap())
            .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let o = score(
        &fixture("table1/autonomous.toml"),
        dir.path(),
        &["--format", "json-lines"],
    );
    assert!(o.status.success());
    let rows = fs::read_to_string(dir.path().join("leaderboard.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 7);
    for line in rows.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let want = published["autonomous_overall"][v["model_id"].as_str().unwrap()]
            .as_f64()
            .unwrap();
        assert!((v["overall"].as_f64().unwrap() - want).abs() <= 0.01);
    }
}

#[test]
fn report_renders_tables_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let scored = dir.path().join("scored");
    assert!(score(&fixture("table1/autonomous.toml"), &scored, &[])
        .status
        .success());
    let out = dir.path().join("report");
    let o = run(&[
        "report",
        "--input",
        scored.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(
        md.contains("| 1 | wow-dit-cosmos2 | 54.12 | **70.36** | **66.18** | 6.88 | **49.39** |"),
        "{md}"
    );
    assert!(md.contains("| 2 | wow-dit-wan | **55.38** |"));
    let csv = fs::read_to_string(out.join("leaderboard.csv")).unwrap();
    assert!(csv
        .starts_with("rank,model_id,vq,if,pl,plan,overall,registry_hash,frozen_hash,seed,folds\n"));
    let bars = fs::read_to_string(out.join("group_bars.csv")).unwrap();
    assert_eq!(bars.lines().count(), 1 + 7 * 4);
    let dist = fs::read_to_string(out.join("metric_distribution.csv")).unwrap();
    assert_eq!(dist.lines().count(), 1 + 7 * 4);
}

#[test]
fn single_model_report_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("records.jsonl"),
        fs::read_to_string(fixture("table2/records.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
            + "\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("m.toml"),
        format!(
            "registry = {:?}\nrecords = \"records.jsonl\"\n",
            fixture("table2/registry.toml")
        ),
    )
    .unwrap();
    let scored = dir.path().join("scored");
    assert!(score(&dir.path().join("m.toml"), &scored, &[])
        .status
        .success());
    let o = run(&[
        "report",
        "--input",
        scored.to_str().unwrap(),
        "--out",
        scored.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let md = fs::read_to_string(scored.join("leaderboard.md")).unwrap();
    assert_eq!(md.lines().filter(|l| l.starts_with("| 1 ")).count(), 1);
    assert_eq!(md.lines().filter(|l| l.starts_with("| ")).count(), 2);
}

#[test]
fn stage_commands_write_their_metrics_only() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture("demo/manifest.toml");
    for (cmd, file, prefix) in [
        ("traj", "traj.jsonl", "traj_"),
        ("plan", "plan.jsonl", "plan_"),
    ] {
        let o = run(&[
            cmd,
            "--input",
            manifest.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let text = fs::read_to_string(dir.path().join(file)).unwrap();
        assert_eq!(text.lines().count(), 12);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["measurements"]
                .as_object()
                .unwrap()
                .keys()
                .all(|k| k.starts_with(prefix)));
        }
    }
    let o = run(&[
        "consistency",
        "--input",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
}
