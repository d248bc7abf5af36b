//! End-to-end subcommand tests against the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semanchor"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let config = serde_json::json!({
        "version": 1,
        "datagen": {
            "seed": 13,
            "train": 60,
            "dev": 10,
            "test": 12,
            "schemas_per_kind": 2
        },
        "model": {
            "d_model": 16,
            "heads": 2,
            "encoder_layers": 1,
            "decoder_layers": 3,
            "ff_dim": 32,
            "dropout": 0.1,
            "max_source_len": 48,
            "max_target_len": 40
        },
        "train": {
            "epochs": 2,
            "batch_size": 16,
            "learning_rate": 0.002,
            "seed": 5,
            "threads": 1
        }
    });
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn full_pipeline_runs_and_replays_bit_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let corpus_dir = tmp.path().join("corpus");
    let run_dir = tmp.path().join("run");

    // datagen
    let out = run(&[
        "datagen",
        "--config",
        config.to_str().unwrap(),
        "--out",
        corpus_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    for f in ["schemas.jsonl", "examples.jsonl", "stats.json", "run_manifest.json"] {
        assert!(corpus_dir.join(f).exists(), "{f} missing");
    }

    // datagen replay is byte-identical
    let replay_dir = tmp.path().join("corpus_replay");
    let out = run(&[
        "replay",
        "--manifest",
        corpus_dir.join("run_manifest.json").to_str().unwrap(),
        "--out",
        replay_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    for f in ["schemas.jsonl", "examples.jsonl"] {
        assert_eq!(
            std::fs::read(corpus_dir.join(f)).unwrap(),
            std::fs::read(replay_dir.join(f)).unwrap(),
            "{f} differs after replay"
        );
    }

    // train
    let out = run(&[
        "train",
        "--corpus",
        corpus_dir.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--ablation",
        "full",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let checkpoint = run_dir.join("checkpoint.json");
    assert!(checkpoint.exists());
    assert!(run_dir.join("metrics.jsonl").exists());

    // train replay is bit-identical
    let run_replay = tmp.path().join("run_replay");
    let out = run(&[
        "replay",
        "--manifest",
        run_dir.join("run_manifest.json").to_str().unwrap(),
        "--out",
        run_replay.to_str().unwrap(),
    ]);
    assert_ok(&out);
    for f in ["checkpoint.json", "metrics.jsonl"] {
        assert_eq!(
            std::fs::read(run_dir.join(f)).unwrap(),
            std::fs::read(run_replay.join(f)).unwrap(),
            "{f} differs after replay"
        );
    }

    // evaluate
    let eval_dir = tmp.path().join("eval");
    let out = run(&[
        "evaluate",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--corpus",
        corpus_dir.to_str().unwrap(),
        "--split",
        "test",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("exec_acc="), "summary line missing: {stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("eval_report.json")).unwrap())
            .unwrap();
    assert!(report["execution_accuracy"].is_number());
    assert!(eval_dir.join("predictions.jsonl").exists());

    // probe with plot data
    let probe_dir = tmp.path().join("probe");
    let example_id = {
        let first = std::fs::read_to_string(corpus_dir.join("examples.jsonl")).unwrap();
        let v: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        v["id"].as_str().unwrap().to_string()
    };
    let out = run(&[
        "probe",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--corpus",
        corpus_dir.to_str().unwrap(),
        "--example-id",
        &example_id,
        "--emit-plot-data",
        "--out",
        probe_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    // N=3 decoder layers -> 2 intermediate layers x 2 tasks
    for needle in ["sae@layer1", "sae@layer2", "saa@layer1", "saa@layer2"] {
        assert!(stdout.contains(needle), "missing {needle} in: {stdout}");
    }
    let csv = std::fs::read_to_string(probe_dir.join("weight_distribution.csv")).unwrap();
    assert!(csv.starts_with("task,layer,weight"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}

#[test]
fn baseline_metrics_have_no_task_weight_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let corpus_dir = tmp.path().join("corpus");
    assert_ok(&run(&[
        "datagen",
        "--config",
        config.to_str().unwrap(),
        "--out",
        corpus_dir.to_str().unwrap(),
    ]));
    let run_dir = tmp.path().join("baseline");
    assert_ok(&run(&[
        "train",
        "--corpus",
        corpus_dir.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--ablation",
        "baseline",
        "--out",
        run_dir.to_str().unwrap(),
    ]));
    let metrics = std::fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    assert!(!metrics.contains("\"w1\"") && !metrics.contains("hier_weights"));
}

#[test]
fn error_categories_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // missing corpus directory -> data error (5)
    let out = run(&[
        "train",
        "--corpus",
        tmp.path().join("nope").to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: category=data"));

    // bad ablation value -> config error (4)
    let out = run(&[
        "train",
        "--corpus",
        tmp.path().to_str().unwrap(),
        "--ablation",
        "everything",
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: category=config"));

    // unreadable config file -> io error (3)
    let out = run(&[
        "datagen",
        "--config",
        tmp.path().join("missing.json").to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: category=io"));

    // no output directory anywhere -> config error
    let out = bin().args(["datagen"]).env_remove("SEMANCHOR_OUT").output().unwrap();
    assert_eq!(out.status.code(), Some(4));

    // unknown flag -> clap usage error (2)
    let out = run(&["datagen", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));

    // missing checkpoint -> checkpoint error (6)
    let out = run(&[
        "evaluate",
        "--checkpoint",
        tmp.path().join("none.json").to_str().unwrap(),
        "--corpus",
        tmp.path().to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(6));
}

#[test]
fn out_env_var_provides_the_default_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let out_dir = tmp.path().join("from_env");
    let out = bin()
        .args(["datagen", "--config", config.to_str().unwrap()])
        .env("SEMANCHOR_OUT", &out_dir)
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(out_dir.join("examples.jsonl").exists());
}

#[test]
fn ingest_subcommand_converts_wikisql_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let tables = tmp.path().join("tables.jsonl");
    let data = tmp.path().join("data.jsonl");
    std::fs::write(
        &tables,
        r#"{"id":"2-101-7","header":["City","Visitors"],"types":["text","real"],"rows":[["Oslo",120],["Bergen",80]]}"#,
    )
    .unwrap();
    std::fs::write(
        &data,
        r#"{"question":"How many visitors does Oslo have?","table_id":"2-101-7","sql":{"sel":1,"agg":0,"conds":[[0,0,"Oslo"]]}}"#,
    )
    .unwrap();
    let out_dir = tmp.path().join("ingested");
    let out = run(&[
        "ingest",
        "--tables",
        tables.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--split",
        "test",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let examples = std::fs::read_to_string(out_dir.join("examples.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(examples.lines().next().unwrap()).unwrap();
    assert_eq!(rec["split"], "test");
    assert_eq!(
        rec["main"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect::<Vec<_>>(),
        vec!["select", "visitors", "from", "2-101-7", "where", "city", "=", "oslo"]
    );
    assert!(out_dir.join("ingest_report.json").exists());
}
