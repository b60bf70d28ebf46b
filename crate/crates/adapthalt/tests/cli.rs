//! End-to-end subcommand plumbing with desk-toy sizes: generate data, train,
//! evaluate the checkpoint, sweep, verify, and export plot data.

use adapthalt::cli::{run, EXIT_OK, EXIT_USAGE};

fn file(path: &std::path::Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn full_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    let train_dir = dir.path().join("train");
    let cfg = dir.path().join("train.json");

    // gen-data
    assert_eq!(
        run([
            "adapthalt", "gen-data",
            "--task", "prefix_parity",
            "--payload-len", "5",
            "--k-max", "3",
            "--n", "300",
            "--seed", "7",
            "--out", data.to_str().unwrap(),
        ]),
        EXIT_OK
    );
    let text = file(&data);
    assert_eq!(text.lines().count(), 301, "header + 300 samples");
    assert!(text.lines().next().unwrap().contains("prefix_parity"));

    // train on the generated file
    std::fs::write(
        &cfg,
        r#"{
            "task": {"kind": "prefix_parity", "payload_len": 5, "k_max": 3, "n_classes": 2, "seed": 7},
            "state_dim": 8,
            "max_steps": 3,
            "method": "dact",
            "tau": 0.001,
            "batch_size": 16,
            "epochs": 2,
            "seed": 1,
            "n_train": 240,
            "n_eval": 60
        }"#,
    )
    .unwrap();
    assert_eq!(
        run([
            "adapthalt", "train",
            "--config", cfg.to_str().unwrap(),
            "--data", data.to_str().unwrap(),
            "--out-dir", train_dir.to_str().unwrap(),
        ]),
        EXIT_OK
    );
    let metrics = file(&train_dir.join("metrics.csv"));
    assert!(metrics.starts_with("# config: "));
    assert!(metrics.contains("method,tau,seed,epoch,loss,accuracy,mean_steps,mean_rho"));
    assert_eq!(metrics.lines().count(), 2 + 2, "config + header + 2 epochs");
    assert!(train_dir.join("checkpoint.bin").exists());
    assert!(file(&train_dir.join("summary.json")).contains("\"best_accuracy\""));

    // eval the checkpoint
    let records = dir.path().join("records.jsonl");
    let summary = dir.path().join("eval.json");
    assert_eq!(
        run([
            "adapthalt", "eval",
            "--checkpoint", train_dir.join("checkpoint.bin").to_str().unwrap(),
            "--data", data.to_str().unwrap(),
            "--method", "dact",
            "--max-steps", "3",
            "--mode", "halting",
            "--records-out", records.to_str().unwrap(),
            "--summary-out", summary.to_str().unwrap(),
        ]),
        EXIT_OK
    );
    let rec_text = file(&records);
    assert_eq!(rec_text.lines().count(), 301, "config header + 300 records");
    let first: serde_json::Value =
        serde_json::from_str(rec_text.lines().nth(1).unwrap()).unwrap();
    for key in [
        "sample_id",
        "method",
        "steps_used",
        "halted_early",
        "h",
        "p",
        "intermediate_argmax",
        "final_class",
        "target_class",
        "complexity",
    ] {
        assert!(first.get(key).is_some(), "missing record key {key}");
    }
    assert!(file(&summary).contains("\"accuracy\""));

    // export-plot-data over the training histogram
    let tidy = dir.path().join("tidy.csv");
    assert_eq!(
        run([
            "adapthalt", "export-plot-data",
            train_dir.join("histogram.csv").to_str().unwrap(),
            "--out", tidy.to_str().unwrap(),
        ]),
        EXIT_OK
    );
    let tidy_text = file(&tidy);
    assert!(tidy_text.starts_with("source,method,tau,seed,complexity,variable,value\n"));
    assert!(tidy_text.contains(",mean_steps,"));
    assert!(tidy_text.contains(",accuracy,"));
}

#[test]
fn sweep_writes_tables_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    let out_dir = dir.path().join("sweep");
    std::fs::write(
        &cfg,
        r#"{
            "base": {
                "task": {"kind": "prefix_parity", "payload_len": 4, "k_max": 2, "n_classes": 2, "seed": 3},
                "state_dim": 6,
                "max_steps": 2,
                "method": "dact",
                "tau": 0.0,
                "batch_size": 16,
                "epochs": 1,
                "seed": 1,
                "n_train": 80,
                "n_eval": 40
            },
            "taus": [0.0, 0.01],
            "seeds": [1, 2],
            "methods": ["dact", "act", "fixed"],
            "jobs": 1
        }"#,
    )
    .unwrap();
    assert_eq!(
        run([
            "adapthalt", "sweep",
            "--config", cfg.to_str().unwrap(),
            "--out-dir", out_dir.to_str().unwrap(),
        ]),
        EXIT_OK
    );
    let summary: serde_json::Value =
        serde_json::from_str(&file(&out_dir.join("summary.json"))).unwrap();
    // 2 taus x 2 seeds x 3 methods (fixed trained once per seed, replicated).
    assert_eq!(summary["rows"].as_array().unwrap().len(), 12);
    assert!(summary["generated_at_unix"].as_u64().is_some());
    assert!(summary["config"]["base"]["adam"]["learning_rate"].as_f64().is_some());
    let metrics = file(&out_dir.join("metrics.csv"));
    assert!(metrics.contains("\ndact,"));
    assert!(metrics.contains("\nact,"));
    assert!(metrics.contains("\nfixed,"));
    assert!(out_dir.join("histograms.csv").exists());
}

#[test]
fn verify_subcommand_small_scale_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    assert_eq!(
        run([
            "adapthalt", "verify",
            "--suite", "all",
            "--weighted-trials", "500",
            "--halt-events", "20",
            "--continuations", "50",
            "--bound-trials", "500",
            "--out", out.to_str().unwrap(),
        ]),
        EXIT_OK
    );
    let report: serde_json::Value = serde_json::from_str(&file(&out)).unwrap();
    assert_eq!(report["passed"], true);
    let suites: Vec<&str> = report["reports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["suite"].as_str().unwrap())
        .collect();
    assert_eq!(
        suites,
        vec!["weighted_sum", "halting_soundness", "bounds", "gradients"]
    );
    for r in report["reports"].as_array().unwrap() {
        assert_eq!(r["violations"].as_array().unwrap().len(), 0);
    }
}

#[test]
fn eval_rejects_mismatched_dataset() {
    let dir = tempfile::tempdir().unwrap();
    // Train a 2-class model, then evaluate on a 10-class dataset.
    let cfg = dir.path().join("t.json");
    std::fs::write(
        &cfg,
        r#"{
            "task": {"kind": "prefix_parity", "payload_len": 4, "k_max": 2, "n_classes": 2, "seed": 3},
            "state_dim": 6, "max_steps": 2, "method": "dact",
            "batch_size": 16, "epochs": 1, "seed": 1, "n_train": 80, "n_eval": 40
        }"#,
    )
    .unwrap();
    let tdir = dir.path().join("t");
    assert_eq!(
        run(["adapthalt", "train", "--config", cfg.to_str().unwrap(), "--out-dir", tdir.to_str().unwrap()]),
        EXIT_OK
    );
    let other = dir.path().join("other.jsonl");
    assert_eq!(
        run([
            "adapthalt", "gen-data", "--task", "chain_arith",
            "--payload-len", "4", "--k-max", "2", "--n", "50", "--seed", "1",
            "--out", other.to_str().unwrap(),
        ]),
        EXIT_OK
    );
    assert_eq!(
        run([
            "adapthalt", "eval",
            "--checkpoint", tdir.join("checkpoint.bin").to_str().unwrap(),
            "--data", other.to_str().unwrap(),
            "--max-steps", "2",
        ]),
        EXIT_USAGE
    );
}
