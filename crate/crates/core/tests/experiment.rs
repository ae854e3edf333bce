use std::fs;

use dynaweight::experiment::{run_experiment, ExperimentConfig};
use dynaweight::metrics::read_jsonl;

fn config(dir: &std::path::Path, scheme: &str, seeds: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(&format!(
        r#"{{"dataset": "blobs", "blobs": {{"per_class": 30, "test_per_class": 5}},
            "topology": "ring", "n_servers": 4, "scheme": "{scheme}", "epochs": 3,
            "hidden": [8], "seeds": {seeds}}}"#
    ))
    .unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn three_seeds_give_three_logs_and_one_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_experiment(&config(tmp.path(), "dynaweight", "[0, 1, 2]")).unwrap();
    assert!(report.success());
    for k in 0..3 {
        let text =
            fs::read_to_string(tmp.path().join(format!("dynaweight_seed{k}.jsonl"))).unwrap();
        let logs = read_jsonl(&text).unwrap();
        assert_eq!(logs.len(), 3);
        assert_eq!(
            logs.iter().map(|l| l.epoch).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        let weights =
            fs::read_to_string(tmp.path().join(format!("dynaweight_seed{k}_weights.csv"))).unwrap();
        assert!(weights.starts_with("epoch,i,j,w\n"));
        // ring-4: 3 entries per row, 4 rows, 3 epochs
        assert_eq!(weights.lines().count(), 1 + 3 * 4 * 3);
    }
    let jsonl = fs::read_dir(tmp.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "jsonl")
        })
        .count();
    assert_eq!(jsonl, 3);
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    // header + 3 seeds + 1 mean row
    assert_eq!(summary.lines().count(), 5);
    assert!(summary
        .lines()
        .last()
        .unwrap()
        .starts_with("dynaweight,mean,"));
    assert!(!tmp.path().join("comparison.csv").exists());
}

#[test]
fn scheme_all_writes_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_experiment(&config(tmp.path(), "all", "[4, 5]")).unwrap();
    assert!(report.success());
    assert_eq!(report.completed.len(), 10);
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 5 * 2 + 5);
    let cmp = fs::read_to_string(tmp.path().join("comparison.csv")).unwrap();
    let mut lines = cmp.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,centralized,fedavg,simple,metropolis,dynaweight"
    );
    assert_eq!(lines.count(), 3);
}

#[test]
fn rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&config(a.path(), "all", "[9]")).unwrap();
    run_experiment(&config(b.path(), "all", "[9]")).unwrap();
    for scheme in [
        "centralized",
        "fedavg",
        "simple",
        "metropolis",
        "dynaweight",
    ] {
        let name = format!("{scheme}_seed9.jsonl");
        assert_eq!(
            fs::read(a.path().join(&name)).unwrap(),
            fs::read(b.path().join(&name)).unwrap()
        );
    }
}

#[test]
fn failed_seed_keeps_other_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), "simple", "[0, 1]");
    // Each of the 4 servers needs 3 classes; with 2 classes partitioning fails.
    cfg.blobs.num_classes = 2;
    let report = run_experiment(&cfg).unwrap();
    assert!(!report.success());
    assert_eq!(report.failures.len(), 2);
    assert!(
        report.failures[0].to_string().contains("seed 0"),
        "{}",
        report.failures[0]
    );
    assert!(tmp.path().join("summary.csv").exists());
}

#[test]
fn checkpoints_are_written_and_readable() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), "metropolis", "[0]");
    cfg.checkpoint_every = Some(2);
    run_experiment(&cfg).unwrap();
    let ckpt = tmp
        .path()
        .join("checkpoints/metropolis_seed0_epoch2_server3.bin");
    let params = dynaweight::model::read_checkpoint(&ckpt).unwrap();
    // [16, 8, 10] MLP
    assert_eq!(params.len(), 16 * 8 + 8 + 8 * 10 + 10);
    assert!(!tmp
        .path()
        .join("checkpoints/metropolis_seed0_epoch3_server0.bin")
        .exists());
}

#[test]
fn shipped_blobs_config_loads() {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/blobs_ring8.json"
    );
    let cfg = dynaweight::experiment::load_config(path).unwrap();
    assert_eq!(cfg.scheme.schemes().len(), 5);
    assert_eq!(cfg.consensus_steps(), 1);
}
