use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn twinsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "duration = 50s\nstate_period = 25\ntwin_interval = 12.5\n",
    );
    let out = dir.path().join("out");
    let o = twinsim(&[
        "run",
        "--mode",
        "dynamic",
        "--config",
        &cfg,
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--trace",
        "--dump-chain",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "metrics.csv",
        "blocks.csv",
        "summary.json",
        "decisions.jsonl",
        "chain.json",
        "trace.jsonl",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,mode,seed,avg_tx_latency_s,avg_inter_block_time_s,throughput_tps,blocks,committed_txs"
    );
    assert!(lines
        .next()
        .unwrap()
        .starts_with("dynamic-seed3,dynamic,3,"));
    assert_eq!(
        fs::read_to_string(out.join("decisions.jsonl"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["quorum_violations"], 0);
    assert_eq!(summary["conflicts"], 0);
    let chain: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("chain.json")).unwrap()).unwrap();
    let first = &chain[0];
    assert_eq!(first["height"], 1);
    assert!(first["votes"].as_array().unwrap().len() >= 5);
    assert!(first["votes"][0][1].is_f64());
    assert!(first["n_txs"].is_u64());
}

#[test]
fn fixed_mode_writes_no_decision_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = twinsim(&[
        "run",
        "--mode",
        "ibft",
        "--duration",
        "20s",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(!out.join("decisions.jsonl").exists());
    assert!(!out.join("trace.jsonl").exists());
}

#[test]
fn compare_writes_runs_and_means() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "duration = 30s\nstate_period = 10\ntwin_interval = 5\n",
    );
    let out = dir.path().join("cmp");
    let o = twinsim(&[
        "compare",
        "--config",
        &cfg,
        "--seeds",
        "1..2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 * 2 + 3);
    assert_eq!(rows.iter().filter(|r| r.contains(",mean,")).count(), 3);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "producers = 6\nf = 2\n",
        "state_period = 90\n",
        "fastpath_timeout = 12\n",
        "no_such_key = 1\n",
        "this line has no equals sign\n",
        "tx_rate = fast\n",
    ];
    for text in cases {
        let cfg = write_config(dir.path(), text);
        let o = twinsim(&[
            "run",
            "--mode",
            "ibft",
            "--config",
            &cfg,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{text:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = twinsim(&["run", "--mode", "ibft", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn error_messages_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "producers = 6\nf = 2\n");
    let o = twinsim(&["run", "--mode", "ibft", "--config", &cfg]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("M < 3f+1"));
    let cfg = write_config(dir.path(), "state_period = 90\n");
    let o = twinsim(&["run", "--mode", "ibft", "--config", &cfg]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("TS must be integral multiple of TI"));
}

#[test]
fn reference_config_spells_out_the_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/reference.cfg");
    let cfg = twinsim::RunConfig::from_file(Path::new(path)).unwrap();
    assert_eq!(cfg, twinsim::RunConfig::default());
}
