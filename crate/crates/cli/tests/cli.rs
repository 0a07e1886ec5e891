use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
[game]
n_types = 4

[sim]
max_periods = 40000
window = 200

[sweep]
bias_grid = [0.0, 0.3]
n_replications = 3
";

fn cheaptalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cheaptalk"))
        .args(args)
        .env_remove("CHEAPTALK_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = cheaptalk(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn sweep_outputs_are_identical_across_executions_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let mut outputs = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "2")] {
        let out = dir.path().join(name);
        ok(&[
            "sweep",
            "--config",
            &cfg,
            "--seed",
            "11",
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        outputs.push((
            std::fs::read(out.join("runs.jsonl")).unwrap(),
            std::fs::read(out.join("aggregates.csv")).unwrap(),
        ));
        assert!(!out.join("missing.jsonl").exists());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let text = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert_eq!(
        String::from_utf8(outputs[0].1.clone())
            .unwrap()
            .lines()
            .count(),
        3
    );

    let other = dir.path().join("d");
    ok(&[
        "sweep",
        "--config",
        &cfg,
        "--seed",
        "12",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert_ne!(
        std::fs::read(other.join("runs.jsonl")).unwrap(),
        outputs[0].0
    );
}

#[test]
fn analyze_reproduces_stored_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let sweep_dir = dir.path().join("sweep");
    ok(&[
        "sweep",
        "--config",
        &cfg,
        "--store-policies",
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    let analyzed = dir.path().join("analyzed");
    let runs = sweep_dir.join("runs.jsonl");
    ok(&[
        "analyze",
        "--config",
        &cfg,
        runs.to_str().unwrap(),
        "--out",
        analyzed.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(sweep_dir.join("aggregates.csv")).unwrap(),
        std::fs::read(analyzed.join("aggregates.csv")).unwrap()
    );

    // a different game cannot vouch for these records
    let bad = cheaptalk(&[
        "analyze",
        runs.to_str().unwrap(),
        "--out",
        analyzed.to_str().unwrap(),
    ]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("fingerprint"));
}

#[test]
fn analyze_needs_policies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let sweep_dir = dir.path().join("sweep");
    ok(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    let runs = sweep_dir.join("runs.jsonl");
    let out = cheaptalk(&[
        "analyze",
        "--config",
        &cfg,
        runs.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no stored policies"));
}

#[test]
fn run_writes_an_analyzable_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let rec = dir.path().join("run.jsonl");
    ok(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--bias",
        "0.1",
        "--out",
        rec.to_str().unwrap(),
    ]);
    let first = std::fs::read(&rec).unwrap();
    ok(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--bias",
        "0.1",
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert_eq!(first, std::fs::read(&rec).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains("\"policy_sender\""));
    assert!(text.contains("\"convergence_reference\":\"anchored\""));
    ok(&[
        "analyze",
        "--config",
        &cfg,
        rec.to_str().unwrap(),
        "--out",
        dir.path().join("a").to_str().unwrap(),
    ]);
}

#[test]
fn enumerate_prints_equilibria() {
    let out = ok(&["enumerate", "--bias", "0.35,0.05"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("bias,n_blocks,boundaries"));
    assert_eq!(lines.iter().filter(|l| l.starts_with("0.35,")).count(), 1);
    assert!(lines.iter().any(|l| l.starts_with("0.05,6,0;1;2;3;4;5,")));
}

#[test]
fn plot_renders_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let sweep_dir = dir.path().join("sweep");
    ok(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    let figs = dir.path().join("figs");
    let agg = sweep_dir.join("aggregates.csv");
    ok(&[
        "plot",
        "all",
        agg.to_str().unwrap(),
        "--out",
        figs.to_str().unwrap(),
    ]);
    for kind in [
        "deviation_vs_bias",
        "eps_nash_frequency_grid",
        "modal_policy_heatmap",
        "payoff_distribution",
        "mi_distribution",
        "equilibrium_ladder",
    ] {
        let data = std::fs::read_to_string(figs.join(format!("{kind}.csv"))).unwrap();
        // short runs are never ε-Nash, so there is no modal policy to draw
        let min_lines = if kind == "modal_policy_heatmap" { 1 } else { 2 };
        assert!(data.lines().count() >= min_lines, "{kind}");
        let svg = std::fs::read_to_string(figs.join(format!("{kind}.svg"))).unwrap();
        assert!(svg.starts_with("<svg"), "{kind}");
    }
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert!(!cheaptalk(&["run", "--config", missing.to_str().unwrap()])
        .status
        .success());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[game]\nbias = 0.1\nbogus = 1\n").unwrap();
    let out = cheaptalk(&[
        "sweep",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    assert!(!cheaptalk(&["plot", "heatmap", "x.csv"]).status.success());
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let fig = dir.path().join("fig");
    let out = cheaptalk(&[
        "plot",
        "equilibrium_ladder",
        empty.to_str().unwrap(),
        "--out",
        fig.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(!dir.path().join("fig.csv").exists());
    assert!(!cheaptalk(&["enumerate", "--bias", "-1"]).status.success());
    assert!(!cheaptalk(&["frobnicate"]).status.success());
}

#[test]
fn workers_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = |workers: &str, name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_cheaptalk"))
            .args(["sweep", "--config", &cfg, "--out", out.to_str().unwrap()])
            .env("CHEAPTALK_WORKERS", workers)
            .output()
            .unwrap();
        assert!(status.status.success());
        std::fs::read(out.join("runs.jsonl")).unwrap()
    };
    assert_eq!(run("1", "one"), run("3", "three"));
}
