//! End-to-end checks of the command-line interface: exit codes, report
//! schema, and determinism of everything except the timing fields.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fusionopt"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn generate(dir: &Path, name: &str, d: usize, n: usize, s: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    let out = run(&[
        "generate",
        path.to_str().unwrap(),
        "-d",
        &d.to_string(),
        "-n",
        &n.to_string(),
        "-s",
        &s.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    assert!(out.status.success(), "generate failed: {out:?}");
    path
}

/// Timing fields are the only tolerated difference between reruns.
fn normalized(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("\"timestamp_ms\"") && !l.contains("\"wall_time_ms\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn generate_solve_roundtrip_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate(dir.path(), "a.json", 4, 9, 3, 7);
    let out = run(&["solve", inst.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    assert_eq!(report["command"], "solve");
    assert_eq!(report["instance"]["n"], 9);
    assert_eq!(report["payload"]["solved"], true);
    assert_eq!(report["payload"]["wall_time_ms"], 0);
    let indices = report["payload"]["incumbent"]["indices"].as_array().unwrap();
    assert_eq!(indices.len(), 3);
    assert!(report["payload"]["mip_gap"].as_f64().unwrap() <= 1e-6 + 1e-12);
}

#[test]
fn solve_reports_identical_up_to_timing() {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate(dir.path(), "b.json", 3, 8, 4, 11);
    let o1 = dir.path().join("r1.json");
    let o2 = dir.path().join("r2.json");
    for o in [&o1, &o2] {
        let out = run(&[
            "solve",
            inst.to_str().unwrap(),
            "--output",
            o.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let t1 = std::fs::read_to_string(&o1).unwrap();
    let t2 = std::fs::read_to_string(&o2).unwrap();
    assert_eq!(normalized(&t1), normalized(&t2));
    assert_ne!(t1.find("timestamp_ms"), None);
}

#[test]
fn bounds_approx_probe_report_schema() {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate(dir.path(), "c.json", 3, 7, 3, 5);
    let path = inst.to_str().unwrap();

    let out = run(&["bounds", path]);
    assert_eq!(out.status.code(), Some(0));
    let bounds = stdout_json(&out);
    for key in ["zR", "zM", "zMc", "best", "guidance"] {
        assert!(
            !bounds["payload"][key].is_null(),
            "bounds payload missing {key}"
        );
    }
    let zr = bounds["payload"]["zR"].as_f64().unwrap();
    let best = bounds["payload"]["best"].as_f64().unwrap();
    assert!(best <= zr + 1e-12);

    let out = run(&["approx", path, "--draws", "32", "--seed", "9"]);
    assert_eq!(out.status.code(), Some(0));
    let approx = stdout_json(&out);
    for key in ["local_search", "greedy", "derandomized", "best", "best_method"] {
        assert!(
            !approx["payload"][key].is_null(),
            "approx payload missing {key}"
        );
    }
    assert!(
        approx["payload"]["relaxation_bound"].as_f64().unwrap()
            >= approx["payload"]["best"]["value"].as_f64().unwrap() - 1e-6
    );

    let out = run(&["probe", path]);
    assert_eq!(out.status.code(), Some(0));
    let probe = stdout_json(&out);
    assert!(!probe["payload"]["root_bound"].is_null());
    assert!(!probe["payload"]["outcome"]["counts"].is_null());
}

#[test]
fn missing_and_malformed_inputs_exit_2() {
    let out = run(&["solve", "/nonexistent/inst.json"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = run(&["solve", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = bin().arg("solve").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit 2");
}

#[test]
fn node_limit_exits_1_with_honest_report() {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate(dir.path(), "d.json", 6, 18, 9, 3);
    let out = run(&[
        "solve",
        inst.to_str().unwrap(),
        "--max-nodes",
        "0",
        "--root-iters",
        "8",
        "--node-iters",
        "8",
        "--no-opt-cuts",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout_json(&out);
    assert_eq!(report["payload"]["solved"], false);
    assert_eq!(report["payload"]["termination"], "NodeLimit");
    let gap = report["payload"]["mip_gap"].as_f64().unwrap();
    assert!(gap > 0.0);
}

#[test]
fn pmu_generation_from_csv_base() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("c.csv");
    std::fs::write(&base, "2.0,0.5,0.0\n0.5,3.0,0.25\n0.0,0.25,1.5\n").unwrap();
    let inst = dir.path().join("pmu.json");
    let out = run(&[
        "generate",
        inst.to_str().unwrap(),
        "--kind",
        "pmu",
        "--base-c",
        base.to_str().unwrap(),
        "--sigma",
        "0.5,1.0,0.25",
        "-s",
        "2",
    ]);
    assert!(out.status.success(), "{out:?}");
    let report = stdout_json(&out);
    assert_eq!(report["payload"]["kind"], "pmu");
    assert_eq!(report["instance"]["d"], 3);
    assert_eq!(report["instance"]["n"], 3);

    let out = run(&["solve", inst.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));

    let bad = run(&[
        "generate",
        dir.path().join("bad.json").to_str().unwrap(),
        "--kind",
        "pmu",
        "--base-c",
        base.to_str().unwrap(),
        "--sigma",
        "0.5,-1.0,0.25",
        "-s",
        "2",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bench_reports_stage_timings() {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate(dir.path(), "e.json", 3, 6, 2, 1);
    let out = run(&["bench", inst.to_str().unwrap(), "--reps", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    let stages = report["payload"]["stages"].as_array().unwrap();
    let names: Vec<&str> = stages.iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(names, vec!["bounds", "approx", "solve"]);
    for stage in stages {
        assert!(stage["mean_ms"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn thread_env_var_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate(dir.path(), "f.json", 3, 7, 3, 2);
    let out = bin()
        .env("FUSIONOPT_THREADS", "2")
        .args(["solve", inst.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let with_threads = stdout_json(&out);
    let plain = stdout_json(&run(&["solve", inst.to_str().unwrap()]));
    assert_eq!(
        with_threads["payload"]["nodes_explored"],
        plain["payload"]["nodes_explored"],
        "node counts must not depend on thread count"
    );
    assert_eq!(
        with_threads["payload"]["incumbent"]["indices"],
        plain["payload"]["incumbent"]["indices"]
    );
}
