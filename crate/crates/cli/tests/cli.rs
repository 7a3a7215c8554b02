use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const FAST: &[&str] = &["--mode", "free", "--dof", "3", "--candidates", "2", "--adam-steps", "15"];

fn morphforge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphforge")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn scene(dir: &Path) {
    ok(&morphforge(&["scene", "gen", "--seed", "3", "--goals", "3", "--obstacles", "2", "--max-dist", "0.8", "--out", "scene.json"], dir));
}

#[test]
fn scene_gen_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = morphforge(&["scene", "gen", "--seed", "5"], dir.path());
    let b = morphforge(&["scene", "gen", "--seed", "5"], dir.path());
    let c = morphforge(&["scene", "gen", "--seed", "6"], dir.path());
    ok(&a);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let s: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(s["goals"].as_array().unwrap().len(), 8);
    assert_eq!(s["obstacles"].as_array().unwrap().len(), 8);
}

#[test]
fn design_writes_ranked_result_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path());
    let o = morphforge(&[&["design", "--seed", "11", "--out", "run", "scene.json"], FAST].concat(), dir.path());
    ok(&o);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("seed = 11"), "{stderr}");
    assert!(stderr.contains("mode = \"free\""), "{stderr}");

    let r = json(&dir.path().join("run/result.json"));
    let cands = r["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 2);
    let losses: Vec<f64> = cands.iter().map(|c| c["benchmark_loss"].as_f64().unwrap()).collect();
    assert!(losses[0] <= losses[1]);
    assert_eq!(r["render"]["candidates"].as_array().unwrap().len(), 2);
    assert_eq!(r["config"]["solver"]["rng_seed"], 11);

    // The echoed config reproduces the run.
    let again = morphforge(&["design", "--config", "run/config.toml", "--out", "rerun", "scene.json"], dir.path());
    ok(&again);
    assert_eq!(std::fs::read(dir.path().join("run/result.json")).unwrap(), std::fs::read(dir.path().join("rerun/result.json")).unwrap());
}

#[test]
fn evaluate_reproduces_design_loss() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path());
    ok(&morphforge(&[&["design", "--out", "run", "scene.json"], FAST].concat(), dir.path()));
    let design = json(&dir.path().join("run/result.json"));
    for rank in ["0", "1"] {
        let o = morphforge(&["evaluate", "scene.json", "--from-result", "run/result.json", "--rank", rank], dir.path());
        ok(&o);
        let ev: Value = serde_json::from_slice(&o.stdout).unwrap();
        let r: usize = rank.parse().unwrap();
        assert_eq!(ev["candidates"][0]["loss"], design["candidates"][r]["loss"]);
        assert_eq!(ev["candidates"][0]["goal_errors"], design["candidates"][r]["goal_errors"]);
    }

    std::fs::write(dir.path().join("params.json"), serde_json::to_vec(&design["candidates"][0]["params"]).unwrap()).unwrap();
    let o = morphforge(&["evaluate", "scene.json", "--params", "params.json"], dir.path());
    ok(&o);
    let ev: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(ev["candidates"][0]["goal_errors"].as_array().unwrap().len(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path());
    let code = |args: &[&str]| morphforge(args, dir.path()).status.code();
    assert_eq!(code(&["design", "--dof", "0", "scene.json"]), Some(2));
    assert_eq!(code(&["design", "missing.json"]), Some(2));
    assert_eq!(code(&["design", "--candidates", "0", "scene.json"]), Some(2));
    assert_eq!(code(&["ga", "--mode", "free", "scene.json"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "dof = \"six\"\n").unwrap();
    assert_eq!(code(&["design", "--config", "bad.toml", "scene.json"]), Some(2));
    std::fs::write(dir.path().join("bad.json"), "{\"goals\": [}").unwrap();
    assert_eq!(code(&["design", "bad.json"]), Some(2));
    // The output path is an existing file, so writing the result fails at runtime.
    std::fs::write(dir.path().join("taken"), "").unwrap();
    assert_eq!(code(&[&["design", "--out", "taken", "scene.json"], FAST].concat()), Some(3));
}

#[test]
fn brute_force_and_ga() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path());
    std::fs::write(dir.path().join("small.toml"), "dof = 2\n[solver]\nn_candidates = 3\nadam_steps = 10\n[ga]\npopulation = 6\ngenerations = 3\n").unwrap();
    ok(&morphforge(&["brute-force", "--config", "small.toml", "--out", "bf", "scene.json"], dir.path()));
    let bf = json(&dir.path().join("bf/result.json"));
    assert_eq!(bf["assemblies"].as_array().unwrap().len(), 25);
    assert_eq!(bf["candidates"].as_array().unwrap().len(), 3);

    ok(&morphforge(&["ga", "--config", "small.toml", "--seed", "2", "--out", "ga", "scene.json"], dir.path()));
    let ga = json(&dir.path().join("ga/result.json"));
    // Initial population plus three generations.
    assert_eq!(ga["ga_history"].as_array().unwrap().len(), 4);
    let best = ga["candidates"][0]["benchmark_loss"].as_f64().unwrap();
    let min_bf = bf["assemblies"].as_array().unwrap().iter().map(|a| a["benchmark_loss"].as_f64().unwrap()).fold(f64::INFINITY, f64::min);
    assert!(best >= min_bf - 1e-12);
}

#[test]
fn bench_writes_report_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bench.toml"), "dof = 2\n[solver]\nadam_steps = 10\nn_candidates = 2\n[ga]\npopulation = 6\ngenerations = 2\n").unwrap();
    let o = morphforge(
        &["bench", "--config", "bench.toml", "--tasks", "2", "--methods", "bf,ga,pipeline", "--goals", "2", "--obstacles", "1", "--out", "rep"],
        dir.path(),
    );
    ok(&o);
    let rep = dir.path().join("rep");
    for f in ["report.json", "summary.csv", "task_0/scores.csv", "task_1/scores.csv"] {
        assert!(rep.join(f).is_file(), "missing {f}");
    }
    let report = json(&rep.join("report.json"));
    assert_eq!(report["tasks"].as_array().unwrap().len(), 2);
    let summary = std::fs::read_to_string(rep.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 3);
}
