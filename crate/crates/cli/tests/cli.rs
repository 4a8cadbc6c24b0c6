use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparse-arx"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn without_wall_time(json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v.as_object_mut().unwrap().remove("wall_time_s");
    v
}

fn simulate(dir: &Path, name: &str, seed: &str, samples: &str) -> Output {
    run(
        &[
            "simulate", "--nodes", "4", "--inputs", "1", "--order", "2", "--samples", samples, "--seed", seed,
            "--out", &format!("{name}.csv"), "--truth", &format!("{name}.json"),
        ],
        dir,
    )
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&simulate(dir.path(), "a", "7", "40")), 0);
    assert_eq!(code(&simulate(dir.path(), "b", "7", "40")), 0);
    let read = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.json"), read("b.json"));
    assert!(read("a.csv").starts_with("t,y1,y2,y3,y4,u1"));
    assert_eq!(read("a.csv").lines().count(), 41);
}

#[test]
fn too_few_samples_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path(), "x", "1", "2");
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient data"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["identify", "--bogus"], dir.path())), 2);
    assert_eq!(code(&run(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&run(&["--help"], dir.path())), 0);
}

#[test]
fn empty_data_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    let o = run(&["identify", "--data", "empty.csv", "--out", "r.json"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn identify_writes_result_and_graph() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&simulate(dir.path(), "d", "3", "120")), 0);
    let args = ["identify", "--data", "d.csv", "--k", "3", "--out", "r1.json", "--dot", "g.dot"];
    assert_eq!(code(&run(&args, dir.path())), 0);
    let json = fs::read_to_string(dir.path().join("r1.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["solver"], "cccp");
    assert_eq!(v["nodes"].as_array().unwrap().len(), 4);
    assert_eq!(v["config"]["k"], 3);
    let dot = fs::read_to_string(dir.path().join("g.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("u1 [shape=box]"));

    // same data, config and seed: identical result apart from timing
    let again = ["identify", "--data", "d.csv", "--k", "3", "--out", "r2.json"];
    assert_eq!(code(&run(&again, dir.path())), 0);
    let json2 = fs::read_to_string(dir.path().join("r2.json")).unwrap();
    assert_eq!(without_wall_time(&json), without_wall_time(&json2));
}

#[test]
fn every_solver_and_mode_runs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&simulate(dir.path(), "d", "5", "60")), 0);
    for (solver, mode, lambda) in [
        ("em", "combined", "estimate"),
        ("admm", "element", "fixed:0.01"),
        ("cccp", "group", "grid:0.001,0.01,0.1"),
    ] {
        let o = run(
            &["identify", "--data", "d.csv", "--k", "2", "--solver", solver, "--mode", mode, "--lambda", lambda, "--out", "r.json"],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{solver}/{mode}: {}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(v["solver"], solver);
    }
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&simulate(dir.path(), "d", "2", "60")), 0);
    fs::write(dir.path().join("run.cfg"), "# shared settings\nk = 2\nsolver = em\nout = r.json\n").unwrap();
    let o = run(&["--config", "run.cfg", "identify", "--data", "d.csv", "--k", "3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(v["config"]["k"], 3);
    assert_eq!(v["solver"], "em");
}

#[test]
fn benchmark_single_trial_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["benchmark", "--trials", "1", "--seed", "9", "--nodes", "4", "--out", out, "--table", "t.md"];
    let o = run(&args("a.json"), dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for row in ["| Our method |", "| SBL |", "| GSBL |"] {
        assert!(stdout.contains(row), "{stdout}");
    }
    assert_eq!(code(&run(&args("b.json"), dir.path())), 0);
    let read = |f: &str| without_wall_time(&fs::read_to_string(dir.path().join(f)).unwrap());
    assert_eq!(read("a.json"), read("b.json"));
    assert_eq!(read("a.json")["methods"][0]["trials"].as_array().unwrap().len(), 1);
}

#[test]
fn jobs_flag_and_environment_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&simulate(dir.path(), "d", "4", "40")), 0);
    let o = bin()
        .args(["identify", "--data", "d.csv", "--k", "2", "--out", "r.json"])
        .env("ARX_SBL_JOBS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let o = run(&["--jobs", "1", "identify", "--data", "d.csv", "--k", "2", "--out", "r.json"], dir.path());
    assert_eq!(code(&o), 0);
}
