use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pacemaker(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pacemaker")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    let out = dir.to_str().unwrap();
    all.extend(["--out", out]);
    pacemaker(&all)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_error(o: &Output, code: i32) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    let prefix = format!("ERROR {code}: ");
    assert!(err.starts_with(&prefix), "{err}");
    assert_eq!(err.lines().count(), 1, "{err}");
}

#[test]
fn dimless_defaults_oscillate() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["simulate"]);
    assert!(o.status.success());
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["classification"], "periodic");
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,V,N\n0,0,0\n"));
    let manifest = json(&dir.path().join("manifest.json"));
    assert!(manifest["timestamp_unix"].as_u64().unwrap() > 0);
    assert_eq!(manifest["model"], "dimless");
}

#[test]
fn v3_stays_between_its_bounds() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &["--model", "full", "simulate", "--track-v3"]).status.success());
    let s = json(&dir.path().join("v3_summary.json"));
    let (lo, hi) = (s["v3_min"].as_f64().unwrap(), s["v3_max"].as_f64().unwrap());
    assert!(lo >= -19.0 && hi <= -11.0, "{lo} {hi}");
    assert!(s["fraction_near_upper"].as_f64().unwrap() > 0.5);
}

#[test]
fn blocked_potassium_is_quiescent() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &["--model", "full", "simulate", "--set", "gK=0"]).status.success());
    assert_eq!(json(&dir.path().join("report.json"))["classification"], "quiescent");
}

#[test]
fn block_table_matches_the_expected_pattern() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &["block"]).status.success());
    let table = fs::read_to_string(dir.path().join("verdicts.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert!(rows[1].starts_with("gL,periodic,"), "{table}");
    assert!(rows[2].starts_with("gCa,quiescent,"));
    assert!(rows[3].starts_with("gK,quiescent,"));
    assert!(rows[1..].iter().all(|r| r.ends_with(",true")));
    for c in ["gL", "gCa", "gK"] {
        assert!(dir.path().join(format!("series_{c}.csv")).exists());
    }
}

#[test]
fn leak_block_without_calcium_current_relaxes_slowly() {
    // only the K+ current is left; it relaxes over about an hour, far longer than the default windows
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["block", "--set", "gCa=0"]);
    assert_error(&o, 4);
    let table = fs::read_to_string(dir.path().join("verdicts.csv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("gL,undecided,"), "{table}");

    let long = tempfile::tempdir().unwrap();
    assert!(run_in(long.path(), &["block", "--set", "gCa=0", "--transient", "60000"]).status.success());
    let table = fs::read_to_string(long.path().join("verdicts.csv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("gL,quiescent,"), "{table}");
}

#[test]
fn outputs_are_deterministic_and_the_manifest_replays() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_in(a.path(), &["sweep", "--param", "v1b", "--range", "-0.3:-0.25", "--samples", "4", "--set", "v3b=-0.12"]).status.success());
    let manifest = json(&a.path().join("manifest.json"));
    let mut args: Vec<String> = manifest["args"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let i = args.iter().position(|s| s == "--out").unwrap();
    args[i + 1] = b.path().to_str().unwrap().to_string();
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    assert!(pacemaker(&argv).status.success());
    let read = |d: &Path| fs::read(d.join("sweep.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let csv = String::from_utf8(read(a.path())).unwrap();
    assert!(csv.starts_with("param,classification,period,v_min,v_max\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn thread_count_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["sweep", "--param", "v1b", "--range", "-0.3:-0.25", "--samples", "6"];
    let mut one = args.to_vec();
    one.extend(["--jobs", "1"]);
    assert!(run_in(a.path(), &one).status.success());
    assert!(run_in(b.path(), &args).status.success());
    assert_eq!(fs::read(a.path().join("sweep.csv")).unwrap(), fs::read(b.path().join("sweep.csv")).unwrap());
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_error(&run_in(dir.path(), &["simulate", "--set", "nope=1"]), 2);
    assert_error(&run_in(dir.path(), &["simulate", "--set", "v3b"]), 2);
    assert_error(&run_in(dir.path(), &["reproduce", "fig13"]), 2);
    assert_error(&run_in(dir.path(), &["continue", "--free", "v2b"]), 2);
    assert_error(&run_in(dir.path(), &["continue", "--free", "v1b", "--range", "0:-1"]), 2);
    assert_error(&run_in(dir.path(), &["--model", "full", "map"]), 2);
    assert_error(&run_in(dir.path(), &["simulate", "--x0", "0,0,0"]), 2);
    assert_error(&pacemaker(&["frobnicate"]), 2);
}

#[test]
fn blow_up_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_error(&run_in(dir.path(), &["simulate", "--step", "20"]), 3);
}

#[test]
fn missing_equilibria_exit_with_code_five() {
    let dir = tempfile::tempdir().unwrap();
    // a step-like K+ activation makes every residual non-finite
    assert_error(&run_in(dir.path(), &["continue", "--free", "v1b", "--set", "v4b=1e-300"]), 5);
}

#[test]
fn continuation_in_v1b_finds_the_bistable_window() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["continue", "--free", "v1b", "--at", "v3b=-0.1375", "--period"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&dir.path().join("summary.json"));
    let kinds: Vec<&str> = s["kinds"].as_array().unwrap().iter().map(|k| k.as_str().unwrap()).collect();
    assert_eq!(kinds, ["SN", "SNIC", "HB", "SNC"]);
    let events = json(&dir.path().join("events.json"));
    let at = |k: &str| events.as_array().unwrap().iter().find(|e| e["kind"] == k).unwrap()["v1b"].as_f64().unwrap();
    let (hb, snc) = (at("HB"), at("SNC"));
    let window = &s["bistable"][0];
    let (lo, hi) = (window[0].as_f64().unwrap(), window[1].as_f64().unwrap());
    assert!(lo >= snc - 1e-3 && hi <= hb + 1e-3 && hi > lo, "[{lo}, {hi}] vs SNC {snc}, HB {hb}");
    assert!(dir.path().join("period.csv").exists());
}

#[test]
fn slice_portrait_shows_three_attractors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["map", "--slice", "-0.047", "--phase-portrait"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p = json(&dir.path().join("portrait/portrait.json"));
    let stable_eq = p["equilibria"].as_array().unwrap().iter().filter(|e| e["stability"].as_str().unwrap().starts_with("stable")).count();
    let cycles = p["cycles"].as_array().unwrap();
    let stable_cycles = cycles.iter().filter(|c| c["stability"] == "stable").count();
    assert_eq!((stable_eq, stable_cycles), (2, 1));
    assert!(cycles.iter().any(|c| c["stability"] == "unstable"));
    assert_eq!(json(&dir.path().join("slice/excitability.json"))["label"], "bistable-with-HC-onset");
}

#[test]
fn fig1_bundle_has_three_series() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &["reproduce", "fig1"]).status.success());
    let fig = dir.path().join("fig1");
    for c in ["gL", "gCa", "gK"] {
        assert!(fig.join(format!("series_{c}.csv")).exists());
    }
    assert!(fs::read_to_string(fig.join("plot.txt")).unwrap().starts_with("# fig1"));
}
