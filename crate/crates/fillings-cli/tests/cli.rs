use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fillings")).args(args).output().expect("spawn fillings")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tmp(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("fillings-cli-{}-{name}", std::process::id()))
}

#[test]
fn reduce_word() {
    let o = run(&["reduce", "--word", "x y y' x' y"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "y");
}

#[test]
fn area_report() {
    let z2 = fixture("z2.json");
    let out = tmp("area.json");
    let o = run(&["area", "--presentation", z2.to_str().unwrap(), "--word", "x x y x' x' y'", "--json", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("area 2"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["version"], 1);
    assert_eq!(v["verdict"], "pass");
    assert_eq!(v["result"]["area"], 2);
    assert_eq!(v["seed"], 2024);
    assert!(v.get("timing_ms").is_none());
    std::fs::remove_file(out).ok();
}

#[test]
fn reports_are_deterministic() {
    let z2 = fixture("z2.json");
    let (a, b) = (tmp("det-a.json"), tmp("det-b.json"));
    for p in [&a, &b] {
        let o = run(&["dehn", "--presentation", z2.to_str().unwrap(), "--max-length", "6", "--json", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    let (ra, rb) = (std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
    let strip = |s: &str| s.replace(a.to_str().unwrap(), "").replace(b.to_str().unwrap(), "");
    assert_eq!(strip(&ra), strip(&rb));
    std::fs::remove_file(a).ok();
    std::fs::remove_file(b).ok();
}

#[test]
fn dehn_table() {
    let o = run(&["dehn", "--presentation", fixture("z2.json").to_str().unwrap(), "--max-length", "6"]);
    assert_eq!(o.status.code(), Some(0));
    let last = stdout(&o).lines().last().unwrap().to_string();
    assert!(last.starts_with("6\t2\t"), "{last}");
}

#[test]
fn composed_bound() {
    let o = run(&["bounds", "--kind", "area-radius", "--alpha", "l^2", "--rho", "l", "--r", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "l^4");
}

#[test]
fn exit_codes() {
    let z2 = fixture("z2.json");
    let z2 = z2.to_str().unwrap();
    assert_eq!(run(&["area", "--presentation", z2, "--word", "x y"]).status.code(), Some(1));
    assert_eq!(run(&["area", "--presentation", z2, "--word", "x ?"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["area", "--presentation", "/nonexistent.json", "--word", "x"]).status.code(), Some(2));
    let o = run(&["--budget-states", "3", "area", "--presentation", z2, "--word", "x x y x' x' y'"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bb_presentation_of_triangle() {
    let out = tmp("bb.json");
    let o = run(&["bb", "--complex", fixture("k3.json").to_str().unwrap(), "present", "--json", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["result"]["dicks_leary"]["relators"].as_array().unwrap().len(), 18);
    assert_eq!(v["result"]["raag"]["generators"].as_array().unwrap().len(), 3);
    std::fs::remove_file(out).ok();
}

#[test]
fn depth_of_kernel() {
    let o = run(&["depth", "--theta", fixture("theta_k32.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "depth 1");
}

#[test]
fn knmr_presentation() {
    let o = run(&["construct", "knmr", "--n", "3", "--m", "2", "--r", "1", "--present", "q1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\"generators\""));
}

#[test]
fn distortion_needs_kernel_words() {
    let t = fixture("theta_k32.json");
    let t = t.to_str().unwrap();
    assert_eq!(run(&["distort", "--theta", t, "--sub", "x1", "--radius", "1"]).status.code(), Some(2));
    let o = run(&[
        "distort", "--theta", t, "--sub", "x1 x2'", "--sub", "x1 x3'", "--sub", "y1", "--sub", "y2", "--sub", "y3", "--radius", "2",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().last().unwrap().starts_with("2\t2"));
}

#[test]
fn single_fixture_criterion() {
    let o = run(&["fixtures", "run", "--only", "11"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("[PASS] 11"));
}
