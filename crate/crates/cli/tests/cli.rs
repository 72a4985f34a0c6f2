use std::fs;
use std::process::{Command, Output};

fn contactsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contactsim")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bandwidth_prints_a_table_row() {
    let o = contactsim(&["bandwidth", "--contacts", "16000", "--substeps", "8", "--iterations", "64"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[..3], ["16000", "8", "64"]);
    assert_eq!(row[3].parse::<f64>().unwrap(), 16000.0 * 160.0);
    assert_eq!(row[4].parse::<f64>().unwrap(), 16000.0 * 160.0 * 512.0);
}

#[test]
fn zero_contacts_is_an_error() {
    let o = contactsim(&["bandwidth", "--contacts", "0"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 1"));
}

#[test]
fn emitted_scene_runs_with_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("drop.json");
    let stats = dir.path().join("stats.csv");
    let pc = dir.path().join("pc");
    let o = contactsim(&["scene", "box_drop", "--emit", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let o = contactsim(&[
        "run",
        cfg.to_str().unwrap(),
        "--frames",
        "40",
        "--threads",
        "1",
        "--stats",
        stats.to_str().unwrap(),
        "--dump-contacts",
        "20",
        "--contacts-dir",
        pc.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("steps/s"));
    let data = fs::read_to_string(&stats).unwrap();
    assert_eq!(data.lines().filter(|l| l.starts_with("0,")).count(), 40);
    assert!(dir.path().join("stats.timing.csv").exists());
    assert!(pc.join("contacts_i0_f000020.csv").exists());
}

#[test]
fn builtin_by_name_and_listing() {
    let o = contactsim(&["scenes"]);
    assert!(stdout(&o).lines().any(|l| l == "nut_and_bolt"));
    let o = contactsim(&["run", "--scene", "box_drop", "--frames", "5"]);
    assert!(o.status.success());
    let o = contactsim(&["scene", "torus_pile", "--count", "2"]);
    let text = stdout(&o);
    assert_eq!(text.matches("\"type\": \"torus\"").count(), 2);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"bodies": [{"name": "a", "mesh": {"type": "box", "extents": "wide"}}]}"#).unwrap();
    let o = contactsim(&["run", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("bodies[0].mesh"));
    assert!(!contactsim(&["run", "missing.json"]).status.success());
    assert!(!contactsim(&["scene", "gears"]).status.success());
    assert!(!contactsim(&["run"]).status.success());
}

#[test]
fn assets_are_exported() {
    let dir = tempfile::tempdir().unwrap();
    let nut = dir.path().join("nut.obj");
    let o = contactsim(&["gen-asset", "thread", "--size", "8", "--kind", "nut", "--segments-per-turn", "16", "--out", nut.to_str().unwrap()]);
    assert!(o.status.success());
    let m = contactsim::mesh::load_obj(&fs::read_to_string(&nut).unwrap()).unwrap();
    assert!(m.is_watertight());
    let (peg, hole) = (dir.path().join("peg.obj"), dir.path().join("hole.obj"));
    let o = contactsim(&["gen-asset", "peg", "--diameter", "4", "--peg", peg.to_str().unwrap(), "--hole", hole.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("clearance 0.104 mm"));
    assert!(!contactsim(&["gen-asset", "thread", "--size", "7", "--kind", "bolt", "--out", nut.to_str().unwrap()]).status.success());
}
