use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rtd::export::{export_plot_data, read_monitor_csv, ExportError, MONITOR_FILE, REPORT_FILE};
use rtd::simulator::TrajectoryLog;

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn rtd(args: &[&std::ffi::OsStr]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtd")).args(args).output().expect("binary runs")
}

macro_rules! args {
    ($($a:expr),* $(,)?) => { &[$(std::ffi::OsStr::new($a)),*] };
}

/// Letters scenario with a shortened window, written to `dir`.
fn short_letters(dir: &Path, duration: f64) -> PathBuf {
    let s = rtd::scenario::parse_scenario(&bundled("letters.json")).unwrap();
    let s = rtd::scenarios::with_window(&s, duration);
    let path = dir.join("letters_short.json");
    std::fs::write(&path, s.to_json()).unwrap();
    path
}

#[test]
fn certify_bundled_scenario() {
    let out = rtd(args!["certify", bundled("cuboid_disk.json").as_os_str()]);
    assert_eq!(out.status.code(), Some(0));
    let c: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(c["feasible"], true);
    assert!(c["margin"].as_f64().unwrap() >= 0.0);
    assert!(c["d_min"].as_f64().is_some() && c["beta_star"].as_f64().is_some());
}

#[test]
fn certify_infeasible_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = rtd::scenario::parse_scenario(&bundled("letters.json")).unwrap();
    s.safety.epsilon *= 10.0;
    let path = tmp.path().join("tight.json");
    std::fs::write(&path, s.to_json()).unwrap();
    let out = rtd(args!["certify", path.as_os_str()]);
    assert_eq!(out.status.code(), Some(2));
    let c: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(c["feasible"], false);

    let sim = rtd(args!["simulate", path.as_os_str(), "-o", tmp.path().join("out").as_os_str()]);
    assert_eq!(sim.status.code(), Some(2), "uncertified plans fail closed");
}

#[test]
fn missing_file_and_bad_usage_exit_1() {
    assert_eq!(rtd(args!["certify", "/nonexistent/scenario.json"]).status.code(), Some(1));
    assert_eq!(rtd(args!["frobnicate"]).status.code(), Some(1));
    assert_eq!(rtd(args!["simulate"]).status.code(), Some(1));
    assert_eq!(rtd(args!["--help"]).status.code(), Some(0));
}

#[test]
fn missing_epsilon_is_reported_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(bundled("letters.json")).unwrap()).unwrap();
    v["safety"].as_object_mut().unwrap().remove("epsilon");
    let path = tmp.path().join("s.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let out = rtd(args!["certify", path.as_os_str()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));
}

#[test]
fn simulate_then_report_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = short_letters(tmp.path(), 30.0);
    let dir = tmp.path().join("run");
    let out = rtd(args!["simulate", scenario.as_os_str(), "-o", dir.as_os_str(), "--dt", "0.002"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trajectory.csv", "monitor.csv", "safety_report.json", "run.json", "plan.json", "plot/manifest.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let rep = rtd(args!["report", dir.as_os_str()]);
    assert_eq!(rep.status.code(), Some(0));
    assert_eq!(rep.stdout, std::fs::read(dir.join(REPORT_FILE)).unwrap());
    let samples = read_monitor_csv(&dir.join(MONITOR_FILE)).unwrap();
    assert_eq!(samples.len(), 15_001);
}

#[test]
fn quartered_window_flags_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = rtd(args![
        "simulate",
        bundled("cuboid_disk.json").as_os_str(),
        "-o",
        dir.as_os_str(),
        "--window",
        "12.5",
        "--stride",
        "1000",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join(REPORT_FILE)).unwrap()).unwrap();
    assert!(r["rotor_speed_ok"] == false || r["tracking_ok"] == false);
    assert_eq!(r["all_ok"], false);
    let rep = rtd(args!["report", dir.as_os_str()]);
    assert_eq!(rep.status.code(), Some(2));
    assert_eq!(rep.stdout, std::fs::read(dir.join(REPORT_FILE)).unwrap());
}

#[test]
fn plan_file_is_replayed_and_checked() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = short_letters(tmp.path(), 20.0);
    let plan = tmp.path().join("plan.json");
    assert_eq!(rtd(args!["plan", scenario.as_os_str(), "-o", plan.as_os_str()]).status.code(), Some(0));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let run_a = rtd(args!["simulate", scenario.as_os_str(), "-o", a.as_os_str(), "--dt", "0.004"]);
    let run_b = rtd(args!["simulate", scenario.as_os_str(), "--plan", plan.as_os_str(), "-o", b.as_os_str(), "--dt", "0.004"]);
    assert_eq!(run_a.status.code(), Some(0));
    assert_eq!(run_b.status.code(), Some(0));
    assert_eq!(std::fs::read(a.join(REPORT_FILE)).unwrap(), std::fs::read(b.join(REPORT_FILE)).unwrap());
    assert_eq!(std::fs::read(a.join("plan.json")).unwrap(), std::fs::read(&plan).unwrap());

    // a plan made for different inputs is refused
    let other_dir = tmp.path().join("other");
    std::fs::create_dir(&other_dir).unwrap();
    let other = short_letters(&other_dir, 25.0);
    let run_c = rtd(args!["simulate", other.as_os_str(), "--plan", plan.as_os_str(), "-o", tmp.path().join("c").as_os_str()]);
    assert_eq!(run_c.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_3_with_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = rtd::scenario::parse_scenario(&bundled("letters.json")).unwrap();
    // absurdly fast poles with a coarse step diverge
    s.controller.position_poles = [-400.0, -410.0, -420.0, -430.0];
    s.sim.dt = 0.05;
    let path = tmp.path().join("unstable.json");
    std::fs::write(&path, s.to_json()).unwrap();
    let dir = tmp.path().join("run");
    let out = rtd(args!["simulate", path.as_os_str(), "-o", dir.as_os_str()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join(REPORT_FILE)).unwrap()).unwrap();
    assert!(r["outcome"].as_str().unwrap().starts_with("aborted"));
    assert_eq!(r["all_ok"], false);
    let rep = rtd(args!["report", dir.as_os_str()]);
    assert_eq!(rep.status.code(), Some(3));
    assert_eq!(rep.stdout, std::fs::read(dir.join(REPORT_FILE)).unwrap());
}

#[test]
fn generate_reproduces_bundled_files() {
    let tmp = tempfile::tempdir().unwrap();
    for (kind, file) in [("cuboid-disk", "cuboid_disk.json"), ("letters", "letters.json")] {
        let path = tmp.path().join(file);
        assert_eq!(rtd(args!["generate", kind, "-o", path.as_os_str()]).status.code(), Some(0));
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(bundled(file)).unwrap(), "{kind}");
    }
    let a = tmp.path().join("r1.json");
    let b = tmp.path().join("r2.json");
    for p in [&a, &b] {
        let out = rtd(args!["generate", "random", "--seed", "7", "--agents", "12", "-o", p.as_os_str()]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(rtd(args!["certify", a.as_os_str()]).status.code(), Some(0));
}

#[test]
fn plot_export_files_and_determinism() {
    let s = rtd::scenario::parse_scenario(&bundled("letters.json")).unwrap();
    let s = rtd::scenarios::with_window(&s, 5.0);
    let plan = rtd::planner::build_plan(&s).unwrap();
    let mut cfg = rtd::simulator::SimConfig::from_scenario(&s);
    cfg.dt = 0.01;
    cfg.record_stride = 10;
    let out = rtd::simulator::run_closed_loop(&s, &plan, &cfg).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let first = export_plot_data(&out.log, &tmp.path().join("a")).unwrap();
    let second = export_plot_data(&out.log, &tmp.path().join("b")).unwrap();
    assert_eq!(first.len(), 8);
    let names: Vec<_> = first.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    for n in ["rotor_1.csv", "rotor_4.csv", "position_x.csv", "position_z.csv", "manifest.json"] {
        assert!(names.contains(&n.to_string()), "{n}");
    }
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
    let rotor = std::fs::read_to_string(tmp.path().join("a/rotor_1.csv")).unwrap();
    let header = rotor.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 1 + 20);
    assert_eq!(rotor.lines().count(), 1 + out.log.records.len());

    assert!(matches!(
        export_plot_data(&TrajectoryLog::default(), tmp.path()),
        Err(ExportError::EmptyLog)
    ));
}
