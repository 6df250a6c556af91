use std::path::{Path, PathBuf};

use rtd::planner::{build_plan, DeploymentPlan};
use rtd::scenario::{parse_scenario, Scenario, ScenarioError};
use rtd::scenarios::{random_scenario, LETTER_ORDER};
use rtd::trajectory::{angle_schedule, sigma_clamped, TimeWindow};

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

#[test]
fn cuboid_disk_file_contents() {
    let s = parse_scenario(&bundled("cuboid_disk.json")).unwrap();
    assert_eq!(s.agents(), 60);
    assert_eq!(s.quad.m, 0.5);
    assert_eq!(s.quad.max_rotor_speed, 215.0);
    assert_eq!(s.safety.delta, 0.19);
    assert_eq!(s.safety.epsilon, 0.40);
    assert_eq!(s.translation.v0, [10.0, 0.0, 0.0]);
    assert_eq!(s.window.duration(), 50.0);
    let c = build_plan(&s).unwrap().certificate;
    assert!((c.separation_bound() - 1.1889).abs() < 1e-9, "{c:?}");
}

#[test]
fn letters_plan_matches_captioned_values() {
    let s = parse_scenario(&bundled("letters.json")).unwrap();
    let plan = build_plan(&s).unwrap();
    assert_eq!(plan.start.angles.gamma, 0.0);
    assert_eq!(plan.end.angles.gamma, 0.0);
    assert!((plan.start.angles.mu.to_degrees() - 172.8).abs() < 1e-6);
    assert!((plan.end.angles.mu.to_degrees() - 28.8).abs() < 1e-6);
    let b: Vec<usize> = plan.ordering.order.iter().map(|i| i + 1).collect();
    assert_eq!(b, LETTER_ORDER);
    assert_eq!((b[0], b[19]), (18, 1));

    let w = TimeWindow::new(plan.t_s, plan.t_f);
    let mid = 0.5 * (w.t_s + w.t_f);
    let (gamma, mu) = angle_schedule(sigma_clamped(mid, &w), &plan);
    assert_eq!(gamma.value(), 0.0);
    assert!((mu.value().to_degrees() - 100.8).abs() < 1e-6);
}

#[test]
fn scenario_json_round_trip_is_identity() {
    let mut all: Vec<Scenario> = ["cuboid_disk.json", "letters.json"]
        .iter()
        .map(|f| parse_scenario(&bundled(f)).unwrap())
        .collect();
    all.extend((0..5).map(|seed| random_scenario(seed, 6 + seed as usize).unwrap()));
    for s in all {
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.planning_hash(), s.planning_hash());
    }
}

#[test]
fn plan_json_round_trip_is_bit_identical() {
    for seed in 0..5 {
        let s = random_scenario(100 + seed, 12).unwrap();
        let plan = build_plan(&s).unwrap();
        let back = DeploymentPlan::from_json(&plan.to_json()).unwrap();
        assert_eq!(back, plan);
        assert_eq!(back.to_json(), plan.to_json());
        back.check_scenario(&s).unwrap();
    }
}

#[test]
fn empty_window_is_rejected() {
    let s = parse_scenario(&bundled("letters.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
    v["window"]["t_f"] = v["window"]["t_s"].clone();
    match Scenario::from_json(&v.to_string()) {
        Err(ScenarioError::Validation(msg)) => assert!(msg.contains("time window empty"), "{msg}"),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn random_scenarios_are_certified_and_reproducible() {
    for seed in 0..20 {
        let n = 5 + seed as usize;
        let a = random_scenario(seed, n).unwrap();
        assert_eq!(a, random_scenario(seed, n).unwrap());
        assert_eq!(a.agents(), n);
        let plan = build_plan(&a).unwrap();
        assert!(plan.certificate.feasible);
        // margin is a tenth of the bound by construction
        let c = plan.certificate;
        assert!((c.margin - 0.1 * c.separation_bound()).abs() < 1e-12 * c.separation_bound().max(1.0));
    }
}
