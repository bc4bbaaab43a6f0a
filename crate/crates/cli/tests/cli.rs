use std::process::Command;

fn auglag() -> Command {
    Command::new(env!("CARGO_BIN_EXE_auglag"))
}

#[test]
fn p1_succeeds_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p1.json");
    let out = auglag().args(["--problem", "P1", "--audit", "--json"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["schema"], 1);
    assert_eq!(doc["record"]["status"], "kkt_success");
    assert!((doc["record"]["objective"].as_f64().unwrap() + 2.0).abs() <= 1e-6);
    assert!(doc["audit"].is_object());
    assert_eq!(doc["options"]["solver"]["eps_feas"], 1e-8);
}

#[test]
fn p3_fails_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p3.json");
    let out = auglag().args(["--problem", "P3", "--json"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let status = doc["record"]["status"].as_str().unwrap();
    assert!(status == "penalty_too_big" || status == "infeasible_stationary", "{status}");
}

#[test]
fn unknown_problem_is_usage_error() {
    assert_eq!(auglag().args(["--problem", "nosuch"]).status().unwrap().code(), Some(2));
    assert_eq!(auglag().args(["--suite", "P1,nosuch"]).status().unwrap().code(), Some(2));
    assert_eq!(auglag().status().unwrap().code(), Some(2));
}

#[test]
fn empty_suite_is_fine() {
    let out = auglag().args(["--suite", ""]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn suite_with_profile() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("suite.json");
    let csv = dir.path().join("profile.csv");
    let out = auglag()
        .args(["--suite", "P1,P2,bound_quadratic", "--json"])
        .arg(&json)
        .arg("--profile-csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["records"].as_array().unwrap().len(), 3);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("tau,auglag,auglag_accel\n"));
    let last = text.lines().last().unwrap();
    assert_eq!(last.split(',').count(), 3);
}

#[test]
fn looser_tolerance_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p1.json");
    let out = auglag().args(["--problem", "P1", "--eps-feas", "1e-4", "--json"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["options"]["solver"]["eps_feas"], 1e-4);
    assert!(doc["record"]["residuals"]["feasibility"].as_f64().unwrap() <= 1e-4);
}
