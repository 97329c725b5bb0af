use std::path::Path;
use std::process::{Command, Output};

use viadel::control::{run_greedy, CostSpec};
use viadel::dde::StepConfig;
use viadel::experiments::{cost_surface, ExperimentConfig};
use viadel::model::{InitialCondition, Params, State};
use viadel::regions::{contains, Region};

fn viadel(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viadel"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("VIADEL_WORKERS")
        .output()
        .unwrap()
}

#[test]
fn simulate_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = viadel(&["simulate", "--scenario", "phi0"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("phi0 J = 38.7"), "{stdout}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("phi0.json")).unwrap()).unwrap();
    for key in ["J", "t_lock", "s_inf", "constraint_ok", "clamp_events"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
    let csv = std::fs::read_to_string(dir.path().join("phi0.csv")).unwrap();
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last[5], summary["J"].as_f64().unwrap());
}

#[test]
fn surge_scenario_flags_initial_control() {
    let dir = tempfile::tempdir().unwrap();
    assert!(viadel(&["simulate", "--scenario", "phi2"], dir.path()).status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("phi2.json")).unwrap()).unwrap();
    assert_eq!(summary["u_initial_non_monotone"], true);
    let j = summary["J"].as_f64().unwrap();
    assert!((39.98..=42.03).contains(&j));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(viadel(&["simulate", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(viadel(&["simulate", "--beta-star", "0.7"], dir.path()).status.code(), Some(1));
    assert_eq!(viadel(&["simulate", "--scenario", "file"], dir.path()).status.code(), Some(1));
    assert_eq!(viadel(&["--help"], dir.path()).status.code(), Some(0));
    // a constant history outside B
    let ic = dir.path().join("ic.json");
    std::fs::write(&ic, r#"{"kind":"constant","s":0.7,"i":0.02}"#).unwrap();
    let out = viadel(&["simulate", "--ic-file", ic.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn region_query() {
    let dir = tempfile::tempdir().unwrap();
    let out = viadel(&["region", "--s", "0.45", "--i", "0.001"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["in_B"], true);
    assert_eq!(v["in_A"], false);
    assert_eq!(v["class"], "interior");
    let out = viadel(&["region", "--s", "0.2", "--i", "0.021"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["class"], "on_s1");
}

#[test]
fn curves_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = viadel(&["curves", "--level", "beta"], dir.path());
    assert!(out.status.success());
    let header: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((header["s_hat"].as_f64().unwrap() - 0.1987).abs() < 5e-4);
    let csv = std::fs::read_to_string(dir.path().join("curve_closed_beta.csv")).unwrap();
    let first: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[1], 0.021);
    let out = viadel(&["curves", "--level", "beta-star", "--kind", "lipschitz", "--delay", "0.5"], dir.path());
    assert!(out.status.success());
}

#[test]
fn h_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = viadel(&["h-sweep", "--h-list", "6,1,0.1"], dir.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("h_sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "h,sup_dist_beta,sup_dist_beta_star,area_A,area_B");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        assert!(w[1][1] <= w[0][1] && w[1][3] >= w[0][3]);
    }
    let sweep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("h_sweep.json")).unwrap()).unwrap();
    let a0 = sweep["area_a0"].as_f64().unwrap();
    assert!(rows.iter().all(|r| r[3] <= a0));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = viadel(&["selftest", "--trials", "20"], dir.path());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.matches("PASS").count(), 3);
}

#[test]
fn cost_surface_self_checks() {
    let cfg = ExperimentConfig {
        resolution: 64,
        ..Default::default()
    };
    let surface = cost_surface(&cfg).unwrap();
    assert!(surface.failures.is_empty());
    let policy = cfg.policy_config().unwrap();
    let mut positive = false;
    for (a, &s) in surface.s.iter().enumerate() {
        for (b, &i) in surface.i.iter().enumerate() {
            let j = surface.j[a][b];
            let x = State::new(s, i);
            if contains(Region::A, &policy.region, x) {
                assert_eq!(j, 0.0, "cell ({s}, {i}) in A");
            }
            if contains(Region::B, &policy.region, x) {
                assert!(j >= 0.0);
                positive |= j > 0.0;
            } else {
                assert!(j.is_nan());
            }
        }
    }
    assert!(positive);

    // Cost along a ray from the herd immunity point to the viable frontier.
    let p = Params::default();
    let star = &policy.region.curve_beta_star;
    let s_end = 0.5 * (p.gamma / p.beta_star + star.s_hat());
    let end = State::new(s_end, star.eval_clamped(s_end));
    let start = State::new(p.gamma / p.beta, 0.0);
    let step = StepConfig::for_params(&p);
    let costs: Vec<f64> = (1..=10)
        .map(|k| {
            let w = k as f64 / 10.0;
            let x = State::new(start.s + w * (end.s - start.s), start.i + w * (end.i - start.i));
            run_greedy(&InitialCondition::constant(x), &policy, &step, &CostSpec::default()).unwrap().j
        })
        .collect();
    let rises = costs.windows(2).filter(|w| w[1] >= w[0] - 1e-9).count();
    assert!(rises >= 8, "{costs:?}");
    assert!(costs[9] > costs[0]);

    let phi0 = run_greedy(
        &InitialCondition::Constant { s: 0.45, i: 0.001 },
        &policy,
        &step,
        &CostSpec::default(),
    )
    .unwrap();
    let again = viadel::experiments::simulate(&cfg).unwrap().0;
    assert!((phi0.j - again.j).abs() <= 1e-9);
}
