use std::fs;
use std::process::Command;

use qsmooth::experiment::{run, ExperimentConfig};

fn qsmooth() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qsmooth"))
}

fn smoke_config(out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        n_true_trajectories: 10,
        n_hypothetical: 50,
        output_dir: out.to_path_buf(),
        n_bootstrap: 100,
        correlator: qsmooth::experiment::CorrelatorSettings {
            n_trajectories: 60,
            ..Default::default()
        },
        ..ExperimentConfig::desk()
    }
}

#[test]
fn all27_smoke_run_satisfies_identities() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&smoke_config(tmp.path())).unwrap();
    assert_eq!(out.report.combos.len(), 27);
    for g in out.report.groups.values() {
        assert!(g.identity_residual <= 1e-12, "{g:?}");
        assert!(g.delta_trace <= 1e-12);
        assert!(g.min_true_purity >= 1.0 - 1e-6);
    }
    for c in &out.report.combos {
        assert!(c.power_identity_residual <= 1e-12, "{}", c.combo);
        let path = tmp.path().join(format!("powers_{}.csv", c.combo));
        let text = fs::read_to_string(path).unwrap();
        assert!(text.starts_with("t,R_S,R_S_err,R_F,R_F_err,R_P,R_P_err,alpha,ess_mean\n"));
        assert_eq!(text.lines().count(), 802);
    }
    for g in &out.groups {
        let valid = g.alphas[g.plan.d_us.iter().position(|&u| u == g.plan.d_v).unwrap()].clone();
        let finite: Vec<f64> = valid
            .alpha
            .iter()
            .cloned()
            .filter(|a| a.is_finite())
            .collect();
        assert!(finite.len() > 700);
        assert!(finite.iter().all(|a| (a - 1.0).abs() < 1e-12));
    }
    let corr = fs::read_to_string(tmp.path().join("correlators.csv")).unwrap();
    assert!(corr.starts_with("pair,tau,value,stderr\n"));
    assert_eq!(corr.lines().count(), 1 + 9 * 41);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["master_seed"], 0);
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() > 0.0);
    assert!(tmp.path().join("report.json").exists());
}

#[test]
fn estimate_prints_desk_cost() {
    let out = qsmooth()
        .args(["estimate", "--combos", "dYdXdY"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        v["kraus_per_combo"].as_f64().unwrap(),
        300.0 * 1000.0 * 8000.0
    );
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_dt = tmp.path().join("bad_dt.json");
    fs::write(&bad_dt, r#"{"dt": 0.5}"#).unwrap();
    let out = qsmooth()
        .args(["validate", "--config"])
        .arg(&bad_dt)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let unknown = tmp.path().join("unknown.json");
    fs::write(&unknown, r#"{"n_hypothetcal": 10}"#).unwrap();
    let out = qsmooth()
        .args(["run", "--config"])
        .arg(&unknown)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_hypothetcal"));

    let out = qsmooth()
        .args(["validate", "--combos", "dXdXdQ"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let over = tmp.path().join("over.json");
    fs::write(&over, r#"{"budget": 1000.0}"#).unwrap();
    let out = qsmooth()
        .args(["run", "--config"])
        .arg(&over)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn validate_accepts_valid_only_combo() {
    let out = qsmooth()
        .args(["validate", "--combos", "dXdXdX"])
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn cli_run_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"n_true_trajectories": 4, "n_hypothetical": 20, "t_total": 6.0,
            "n_bootstrap": 20, "correlator": {"enabled": false}}"#,
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    let out = qsmooth()
        .args([
            "run",
            "--combos",
            "dNdNdN",
            "--seed",
            "5",
            "--threads",
            "1",
            "--config",
        ])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("powers_dNdNdN.csv").exists());
    let rep = qsmooth()
        .args(["report", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(rep.status.success());
    assert!(String::from_utf8_lossy(&rep.stdout).contains("dNdNdN"));
}
