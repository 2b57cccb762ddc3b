use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use tempfile::TempDir;
use uie_cli::io::{read_table, write_dataset, write_outputs};
use uie_core::linalg::spectral_radius;
use uie_core::lti::random_excitation;
use uie_core::workflow::{fresh_trajectory, reference_dataset, reference_system, REF_T};
use uie_core::{IoTrajectory, LtiSystem, UieRealization};

fn uie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uie")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dataset(dir: &TempDir, name: &str, data: &IoTrajectory) -> PathBuf {
    let p = dir.path().join(name);
    write_dataset(&p, data).unwrap();
    p
}

fn selected(out: &Output) -> Option<u64> {
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    v["selected_n_est"].as_u64()
}

#[test]
fn check_selects_n_est_by_feedthrough() {
    let dir = TempDir::new().unwrap();
    for (gamma, expected) in [(1.0, 1), (0.0, 2)] {
        let p = dataset(&dir, "d.csv", &reference_dataset(gamma, REF_T, 3).unwrap());
        let out = uie(&["check", s(&p), "--n-est", "auto"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(selected(&out), Some(expected));
    }
}

#[test]
fn check_reports_constant_input() {
    let dir = TempDir::new().unwrap();
    let u = vec![DVector::from_vec(vec![1.0, -1.0]); 50];
    let data = reference_system(1.0).simulate(&DVector::zeros(3), &u).unwrap();
    let p = dataset(&dir, "c.csv", &data);
    let out = uie(&["check", s(&p)]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pe_ok"], false);
}

#[test]
fn check_with_model_reports_lag() {
    let dir = TempDir::new().unwrap();
    let p = dataset(&dir, "d.csv", &reference_dataset(1.0, REF_T, 3).unwrap());
    let m = dir.path().join("model.json");
    std::fs::write(&m, reference_system(1.0).to_json()).unwrap();
    let out = uie(&["check", s(&p), "--n-init", "1", "--model", s(&m)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["model_lag"], 2);
    assert!(v["n_init_warning"].is_string());
}

#[test]
fn garbage_csv_exits_two() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("g.csv");
    std::fs::write(&p, "hello,world\n1,2\n").unwrap();
    let out_path = dir.path().join("r.json");
    assert_eq!(uie(&["design", s(&p), "--out", s(&out_path)]).status.code(), Some(2));
    assert_eq!(uie(&["check", s(&dir.path().join("missing.csv"))]).status.code(), Some(2));
    assert_eq!(uie(&["check", s(&p), "--n-est", "zero"]).status.code(), Some(2));
}

#[test]
fn infeasible_design_exits_one_and_keeps_report() {
    let dir = TempDir::new().unwrap();
    let p = dataset(&dir, "d.csv", &reference_dataset(1.0, REF_T, 0).unwrap());
    let r = dir.path().join("r.json");
    let rep = dir.path().join("rep.json");
    let out = uie(&["design", s(&p), "--kind", "op", "--out", s(&r), "--report", s(&rep)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!r.exists());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(v["solver_status"], "infeasible");
    assert_eq!(v["null_inclusion_ok"], true);
}

fn design(dir: &TempDir, data: &IoTrajectory, kind: &str) -> (PathBuf, UieRealization) {
    let p = dataset(dir, &format!("{kind}.csv"), data);
    let r = dir.path().join(format!("{kind}.json"));
    let out = uie(&["design", s(&p), "--kind", kind, "--out", s(&r)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["solver_status"], "feasible");
    let real = UieRealization::from_json(&std::fs::read_to_string(&r).unwrap()).unwrap();
    (r, real)
}

#[test]
fn design_then_estimate_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = reference_dataset(0.0, REF_T, 0).unwrap();
    let fresh = fresh_trajectory(0.0, 150, 0).unwrap();
    let outs = dir.path().join("y.csv");
    write_outputs(&outs, fresh.outputs()).unwrap();
    let truth = dataset(&dir, "truth.csv", &fresh);
    for kind in ["op", "cl"] {
        let (r, real) = design(&dir, &data, kind);
        assert_eq!(real.n_est, 2);
        assert!(spectral_radius(&real.a_uie) < 1.0);
        let est = dir.path().join("est.csv");
        let out = uie(&["estimate", s(&r), s(&outs), "--truth", s(&truth), "--out", s(&est)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("MAE:"));
        let text = std::fs::read_to_string(&est).unwrap();
        let mut rows = csv::Reader::from_reader(text.as_bytes());
        let header = rows.headers().unwrap().clone();
        assert_eq!(header.iter().collect::<Vec<_>>(), ["t", "uhat_1", "uhat_2", "u_true_1", "u_true_2", "err"]);
        let mut n = 0;
        for rec in rows.records() {
            let rec = rec.unwrap();
            let t: usize = rec[0].parse().unwrap();
            let err: f64 = rec[5].parse().unwrap();
            if t >= 120 {
                assert!(err < 1e-6, "{kind}: t={t} err={err:e}");
            }
            n += 1;
        }
        // First estimate targets N_init - 1, last targets len - 1 - N_est.
        assert_eq!(n, 150 - 5 - 2 + 1);
    }
}

#[test]
fn estimate_edge_cases() {
    let dir = TempDir::new().unwrap();
    let (r, real) = design(&dir, &reference_dataset(0.0, REF_T, 0).unwrap(), "cl");
    let fresh = fresh_trajectory(0.0, 30, 1).unwrap();
    let exact = dir.path().join("exact.csv");
    write_outputs(&exact, &fresh.outputs()[..7]).unwrap();
    let out = uie(&["estimate", s(&r), s(&exact)]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.lines().nth(1).unwrap().starts_with("4,"));

    let short = dir.path().join("short.csv");
    write_outputs(&short, &fresh.outputs()[..6]).unwrap();
    assert_eq!(uie(&["estimate", s(&r), s(&short)]).status.code(), Some(2));

    let wrong = dir.path().join("wrong.csv");
    std::fs::write(&wrong, "t,y_1\n0,1\n1,2\n").unwrap();
    assert_eq!(uie(&["estimate", s(&r), s(&wrong)]).status.code(), Some(2));

    let z0 = vec!["0"; real.z_dim() + 1].join(",");
    assert_eq!(uie(&["estimate", s(&r), s(&exact), "--z0", &z0]).status.code(), Some(2));
    let z0 = vec!["-1.5"; real.z_dim()].join(",");
    let out = uie(&["estimate", s(&r), s(&exact), "--z0", &z0]);
    assert_eq!(out.status.code(), Some(0));
    // With the cold window the first estimate is the last slot of z0.
    let row = String::from_utf8(out.stdout).unwrap().lines().nth(1).unwrap().to_string();
    assert_eq!(row, "4,-1.5,-1.5");
}

fn occupancy_plant() -> LtiSystem {
    LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.6, 0.2, -0.1, 0.5]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.4]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
        DMatrix::zeros(1, 1),
    )
    .unwrap()
}

/// Inputs switched off during night hours.
fn occupancy_data(len: usize, seed: u64) -> IoTrajectory {
    let mut u = random_excitation(len, 1, seed, 1.0).unwrap();
    for (t, v) in u.iter_mut().enumerate() {
        if (t % 24) >= 20 || (t % 24) < 6 {
            v.fill(0.0);
        }
    }
    occupancy_plant().simulate(&DVector::zeros(2), &u).unwrap()
}

#[test]
fn night_mask_does_not_hurt() {
    let dir = TempDir::new().unwrap();
    // Design data stay persistently exciting, so they are not switched off.
    let u = random_excitation(200, 1, 6, 1.0).unwrap();
    let data = occupancy_plant().simulate(&DVector::zeros(2), &u).unwrap();
    let (r, real) = design(&dir, &data, "cl");
    let eval = occupancy_data(96, 9);
    let truth = dataset(&dir, "eval.csv", &eval);
    let z0 = vec!["3"; real.z_dim()].join(",");
    let mae = |extra: &[&str]| -> f64 {
        let mut args = vec!["estimate", s(&r), s(&truth), "--truth", s(&truth), "--z0", &z0];
        args.extend_from_slice(extra);
        let out = uie(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let err = String::from_utf8(out.stderr).unwrap();
        err.trim().strip_prefix("MAE: ").unwrap().parse().unwrap()
    };
    let plain = mae(&[]);
    let masked = mae(&["--mask", "24:20-6"]);
    assert!(masked <= plain, "masked {masked} vs plain {plain}");

    let out = uie(&["estimate", s(&r), s(&truth), "--mask", "1:0-1", "--out", s(&dir.path().join("m.csv"))]);
    assert_eq!(out.status.code(), Some(0));
    let table = read_table_est(&dir.path().join("m.csv"));
    assert!(table.iter().all(|&v| v == 0.0));
    assert_eq!(uie(&["estimate", s(&r), s(&truth), "--mask", "24:30-2"]).status.code(), Some(2));
}

fn read_table_est(p: &Path) -> Vec<f64> {
    let text = std::fs::read_to_string(p).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect()
}

#[test]
fn repro_sim_writes_curves_and_summary() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("g0");
    let out = uie(&["repro-sim", "--gamma", "0", "--seed", "0", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(v["selected_n_est"], 2);
    for k in ["op", "cl"] {
        assert!(v[k]["spectral_radius"].as_f64().unwrap() < 1.0);
        let curve = read_table(&out_dir.join(format!("{k}_errors.csv")));
        // The curve file has columns t,err, which the dataset reader rejects.
        assert!(curve.is_err());
        let text = std::fs::read_to_string(out_dir.join(format!("{k}_errors.csv"))).unwrap();
        assert!(text.starts_with("t,err\n"));
        assert_eq!(text.lines().count(), 1 + 100 - 5 - 2 + 1);
    }
    assert_eq!(uie(&["repro-sim", "--gamma", "0.5", "--out", s(&out_dir)]).status.code(), Some(2));
}

#[test]
fn repro_sim_reports_infeasible_feedthrough_case() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("g1");
    let out = uie(&["repro-sim", "--gamma", "1", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(v["selected_n_est"], 1);
    assert_eq!(v["success"], false);
}
