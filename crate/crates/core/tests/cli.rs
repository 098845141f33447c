use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use tendonid::config::{IdentificationConfig, KinematicsConfig};
use tendonid::dataset::load_csv;
use tendonid::model::{load_model, save_model, ModelKind, StateSpaceModel};
use tendonid::mpc::closed_loop::LOG_HEADER;
use tendonid::pipeline::end_effector_error;

const SHORT_CONFIG: &str = r#"
seed = 3

[plant]

[excitation]
segments = [
  { kind = "prbs", duration_s = 20.0 },
  { kind = "multisine", duration_s = 20.0 },
]

[mpc]
duration_s = 2.0
"#;

fn tendonid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tendonid")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "{}", stderr(&o));
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn short_run_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SHORT_CONFIG).unwrap();
    ok(tendonid(&["gen-data", "--config", p(&cfg), "--out", p(dir.path())]));
    dir
}

#[test]
fn usage_errors_exit_two() {
    let o = tendonid(&["identify", "--method", "ols", "--train", "x.csv", "--out", "m.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]:"));
    let o = tendonid(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(tendonid(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_files_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    let o = tendonid(&["identify", "--method", "n4sid", "--train", "/nonexistent/train.csv", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[io]:"), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(!out.exists());
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[plant]\nunknown_field = 3\n").unwrap();
    let o = tendonid(&["gen-data", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config]:"), "{}", stderr(&o));
}

#[test]
fn negative_lambda_is_rejected() {
    let o = tendonid(&["identify", "--method", "sindyc", "--train", "x.csv", "--lambda", "-1", "--out", "m.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_data_is_reproducible() {
    let a = short_run_dir();
    let b = short_run_dir();
    for f in ["train.csv", "val.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    assert!(a.path().join("provenance.toml").exists());
    let train = load_csv(a.path().join("train.csv")).unwrap();
    let val = load_csv(a.path().join("val.csv")).unwrap();
    assert_eq!(train.num_inputs(), 4);
    assert_eq!(train.num_outputs(), 2);
    assert!((train.len() as i64 - val.len() as i64).abs() <= 1);
}

#[test]
fn lambda_flag_changes_the_model() {
    let dir = short_run_dir();
    let d = dir.path();
    let train = d.join("train.csv");
    let (loose, tight) = (d.join("loose.json"), d.join("tight.json"));
    ok(tendonid(&["identify", "--method", "sindyc", "--train", p(&train), "--out", p(&loose)]));
    ok(tendonid(&["identify", "--method", "sindyc", "--train", p(&train), "--lambda", "10", "--out", p(&tight)]));
    let sindy = |path: &Path| match load_model(path).unwrap() {
        ModelKind::Sindy(m) => m,
        _ => panic!("not a SINDy model"),
    };
    let (a, b) = (sindy(&loose), sindy(&tight));
    assert_eq!(a.lambda(), IdentificationConfig::default().sindyc.lambda);
    assert_eq!(b.lambda(), 10.0);
    assert!(b.nonzeros() < a.nonzeros());
}

#[test]
fn report_matches_validate_and_marks_absent_models() {
    let dir = short_run_dir();
    let d = dir.path();
    let out = ok(tendonid(&["report", "--dir", p(d)]));
    assert_eq!(out.lines().filter(|l| l.contains("absent")).count(), 3);

    let mut printed = Vec::new();
    for m in ["n4sid", "arx", "sindyc"] {
        let model = d.join(format!("model_{m}.json"));
        ok(tendonid(&["identify", "--method", m, "--train", p(&d.join("train.csv")), "--out", p(&model)]));
        let prefix = d.join(m);
        let line = ok(tendonid(&["validate", "--model", p(&model), "--data", p(&d.join("val.csv")), "--out-prefix", p(&prefix)]));
        std::fs::rename(d.join(format!("{m}_fit.json")), d.join(format!("fit_{m}.json"))).unwrap();
        let mean: f64 = line.split_whitespace().nth(2).unwrap().trim_end_matches('%').parse().unwrap();
        printed.push((m, mean));
    }
    ok(tendonid(&["report", "--dir", p(d)]));
    let csv = std::fs::read_to_string(d.join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for ((m, mean), row) in printed.iter().zip(&rows) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], *m);
        let v: f64 = cols[1].parse().unwrap();
        assert!((v - mean).abs() <= 0.01, "{m}: {v} vs {mean}");
    }
}

#[test]
fn reconstruct_summary_matches_recompute() {
    let dir = short_run_dir();
    let d = dir.path();
    let model = d.join("m.json");
    ok(tendonid(&["identify", "--method", "n4sid", "--train", p(&d.join("train.csv")), "--out", p(&model)]));
    ok(tendonid(&["validate", "--model", p(&model), "--data", p(&d.join("val.csv")), "--out-prefix", p(&d.join("v"))]));
    let prefix = d.join("recon");
    ok(tendonid(&["reconstruct", "--sim", p(&d.join("v_sim.csv")), "--measured", p(&d.join("val.csv")), "--out-prefix", p(&prefix)]));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("recon_summary.json")).unwrap()).unwrap();
    let reported = summary["mean_euclidean_error_m"].as_f64().unwrap();
    let sim = load_csv(d.join("v_sim.csv")).unwrap();
    let val = load_csv(d.join("val.csv")).unwrap();
    let expected = end_effector_error(sim.y(), val.y(), &KinematicsConfig::default()).unwrap();
    assert!((reported - expected).abs() < 1e-12);
    let joints = std::fs::read_to_string(d.join("recon_joints.csv")).unwrap();
    assert_eq!(joints.lines().next().unwrap(), "t,q1,q2,q3,q4,q5,q6");
    assert_eq!(joints.lines().count(), sim.len() + 1);
}

#[test]
fn mpc_at_equilibrium_stays_put() {
    let dir = tempfile::tempdir().unwrap();
    let k = 0.004;
    let b = DMatrix::from_row_slice(2, 4, &[k, 0.0, -k, 0.0, 0.0, k, 0.0, -k]);
    let ss = StateSpaceModel::new(DMatrix::identity(2, 2) * 0.9, b, DMatrix::identity(2, 2), DMatrix::zeros(2, 4), 0.03)
        .unwrap();
    let model = dir.path().join("balanced.json");
    save_model(&ModelKind::StateSpace(ss), &model).unwrap();
    let log = dir.path().join("loop.csv");
    ok(tendonid(&["mpc", "--model", p(&model), "--reference", "equilibrium", "--duration", "1.5", "--out", p(&log)]));
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), LOG_HEADER);
    let ncols = LOG_HEADER.split(',').count();
    let mut rows = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), ncols);
        for c in &cols[3..5] {
            assert!(c.parse::<f64>().unwrap().abs() < 1e-6);
        }
        assert_eq!(cols[9], "optimal");
        rows += 1;
    }
    assert_eq!(rows, 50);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("loop.summary.json")).unwrap()).unwrap();
    assert!(summary["rms_error_rad"].as_f64().unwrap() < 1e-6);
    assert_eq!(summary["steps"].as_u64(), Some(50));
}

#[test]
fn mpc_refuses_arx_models() {
    let dir = short_run_dir();
    let d = dir.path();
    let model = d.join("arx.json");
    ok(tendonid(&["identify", "--method", "arx", "--train", p(&d.join("train.csv")), "--na", "2", "--nb", "2", "--out", p(&model)]));
    let o = tendonid(&["mpc", "--model", p(&model), "--out", p(&d.join("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config]:"));
}
