use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fairci(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairci"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn fairci")
}

/// Header and data rows of a CSV written by the tool, after its `#` line.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let meta = lines.next().unwrap();
    assert!(meta.starts_with("# {"), "{meta}");
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string()
}

const QUICK_DI: &[&str] = &["--preset", "synthetic-di", "--n-data", "5000", "--step-c", "1", "--iters", "500"];

#[test]
fn gen_data_shape_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairci(&["gen-data", "--data", "synthetic-di", "--n", "1000", "--seed", "7"], dir.path());
    assert!(out.status.success());
    let (header, rows) = table(&dir.path().join("data.csv"));
    assert_eq!(header.len(), 4);
    assert_eq!(&header[2..], ["z", "y"]);
    assert_eq!(rows.len(), 1000);
    let meta = json(&dir.path().join("metadata.json"));
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["generator"]["name"], "synthetic-di");

    // the written file feeds back into the pipeline
    let data = dir.path().join("data.csv").display().to_string();
    let run = dir.path().join("run");
    let out = fairci(&["train", "--mode", "di", "--epsilon", "0.01", "--data", &data, "--iters", "200"], &run);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_data_rejects_zero_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairci(&["gen-data", "--n", "0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_single_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train"];
    args.extend(QUICK_DI);
    args.extend(["--checkpoints", "500"]);
    assert!(fairci(&args, dir.path()).status.success());
    let (header, rows) = table(&dir.path().join("trajectory.csv"));
    assert_eq!(header, ["k", "theta_bar_0", "theta_bar_1", "theta_bar_2", "phi"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "500");
    let fin = json(&dir.path().join("final.json"));
    assert_eq!(fin["k"], 500);
    assert_eq!(fin["config"]["iters"], 500);
    assert_eq!(fin["seed"], 0);
}

#[test]
fn missing_epsilon_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairci(&["train", "--mode", "di"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));
    for bad in [["--step-a", "0.4"], ["--alpha", "1.5"], ["--n-heldout", "-1"]] {
        let mut args = vec!["train"];
        args.extend(QUICK_DI);
        args.extend(bad);
        let out = fairci(&args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{bad:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(&bad[0][2..]), "{bad:?}");
    }
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairci(&["train", "--mode", "di", "--epsilon", "0.1", "--data", "/nonexistent/data.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    // a schema naming a column the file lacks
    let schema = dir.path().join("bad.schema");
    std::fs::write(&schema, "label=nope\nsensitive=sex\npositive_label=>50K\n").unwrap();
    let out = fairci(
        &["train", "--preset", "adult", "--data", &fixture("adult_like.csv"), "--schema", &schema.display().to_string()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn degenerate_bootstrap_collapses_interval() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["bootstrap"];
    args.extend(QUICK_DI);
    args.extend(["--b", "2", "--multiplier", "degenerate", "--checkpoints", "100,250,500"]);
    assert!(fairci(&args, dir.path()).status.success());
    let (header, rows) = table(&dir.path().join("bootstrap.csv"));
    assert_eq!(header, ["k", "base", "lower", "upper"]);
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r[1], r[2]);
        assert_eq!(r[1], r[3]);
    }
    let (_, reps) = table(&dir.path().join("replicate_params.csv"));
    assert_eq!(reps.len(), 2);
    assert_eq!(reps[0][1..], reps[1][1..]);
}

#[test]
fn experiment_single_repetition() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["experiment"];
    args.extend(QUICK_DI);
    args.extend(["--reps", "1", "--b", "10", "--checkpoints", "100,500"]);
    let out = fairci(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, w2) = table(&dir.path().join("w2.csv"));
    assert_eq!(w2.len(), 2);
    assert!(w2.iter().all(|r| r[1].parse::<f64>().unwrap().is_finite()));
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["reps"], 1);
    assert!(s["phi_q025"].as_f64().unwrap() <= s["phi_q975"].as_f64().unwrap());
    for f in ["phi_samples.csv", "theory_phi.csv", "ci_band.csv", "trajectories.csv", "mis.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn asymptotics_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairci(&["asymptotics", "--preset", "synthetic-di", "--n-data", "20000", "--epsilon", "inf"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["config"]["epsilon"], "inf");
    assert_eq!(r["active"], false);
    let p = r["projector"].as_array().unwrap();
    for (i, row) in p.iter().enumerate() {
        for (j, v) in row.as_array().unwrap().iter().enumerate() {
            assert_eq!(v.as_f64().unwrap(), if i == j { 1.0 } else { 0.0 });
        }
    }

    let out = fairci(&["asymptotics", "--preset", "synthetic-di", "--n-data", "20000"], dir.path());
    assert!(out.status.success());
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["active"], true);
    assert!(r["sigma_xtilde_norm"].as_f64().unwrap() <= 1e-8);
    assert!(r["form_gap"].as_f64().unwrap() >= 0.0);
    assert_eq!(r["sigma_star_eigenvalues"].as_array().unwrap().len(), 3);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# quick run\npreset=synthetic-di\niters=300\nstep-c=1\nn-data=5000\ncheckpoints=300\n").unwrap();
    let cfg = cfg.display().to_string();
    let out = fairci(&["train", "--config", &cfg, "--iters", "200", "--checkpoints", "200"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fin = json(&dir.path().join("final.json"));
    assert_eq!(fin["config"]["iters"], 200);
    assert_eq!(fin["config"]["n_data"], 5000);
    assert_eq!(fin["config"]["epsilon"], 0.002);
}
