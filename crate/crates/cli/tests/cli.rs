use std::path::Path;
use std::process::{Command, Output};

fn ddbar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddbar")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TORUS_FLOW: &str = r#"
experiment = "flow"
[geometry]
kind = "torus1"
grid = [32]
[solver.flow]
t_end = 0.2
"#;

#[test]
fn valid_preset_is_ok() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "a.toml", TORUS_FLOW);
    let o = ddbar(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok"));
}

#[test]
fn bad_configs_exit_with_three() {
    let d = tempfile::tempdir().unwrap();
    let cases = [
        ("negative grid", TORUS_FLOW.replace("[32]", "[-32]"), "grid"),
        ("odd grid", TORUS_FLOW.replace("[32]", "[33]"), "even"),
        ("tiny grid", TORUS_FLOW.replace("[32]", "[4]"), "minimum"),
        ("unknown key", format!("{TORUS_FLOW}\n[output]\nformat = \"xml\"\n"), "format"),
        ("bad dt", TORUS_FLOW.replace("t_end = 0.2", "t_end = 0.2\ndt_min = -1.0"), "positive"),
    ];
    for (what, text, needle) in cases {
        let cfg = write(d.path(), "bad.toml", &text);
        for cmd in ["validate", "run"] {
            let out = d.path().join("out");
            let o = ddbar(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()][..if cmd == "run" { 5 } else { 3 }]);
            assert_eq!(o.status.code(), Some(3), "{what} ({cmd}): {}", stderr(&o));
            assert!(stderr(&o).contains(needle), "{what}: {}", stderr(&o));
        }
    }
}

#[test]
fn unknown_kind_lists_the_allowed_kinds() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "k.toml", &TORUS_FLOW.replace("\"torus1\"", "\"klein\""));
    let o = ddbar(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    let e = stderr(&o);
    for k in ["torus1", "torus2", "hopf", "blowup-calabi"] {
        assert!(e.contains(k), "{e}");
    }
}

#[test]
fn missing_density_is_named() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "m.toml", "experiment = \"solve-ma\"\n[geometry]\nkind = \"torus1\"\ngrid = [64]\n");
    let o = ddbar(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("data.f"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = ddbar(&["validate", "--config", "/nonexistent/ddbar.toml"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn flat_torus_run_writes_manifest_and_zero_curvature() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "f.toml", TORUS_FLOW);
    let out = d.path().join("run");
    let o = ddbar(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    for f in manifest["outputs"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists(), "{f}");
    }
    let status: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("status.json")).unwrap()).unwrap();
    assert_eq!(status["status"], "ok");

    let mut r = csv::Reader::from_path(out.join("trajectory.csv")).unwrap();
    let col = r.headers().unwrap().iter().position(|h| h == "sup_abs_r").unwrap();
    let mut rows = 0;
    for rec in r.records() {
        let v: f64 = rec.unwrap()[col].parse().unwrap();
        assert!(v.abs() < 1e-10);
        rows += 1;
    }
    assert!(rows > 1);
}

#[test]
fn failing_solver_exits_with_two() {
    let d = tempfile::tempdir().unwrap();
    let text = "experiment = \"solve-ma\"\n[geometry]\nkind = \"torus1\"\ngrid = [64]\n\
                [data.f]\npreset = \"fourier\"\nexponential = true\nmodes = [{ k = 1, cos = 2.0 }]\n\
                [solver.ma]\nmax_iter = 1\n";
    let cfg = write(d.path(), "s.toml", text);
    let out = d.path().join("run");
    let o = ddbar(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(out.join("manifest.json").exists());
    let status = std::fs::read_to_string(out.join("status.json")).unwrap();
    assert!(!status.contains("\"ok\""));
}

#[test]
fn sweep_runs_every_value() {
    let d = tempfile::tempdir().unwrap();
    let text = format!("{TORUS_FLOW}\n[sweep]\nparameter = \"geometry.grid\"\nvalues = [[16], [32], [64]]\n");
    let cfg = write(d.path(), "s.toml", &text);
    let out = d.path().join("sweep");
    let o = ddbar(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    for i in 0..3 {
        assert!(out.join(format!("run-{i}/trajectory.csv")).exists());
    }

    let bad = format!("{TORUS_FLOW}\n[sweep]\nparameter = \"geometry.grid\"\nvalues = [[16], [15]]\n");
    let cfg = write(d.path(), "b.toml", &bad);
    let o = ddbar(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
