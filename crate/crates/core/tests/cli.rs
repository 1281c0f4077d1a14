use std::path::Path;
use std::process::{Command, Output};

fn lawn_ma(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lawn-ma"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

#[test]
fn missing_config_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let r = lawn_ma(&["run", "--config", "/nonexistent/scenario.json"], &out);
    assert!(!r.status.success());
    assert!(!out.exists());
    assert!(!r.stderr.is_empty());
}

#[test]
fn invalid_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"num_slots": 0, "p_max": -1.0}"#).unwrap();
    let r = Command::new(env!("CARGO_BIN_EXE_lawn-ma"))
        .args(["validate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!r.status.success());
    let msg = String::from_utf8_lossy(&r.stderr);
    assert!(msg.contains("num_slots") && msg.contains("p_max"), "{msg}");
}

#[test]
fn same_seed_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let r = lawn_ma(&["run", "--seed", "3", "--schemes", "fpa"], dir);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for name in ["convergence.csv", "trajectory.csv", "rates.csv", "final_state.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs");
    }
    let conv = std::fs::read_to_string(a.join("convergence.csv")).unwrap();
    assert!(conv.starts_with("outer_iter,scheme,sum_rate_bpshz"));
    assert!(conv.lines().skip(1).all(|l| l.contains(",fpa,")));
}

#[test]
fn empty_sweep_values_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let r = lawn_ma(&["sweep", "--param", "p_max", "--values", ",", "--schemes", "fpa"], &out);
    assert!(!r.status.success());
    assert!(!out.exists());
}

#[test]
fn unknown_scheme_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let r = lawn_ma(&["run", "--schemes", "proposed,nope"], &out);
    assert!(!r.status.success());
    assert!(!out.exists());
}

#[test]
fn unreachable_endpoint_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("corner.json");
    std::fs::write(&cfg, r#"{"start": [0, 0], "end": [800, 800], "num_slots": 10}"#).unwrap();
    let out = tmp.path().join("out");
    let r = lawn_ma(&["run", "--config", cfg.to_str().unwrap()], &out);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("endpoint unreachable"));
    assert!(!out.exists());
}
