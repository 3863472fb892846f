use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
seed = 4
horizon = 25
truth_x0 = [0.8]
[system]
id = "scalar_linear"
[region]
lower = [-1.0]
upper = [1.0]
samples = 32
[observer]
kind = "ipg"
d = 2
w_offset = [0.05]
alpha = { kind = "constant", value = 0.5 }
k_init = { kind = "scaled_identity", scale = 0.8 }
"#;

fn ipg(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ipg")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_artifacts_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("run");
    let (code, stdout) = ipg(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    for f in ["trace.csv", "result.json", "constants.json", "conditions.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn format_flag_limits_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("csv_only");
    let (code, _) = ipg(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code, 0);
    assert!(out.join("trace.csv").is_file());
    assert!(!out.join("result.json").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("scalar_linear", "no_such_system"));
    assert_eq!(ipg(&["run", "--config", &cfg]).0, 2);
    let cfg = write_config(dir.path(), &format!("{CONFIG}\nunexpected = true\n"));
    assert_eq!(ipg(&["audit", "--config", &cfg]).0, 2);
    assert_eq!(ipg(&["run", "--config", "/nonexistent/exp.toml"]).0, 2);
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
horizon = 100
truth_x0 = [0.6, -0.4]
[system]
id = "indefinite_jacobian"
[region]
lower = [-1.0, -1.0]
upper = [1.0, 1.0]
samples = 16
[observer]
kind = "ipg"
d = 1
w_offset = [0.1, -0.1]
alpha = { kind = "constant", value = 0.5 }
"#;
    let cfg = write_config(dir.path(), text);
    let out = dir.path().join("div");
    assert_eq!(ipg(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 3);
    assert!(out.join("trace.csv").is_file(), "partial trace is kept");
}

#[test]
fn verdict_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // α above 2/Λ makes the preconditioner recursion expand
    let cfg = write_config(dir.path(), &CONFIG.replace("value = 0.5", "value = 2.5").replace("horizon = 25", "horizon = 4"));
    let out = dir.path().join("bad");
    assert_eq!(ipg(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 1);
}

#[test]
fn seed_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert_eq!(ipg(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"]).0, 0);
    }
    for f in ["trace.csv", "result.json", "constants.json", "conditions.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn simulate_audit_sweep_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{CONFIG}\n[sweep]\n\"observer.d\" = [1, 2]\n\"system.params.a\" = [0.3, 0.6]\n"));
    let sim = dir.path().join("sim");
    assert_eq!(ipg(&["simulate", "--config", &cfg, "--out", sim.to_str().unwrap()]).0, 0);
    let truth = std::fs::read_to_string(sim.join("truth.csv")).unwrap();
    assert!(truth.starts_with("k,x1,y1\n1,"));
    assert_eq!(truth.lines().count(), 26);

    let aud = dir.path().join("audit");
    let (code, stdout) = ipg(&["audit", "--config", &cfg, "--out", aud.to_str().unwrap()]);
    assert!(code == 0 || code == 1, "{code}");
    assert!(stdout.contains("Lambda="));
    assert!(aud.join("conditions.json").is_file());

    let sw = dir.path().join("sweep");
    let (code, _) = ipg(&["sweep", "--config", &cfg, "--out", sw.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(sw.join("sweep.json").is_file());
    for i in 0..4 {
        assert!(sw.join(format!("run_{i:03}")).join("result.json").is_file());
    }

    let (code, stdout) = ipg(&["report", "--out", sw.to_str().unwrap()]);
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["runs"], 4);
    assert_eq!(report["rows"][0]["run"], "run_000");
}
