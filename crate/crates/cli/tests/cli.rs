use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "cli-small"
seed = 5

[target]
kind = "gmm"
rho = 0.5
mu = [0.5, 0.5]
sigma = [[1.0, 0.0], [0.0, 1.0]]

[functional]
kind = "coordinate"
index = 0

[sampler]
kind = "mala"
gamma = 0.5

[protocol]
n_burn = 100
n_train = 2000
n_test = 1000
n_test_chains = 3
bn_train = 20
acf_max_lag = 5

[control_variate]
family = "second_order"
methods = ["esvm", "evm"]
"#;

fn esvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esvm"))
        .args(args)
        .env_remove("ESVM_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn run_writes_all_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = esvm(&["run", "--config", &config, "--out", &s(&out), "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "vrf.csv", "boxplot.csv", "acf.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let vrf = fs::read_to_string(out.join("vrf.csv")).unwrap();
    assert_eq!(vrf.lines().count(), 1 + 3 * 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ESVM"));
}

#[test]
fn fit_then_evaluate_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let staged = dir.path().join("staged");
    let full = dir.path().join("full");
    assert!(esvm(&["fit", "--config", &config, "--out", &s(&staged)]).status.success());
    assert!(staged.join("fit.json").exists());
    assert!(esvm(&["evaluate", "--config", &config, "--out", &s(&staged)]).status.success());
    assert!(esvm(&["run", "--config", &config, "--out", &s(&full)]).status.success());
    assert_eq!(
        fs::read(staged.join("vrf.csv")).unwrap(),
        fs::read(full.join("vrf.csv")).unwrap()
    );
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(esvm(&["run", "--config", &config, "--out", &s(&a)]).status.success());
    assert!(esvm(&["run", "--config", &config, "--out", &s(&b), "--seed", "6"]).status.success());
    assert_ne!(fs::read(a.join("vrf.csv")).unwrap(), fs::read(b.join("vrf.csv")).unwrap());
}

#[test]
fn sample_acf_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = s(&dir.path().join("o"));
    let o = esvm(&["sample", "--config", &config, "--out", &out, "--chain", "2", "--csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("o/chain_2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1000);
    assert!(dir.path().join("o/chain_2.bin.json").exists());

    assert!(esvm(&["acf", "--config", &config, "--out", &out, "--max-lag", "10"]).status.success());
    let acf = fs::read_to_string(dir.path().join("o/acf.csv")).unwrap();
    assert_eq!(acf.lines().count(), 1 + 11);

    assert!(esvm(&["sweep-bn", "--config", &config, "--out", &out, "--bn", "1,10,100"]).status.success());
    let sweep = fs::read_to_string(dir.path().join("o/sweep_bn.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 3);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &SMALL.replace("bn_train = 20", "bn_train = 5000"));
    let o = esvm(&["run", "--config", &bad, "--out", &s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bn_train"));

    let o = esvm(&["run", "--config", &s(&dir.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numeric_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("kind = \"mala\"", "kind = \"ula\"")
        .replace("gamma = 0.5", "gamma = 50.0");
    let config = write_config(dir.path(), &text);
    let o = esvm(&["run", "--config", &config, "--out", &s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train"));
}
