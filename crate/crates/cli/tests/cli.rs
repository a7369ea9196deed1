use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ellipshrink"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn data_rows(stdout: &[u8]) -> Vec<Vec<String>> {
    let text = String::from_utf8(stdout.to_vec()).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const MINIMAL: &str = "p = 5\nN = 20\nestimators = mean\nreps = 10000\nseed = 17\n";

#[test]
fn risk_minimal_gaussian_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "min.cfg", MINIMAL);
    let out = run(&["risk", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&out.stdout);
    assert_eq!(rows.len(), 1);
    let risk: f64 = rows[0][8].parse().unwrap();
    let se: f64 = rows[0][9].parse().unwrap();
    assert!((risk - 5.0).abs() <= 3.0 * se, "risk {risk} se {se}");
}

#[test]
fn risk_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cmp.cfg",
        "p = 4\nN = 9\nestimators = mean, js+\ntheta = ray:e1:0,2\nmixing = t:6\nreps = 2000\nseed = 5\ncompare = true\n",
    );
    let a = run(&["risk", &cfg, "--threads", "1"]);
    let b = run(&["risk", &cfg, "--threads", "4"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(data_rows(&a.stdout).len(), 2 * 2 + 2);
}

#[test]
fn risk_writes_out_file_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "min.cfg", MINIMAL);
    let csv_path = dir.path().join("out.csv");
    let out = run(&["risk", &cfg, "--reps", "500", "--out", csv_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let rows = data_rows(&std::fs::read(&csv_path).unwrap());
    assert_eq!(rows[0][6], "500");
}

#[test]
fn risk_signed_mixing_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "signed.cfg",
        "p = 5\nN = 20\nestimators = mean, baranchik:at,c=1\nmixing = atoms:1=1.3,2=-0.3\nreps = 1000\n",
    );
    let out = run(&["risk", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
    assert!(text.contains(",\"baranchik:at,c=1\",5,20,"), "{text}");
}

#[test]
fn risk_config_errors_exit_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "p = 5\nN = 20\nestimators = mean\nreps = ten\n");
    let out = run(&["risk", &cfg]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4") && err.contains("reps"), "{err}");
    assert_eq!(code(&run(&["risk", "/nonexistent/config"])), 2);
}

#[test]
fn check_exit_codes() {
    assert_eq!(code(&run(&["check", "--fn", "baranchik:at,c=1", "--p", "5", "--N", "20"])), 0);
    assert_eq!(code(&run(&["check", "--fn", "baranchik:const,k=3", "--p", "5", "--N", "20"])), 1);
    assert_eq!(code(&run(&["check", "--fn", "baranchik:at", "--p", "5", "--N", "20"])), 2);
    let csv = run(&["check", "--fn", "baranchik:at,c=1", "--p", "5", "--N", "20", "--csv"]);
    assert!(String::from_utf8_lossy(&csv.stdout).starts_with("condition,verdict,witness_x,witness_value,detail"));
}

#[test]
fn identity_exit_codes() {
    let constant = run(&["identity", "--fn", "baranchik:const,k=3"]);
    assert_eq!(code(&constant), 0, "{}", String::from_utf8_lossy(&constant.stdout));
    let perturbed = run(&["identity", "--fn", "baranchik:const,k=3", "--perturb", "1.05"]);
    assert_eq!(code(&perturbed), 1);
    assert_eq!(code(&run(&["identity", "--p", "5", "--n", "4"])), 2);
}

#[test]
fn posterior_prints_log_density() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    std::fs::write(&data, "1,0\n0,1\n1,1\n2,0.5\n").unwrap();
    let out = run(&["posterior", "--data", data.to_str().unwrap(), "--at", "1,0.625", "--at", "-1,2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x1,x2,log_density");
    let at_mean: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    let away: f64 = lines[2].rsplit(',').next().unwrap().parse().unwrap();
    assert!(at_mean > away);
    assert_eq!(code(&run(&["posterior", "--data", data.to_str().unwrap(), "--at", "1,2,3"])), 2);
}
