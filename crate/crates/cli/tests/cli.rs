use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn blgi(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blgi"))
        .args(args)
        .current_dir(dir)
        .env_remove("BLGI_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Parses a one-row CSV into (header, fields).
fn single_row(text: &str) -> Vec<(String, String)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from);
    let row = lines.next().unwrap().split(',').map(String::from);
    header.zip(row).collect()
}

fn field(row: &[(String, String)], name: &str) -> String {
    row.iter().find(|(k, _)| k == name).unwrap().1.clone()
}

#[test]
fn simulate_projective_limit() {
    let dir = tempfile::tempdir().unwrap();
    let o = blgi(&["simulate", "--meter", "ancilla", "--v-total", "1", "--shots", "200000"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let row = single_row(&stdout(&o));
    let mean: f64 = field(&row, "mean").parse().unwrap();
    let se: f64 = field(&row, "stderr").parse().unwrap();
    assert!((mean - 0.5f64.sqrt()).abs() < 4.0 * se, "{mean} {se}");
    assert_eq!(field(&row, "violation"), "false");
    let exact: f64 = field(&row, "exact").parse().unwrap();
    assert!((exact - 0.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn simulate_reports_violation_for_weak_meters() {
    let dir = tempfile::tempdir().unwrap();
    let o = blgi(&["simulate", "--meter", "ancilla", "--v-total", "0.3", "--shots", "400000"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let row = single_row(&stdout(&o));
    assert_eq!(field(&row, "violation"), "true");
}

#[test]
fn noisy_configuration_warns() {
    let dir = tempfile::tempdir().unwrap();
    let o = blgi(&["simulate", "--sigma", "10", "--shots", "1000"], dir.path());
    assert!(o.status.success());
    assert!(stderr(&o).contains("predicted stderr"), "{}", stderr(&o));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.ini");
    fs::write(&cfg, "[meter]\ntype = ancilla\nv_total = 0.6\n[run]\nshots = 3000\nseed = 5\n").unwrap();
    let base = blgi(&["--config", "exp.ini", "simulate"], dir.path());
    assert!(base.status.success(), "{}", stderr(&base));
    let again = blgi(&["--config", "exp.ini", "--seed", "5", "simulate"], dir.path());
    assert_eq!(stdout(&base), stdout(&again));
    let other = blgi(&["--config", "exp.ini", "--seed", "6", "simulate"], dir.path());
    assert_ne!(stdout(&base), stdout(&other));
    let env = Command::new(env!("CARGO_BIN_EXE_blgi"))
        .args(["--config", "exp.ini", "simulate"])
        .current_dir(dir.path())
        .env("BLGI_SEED", "6")
        .output()
        .unwrap();
    assert_eq!(stdout(&env), stdout(&other));
    let flag_wins = Command::new(env!("CARGO_BIN_EXE_blgi"))
        .args(["--config", "exp.ini", "--seed", "5", "simulate"])
        .current_dir(dir.path())
        .env("BLGI_SEED", "6")
        .output()
        .unwrap();
    assert_eq!(stdout(&flag_wins), stdout(&base));
}

#[test]
fn config_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = blgi(&["--config", "missing.ini", "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.ini"), "{}", stderr(&o));

    fs::write(dir.path().join("bad.ini"), "[meter]\nsigma = 1\neta = lots\n").unwrap();
    let o = blgi(&["--config", "bad.ini", "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.ini:3:7"), "{}", stderr(&o));

    let o = blgi(&["simulate", "--sigma", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigma"), "{}", stderr(&o));

    let o = blgi(&["simulate", "--meter", "ancilla", "--v-total", "0.9", "--u", "0.8"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = blgi(&["sweep", "--axis", "gamma", "--values", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = blgi(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_code_three() {
    // readout angle as large as f64 allows still validates, but a huge sigma
    // alone cannot break quadrature; use a tiny one instead
    let dir = tempfile::tempdir().unwrap();
    let o = blgi(&["simulate", "--sigma", "1e-300", "--shots", "10"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn sweep_csv_layout_and_thread_independence() {
    let dir = tempfile::tempdir().unwrap();
    let args = |threads: &'static str, out: &'static str| {
        vec![
            "--threads",
            threads,
            "--out",
            out,
            "sweep",
            "--axis",
            "sigma",
            "--logspace",
            "0.25,10,6",
            "--shots",
            "20000",
        ]
    };
    let a = blgi(&args("1", "a.csv"), dir.path());
    assert!(a.status.success(), "{}", stderr(&a));
    let b = blgi(&args("4", "b.csv"), dir.path());
    assert!(b.status.success());
    let ta = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let tb = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(ta, tb);
    let lines: Vec<&str> = ta.lines().collect();
    assert!(lines[0].starts_with("# axis=sigma,lmr_bound=2"));
    assert_eq!(lines[1], "value,mc_mean,mc_stderr,exact,analytic");
    assert_eq!(lines.len(), 8);
    let analytic: Vec<f64> = lines[2..].iter().map(|l| l.split(',').nth(4).unwrap().parse().unwrap()).collect();
    assert!(analytic.windows(2).all(|w| w[1] > w[0]));
    assert!(ta.ends_with('\n') && !ta.contains('\r'));
}

#[test]
fn sweep_ignores_default_of_swept_parameter() {
    // the default v_total = 1 would be invalid with u = 0.8
    let dir = tempfile::tempdir().unwrap();
    let o = blgi(
        &["sweep", "--meter", "ancilla", "--u", "0.8", "--axis", "v_total", "--values", "0.2,0.8", "--shots", "2000"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 4);
    let o = blgi(&["sweep", "--meter", "ancilla", "--axis", "sigma", "--values", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn manifest_replay_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let o = blgi(
        &["--out", "run.csv", "--seed", "17", "simulate", "--sigma", "1.7", "--eta", "0.6", "--shots", "30000"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = dir.path().join("run.csv.manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("\"seed\": 17") && text.contains("\"sigma\": 1.7"), "{text}");
    let r = blgi(&["--manifest", "run.csv.manifest.json", "--out", "replay.csv", "--threads", "2"], dir.path());
    assert!(r.status.success(), "{}", stderr(&r));
    assert_eq!(fs::read(dir.path().join("run.csv")).unwrap(), fs::read(dir.path().join("replay.csv")).unwrap());
    let bad = blgi(&["--manifest", "run.csv.manifest.json", "verify"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn records_file_matches_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = blgi(
        &["simulate", "--meter", "ancilla", "--v-total", "0.5", "--shots", "5000", "--records", "rec.csv"],
        dir.path(),
    );
    assert!(o.status.success());
    let row = single_row(&stdout(&o));
    let mean: f64 = field(&row, "mean").parse().unwrap();
    let rec = fs::read_to_string(dir.path().join("rec.csv")).unwrap();
    let mut lines = rec.lines();
    assert_eq!(lines.next(), Some("alpha1,alpha2,b1,b2,c"));
    let cs: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(cs.len(), 5000);
    let avg = cs.iter().sum::<f64>() / cs.len() as f64;
    assert!((avg - mean).abs() < 1e-9);
}

#[test]
fn lhv_brute_force_and_random() {
    let dir = tempfile::tempdir().unwrap();
    let o = blgi(&["lhv", "--brute-force", "--hidden-states", "2"], dir.path());
    assert!(o.status.success());
    let row = single_row(&stdout(&o));
    assert_eq!(field(&row, "max").parse::<f64>().unwrap(), 2.0);
    assert_eq!(field(&row, "min").parse::<f64>().unwrap(), -2.0);

    let o = blgi(&["lhv", "--brute-force", "--hidden-states", "9"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = blgi(&["lhv", "--random", "50", "--shots", "20000"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 51);
    assert!(text.lines().skip(1).all(|l| l.contains(",true,true,")));
}

#[test]
fn lhv_strategy_files() {
    let dir = tempfile::tempdir().unwrap();
    let good = "[strategy]\nprep_dist = 0.5, 0.5\na1 = 1, -1\na2 = 1, -1\nb1 = 1, -1\nb2 = 1, -1\nnoise = gaussian\nsigma = 1\n";
    fs::write(dir.path().join("good.ini"), good).unwrap();
    let o = blgi(&["lhv", "--strategy", "good.ini", "--shots", "50000"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let row = single_row(&stdout(&o));
    assert_eq!(field(&row, "within_bound"), "true");
    assert_eq!(field(&row, "brute_force_max").parse::<f64>().unwrap(), 2.0);

    fs::write(dir.path().join("bad.ini"), good.replace("0.5, 0.5", "0.5, 0.4")).unwrap();
    let o = blgi(&["lhv", "--strategy", "bad.ini"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("prep_dist sums to 0.9"), "{}", stderr(&o));

    fs::write(dir.path().join("biased.ini"), format!("{good}bias2 = 0.3, 0\n")).unwrap();
    let o = blgi(&["lhv", "--strategy", "biased.ini"], dir.path());
    assert!(o.status.success());
    assert_eq!(field(&single_row(&stdout(&o)), "calibrated"), "false");
    assert!(stderr(&o).contains("detector a2"), "{}", stderr(&o));
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = blgi(&["verify"], dir.path());
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("check,value,tolerance,pass\n"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));
}
