use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn momsq(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_momsq"))
        .args(args)
        .env("MOMSQ_OUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn exponents_report_lands_in_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = momsq(&["exponents", "--n-max", "8"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let env = read(&dir.path().join("exponents.json"));
    assert_eq!(env["tool"], "momsq");
    assert_eq!(env["pass"], true);
    assert_eq!(env["entries"][0]["value"]["table"]["p_tilde"][1], 4);
}

#[test]
fn ratio_scan_writes_one_row_per_scale_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("plot.svg");
    let o = momsq(
        &["ratio-scan", "--n", "2", "--p", "4", "--R-list", "16,64,256", "--seeds", "16", "--svg", svg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = std::fs::read_to_string(dir.path().join("ratio-scan.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,p,R,seed,numerator,denominator,ratio"));
    assert_eq!(lines.count(), 48);
    assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));
}

#[test]
fn malformed_scale_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = momsq(&["ratio-scan", "--R-list", "16,100"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = momsq(&["ratio-scan", "--R-list", "16,abc"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn slope_bounds_drive_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = momsq(&["ratio-scan", "--R-list", "16,64", "--seeds", "2", "--min-slope", "5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn replay_accepts_untouched_and_locates_edits() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("scan.json");
    let o = momsq(
        &["--out", report.to_str().unwrap(), "ratio-scan", "--R-list", "16,64", "--seeds", "8"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let o = momsq(&["replay", report.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let mut env = read(&report);
    let v = env["entries"][5]["value"]["ratio"].as_f64().unwrap();
    env["entries"][5]["value"]["ratio"] = (v * 1.01).into();
    let edited = dir.path().join("edited.json");
    std::fs::write(&edited, env.to_string()).unwrap();
    let o = momsq(&["replay", edited.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("entries[5]"), "{text}");
    assert!(text.contains("entries[5].value.ratio"), "{text}");

    let mut env = read(&report);
    env["config"]["p"] = 6.0.into();
    std::fs::write(&edited, env.to_string()).unwrap();
    let o = momsq(&["replay", edited.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("config hash mismatch"));
}

#[test]
fn replay_of_missing_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = momsq(&["replay", dir.path().join("absent.json").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read"));
}

#[test]
fn thread_count_does_not_change_entries() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for (path, t) in [(&a, "1"), (&b, "3")] {
        let o = momsq(
            &["--threads", t, "--out", path.to_str().unwrap(), "ratio-scan", "--R-list", "16,64", "--seeds", "6"],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(read(&a)["entries"], read(&b)["entries"]);
}

#[test]
fn certify_checks_run() {
    let dir = tempfile::tempdir().unwrap();
    for check in ["snmm", "s1bd", "fixed-point", "ingredients"] {
        let o = momsq(&["certify", check], dir.path());
        assert_eq!(o.status.code(), Some(0), "{check}: {}", stdout(&o));
    }
    let env = read(&dir.path().join("certify.json"));
    assert_eq!(env["config"]["check"], "ingredients");
}
