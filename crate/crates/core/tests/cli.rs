use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sparseids(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparseids"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sparseids(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn metric(dir: &Path, name: &str) -> f64 {
    let text = fs::read_to_string(dir.join("metrics.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{name}=")))
        .unwrap()
        .parse()
        .unwrap()
}

fn small_model(dir: &Path, extra: &[&str]) {
    ok(dir, &["synth", "--flows", "300", "--out", "data.csv"]);
    let mut args = vec![
        "train", "--data", "data.csv", "--epochs", "1", "--hidden", "5", "--layers", "1", "--out", "m.spid",
    ];
    args.extend(extra);
    ok(dir, &args);
}

#[test]
fn pipeline_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_model(d, &[]);
    assert!(d.join("train_log.csv").exists());

    let report = ok(d, &["eval", "--data", "data.csv", "--model", "m.spid", "--by-attack"]);
    assert!(report.contains("accuracy"));
    assert!(d.join("eval/histogram_All.csv").exists());
    assert!(d.join("eval/histogram_SignalAttack.csv").exists());

    let inspect = ok(d, &["inspect", "--model", "m.spid"]);
    assert!(inspect.contains("topology shared"));
    assert!(inspect.contains("hidden 5 x 1 layers"));
}

#[test]
fn every_ith_at_full_rate_consumes_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_model(d, &[]);
    ok(
        d,
        &[
            "eval", "--data", "data.csv", "--model", "m.spid", "--policy", "every-ith", "--rate", "1.0",
        ],
    );
    assert_eq!(metric(&d.join("eval"), "sparsity"), 0.0);
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--flows", "200", "--out", "data.csv"]);
    fs::write(
        d.join("run.conf"),
        "# small run\nseed = 4\nepochs = 1\nhidden = 7\nlayers = 1\ntopology = separate\n",
    )
    .unwrap();
    ok(
        d,
        &[
            "--config", "run.conf", "train", "--data", "data.csv", "--hidden", "3", "--out", "m.spid",
        ],
    );
    let inspect = ok(d, &["inspect", "--model", "m.spid"]);
    assert!(inspect.contains("topology separate"), "{inspect}");
    assert!(inspect.contains("hidden 3 x 1 layers"), "{inspect}");
    assert!(inspect.contains("seed = 4"), "{inspect}");
}

#[test]
fn config_file_rejects_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.conf"), "epochz = 3\n").unwrap();
    let out = sparseids(d, &["--config", "bad.conf", "synth"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_name_the_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // missing input file
    let out = sparseids(d, &["inspect", "--model", "absent.spid"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io]"));

    // not a checkpoint
    fs::write(d.join("junk.spid"), "hello").unwrap();
    let out = sparseids(d, &["inspect", "--model", "junk.spid"]);
    assert_eq!(out.status.code(), Some(5));

    // malformed data
    fs::write(d.join("bad.csv"), "flow_id,nonsense\n1,2\n").unwrap();
    let out = sparseids(d, &["train", "--data", "bad.csv", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    // bad arguments
    assert_eq!(sparseids(d, &["train"]).status.code(), Some(2));
    assert_eq!(sparseids(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(sparseids(d, &["synth", "--flows", "0"]).status.code(), Some(2));
}

#[test]
fn baseline_rate_is_required() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_model(d, &[]);
    let out = sparseids(d, &["eval", "--data", "data.csv", "--model", "m.spid", "--policy", "random"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sparseids(d, &["eval", "--data", "data.csv", "--model", "m.spid", "--tradeoff", "0.3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn steering_needs_a_tradeoff_model() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_model(d, &[]);
    let out = sparseids(d, &["steer", "--data", "data.csv", "--model", "m.spid", "--target", "0.5"]);
    assert_ne!(out.status.code(), Some(0));

    ok(
        d,
        &[
            "train", "--data", "data.csv", "--epochs", "1", "--hidden", "5", "--layers", "1", "--alpha", "uniform",
            "--out", "u.spid",
        ],
    );
    let msg = ok(
        d,
        &[
            "steer", "--data", "data.csv", "--model", "u.spid", "--target", "0.05", "--window", "10",
        ],
    );
    assert!(msg.contains("windows"));
    let csv = fs::read_to_string(d.join("steering.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
}

#[test]
fn help_shows_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let help = ok(tmp.path(), &["train", "--help"]);
    for needle in ["--max-len", "[default: 20]", "--topology", "[default: shared]"] {
        assert!(help.contains(needle), "missing {needle}");
    }
}
