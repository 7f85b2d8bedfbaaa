use std::path::Path;
use std::process::{Command, Output};

fn orthornn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orthornn")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(
        &path,
        "task = copy\nT = 10\nn_hidden = 8\nnonlinearity = tanh\nmargin = 0.2\nepochs = 2\n\
         epoch_len = 3\nbatch_size = 4\nval_batches = 1\nwall_clock = false\n",
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn train_evaluate_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let text = stdout(&orthornn(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]));
    assert!(text.contains("epochs: 2"), "{text}");
    for name in ["metrics.csv", "spectrum.csv", "config.txt", "checkpoint.ckpt"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let ckpt = out.join("checkpoint.ckpt");
    let ckpt = ckpt.to_str().unwrap();

    let text = stdout(&orthornn(&["evaluate", "--checkpoint", ckpt]));
    let (metric, value) = text.trim().split_once(' ').unwrap();
    assert_eq!(metric, "accuracy");
    let value: f64 = value.parse().unwrap();
    assert!((0.0..=1.0).contains(&value));
    // the last validation entry of the run is the same number
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let last: f64 = csv.lines().last().unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(value, last);

    let text = stdout(&orthornn(&["diagnose", "--checkpoint", ckpt, "--spectrum", "--norm-bound"]));
    assert!(text.contains("spectrum: mean"), "{text}");
    assert!(text.contains("0 violations"), "{text}");
    let diag = dir.path().join("diag");
    stdout(&orthornn(&["diagnose", "--checkpoint", ckpt, "--grad-norms", "--out", diag.to_str().unwrap()]));
    let grid = std::fs::read_to_string(diag.join("grad_norms.csv")).unwrap();
    assert_eq!(grid.lines().count(), 2);
}

#[test]
fn resume_through_the_command_line_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (straight, split) = (dir.path().join("straight"), dir.path().join("split"));
    stdout(&orthornn(&["train", "--config", &cfg, "--out", straight.to_str().unwrap(), "--epochs", "4"]));
    stdout(&orthornn(&["train", "--config", &cfg, "--out", split.to_str().unwrap(), "--epochs", "2"]));
    let ckpt = split.join("checkpoint.ckpt");
    stdout(&orthornn(&[
        "train",
        "--config",
        &cfg,
        "--out",
        split.to_str().unwrap(),
        "--epochs",
        "4",
        "--resume",
        ckpt.to_str().unwrap(),
    ]));
    assert_eq!(
        std::fs::read(straight.join("metrics.csv")).unwrap(),
        std::fs::read(split.join("metrics.csv")).unwrap()
    );
}

#[test]
fn gen_data_writes_the_requested_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("copy.txt");
    stdout(&orthornn(&["gen-data", "--task", "copy", "--T", "12", "--count", "5", "--out", copy.to_str().unwrap()]));
    let text = std::fs::read_to_string(&copy).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        let (xs, ys) = row.split_once(" | ").unwrap();
        let xs: Vec<&str> = xs.split(' ').collect();
        let ys: Vec<&str> = ys.split(' ').collect();
        assert_eq!(xs.len(), 32);
        assert_eq!(ys.len(), 32);
        assert_eq!(&xs[..10], &ys[22..]);
    }

    let adding = dir.path().join("adding.txt");
    stdout(&orthornn(&["gen-data", "--task", "adding", "--T", "20", "--count", "3", "--out", adding.to_str().unwrap()]));
    let text = std::fs::read_to_string(&adding).unwrap();
    for row in text.lines().filter(|l| !l.starts_with('#')) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 23);
        let a: usize = fields[0].parse().unwrap();
        let b: usize = fields[1].parse().unwrap();
        let target: f64 = fields[2].parse().unwrap();
        let values: Vec<f64> = fields[3..].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(target, values[a] + values[b]);
    }
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "task = copy\nmargin = 2\n").unwrap();
    let out = orthornn(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("margin"));

    let out = orthornn(&["evaluate", "--checkpoint", dir.path().join("missing.ckpt").to_str().unwrap()]);
    assert!(!out.status.success());
}
