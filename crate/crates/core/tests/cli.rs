use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn clonalnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clonalnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--dataset",
    "synthetic",
    "--n-pairs",
    "2",
    "--per-class",
    "40",
    "--dim",
    "4",
    "--hidden",
    "8",
    "--epochs",
    "2",
    "--batch-size",
    "16",
];

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(TINY.iter().copied()).collect()
}

#[test]
fn clonal_without_baseline_is_a_usage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = clonalnet(&with_tiny(&["train-clonal", "--out", "c"]), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: missing-baseline:"), "{}", stderr(&o));
    assert!(!dir.path().join("c/model.ckpt").exists());
}

#[test]
fn kd_without_teacher_is_a_usage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = clonalnet(&with_tiny(&["train-kd", "--out", "k"]), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing-baseline"));
}

#[test]
fn bad_flags_and_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = clonalnet(&["train-baseline", "--no-such-flag"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: usage:"));

    let o = clonalnet(&with_tiny(&["train-baseline", "--lr", "-1"]), dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = clonalnet(&with_tiny(&["train-baseline", "--detach-d", "maybe"]), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: config:"));
}

#[test]
fn missing_mnist_files_are_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = clonalnet(&["train-baseline", "--mnist-dir", "nowhere", "--epochs", "1"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn gradcheck_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = clonalnet(
        &["gradcheck", "--loss", "focusing_picking", "--seed", "7", "--out", "g"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("g/gradcheck.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("loss_kind,max_rel_error,n_checked,step,seed"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "focusing_picking");
    assert!(row[1].parse::<f64>().unwrap() < 1e-6);
    assert_eq!(row[4], "7");

    let o = clonalnet(&["gradcheck", "--loss", "focal"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn baseline_run_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = clonalnet(&with_tiny(&["train-baseline", "--seed", "4", "--out", out]), dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for file in ["model.ckpt", "metrics.csv", "config.txt"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let metrics = fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    assert!(metrics.starts_with(
        "epoch,train_loss,train_acc,val_acc,test_acc,mean_l_cls,mean_r_att,mean_r_ent,wall_seconds\n"
    ));
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn two_phase_run_then_eval_and_label_stats() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: Vec<&str>| {
        let o = clonalnet(&args, dir.path());
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        o
    };
    run(with_tiny(&["train-baseline", "--out", "base"]));
    run(with_tiny(&["train-clonal", "--baseline", "base/model.ckpt", "--out", "clonal"]));
    run(with_tiny(&["train-kd", "--teacher", "base/model.ckpt", "--out", "kd"]));
    run(with_tiny(&["train-ls", "--ls-eps", "0.2", "--out", "ls"]));

    let metrics = fs::read_to_string(dir.path().join("clonal/metrics.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    assert!(!row[6].is_empty(), "clonal rows record the attention term");
    let metrics = fs::read_to_string(dir.path().join("ls/metrics.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    assert!(row[6].is_empty());

    let o = run(with_tiny(&["eval", "--checkpoint", "clonal/model.ckpt"]));
    let out = stdout(&o);
    assert!(out.starts_with("split,accuracy\n"), "{out}");
    assert!(out.lines().any(|l| l.starts_with("test,")));

    run(with_tiny(&["label-stats", "--baseline", "base/model.ckpt", "--out", "stats"]));
    let stats = fs::read_to_string(dir.path().join("stats/label_stats.csv")).unwrap();
    assert!(stats.starts_with("class_index,mean_support,frac_multi"));
    assert_eq!(stats.lines().count(), 1 + 4);
    assert!(dir.path().join("stats/label_cooccurrence.csv").exists());
}

#[test]
fn compare_runs_every_method_and_summarises() {
    let dir = tempfile::tempdir().unwrap();
    let o = clonalnet(&with_tiny(&["compare", "--seeds", "2", "--out", "cmp"]), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = fs::read_to_string(dir.path().join("cmp/summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("method,n_runs,mean_test_acc,std_test_acc,improvement_pp"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][0], "baseline");
    assert_eq!(rows[0][4].parse::<f64>().unwrap(), 0.0);
    assert!(rows.iter().all(|r| r[1] == "2"));
    assert!(dir.path().join("cmp/clonal/seed-1/metrics.csv").exists());

    // the report can be rebuilt from the run directories alone
    let again = clonalnet(&with_tiny(&["compare", "--seeds", "2", "--out", "cmp", "--report-only"]), dir.path());
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(fs::read_to_string(dir.path().join("cmp/summary.csv")).unwrap(), summary);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "dataset = synthetic\nn_pairs = 2\nper_class = 40\ndim = 4\nhidden = 8\nepochs = 3\nseed = 9\n",
    )
    .unwrap();
    let o = clonalnet(&["train-baseline", "--config", "run.cfg", "--epochs", "1", "--out", "r"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let written = fs::read_to_string(dir.path().join("r/config.txt")).unwrap();
    assert!(written.lines().any(|l| l == "epochs = 1"));
    assert!(written.lines().any(|l| l == "seed = 9"));
    let metrics = fs::read_to_string(dir.path().join("r/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    // a config naming another loss cannot drive this subcommand
    fs::write(dir.path().join("kd.cfg"), "loss = kd\n").unwrap();
    let o = clonalnet(&["train-baseline", "--config", "kd.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
