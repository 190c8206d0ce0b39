//! End-to-end checks of the `robofi` binary on tiny synthetic data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use robofi::protocols::weighted_class_mean;
use robofi::report::{read_report, Report};
use robofi::rundir::latest;
use sha2::{Digest, Sha256};

fn robofi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robofi")).args(args).output().expect("spawn robofi")
}

/// Config small enough that every protocol finishes in seconds.
fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    let cfg = serde_json::json!({
        "synth": { "per_class": 4 },
        "model": { "embed_dim": 8, "heads": 2, "depth": 1, "patch": 45, "mlp_hidden": 16, "dropout": 0.4,
                   "num_classes": 8, "head_hidden": 8, "input_rows": 360, "input_cols": 236 },
        "train": { "lr": 1e-3, "weight_decay": 2e-5, "batch_size": 8, "max_epochs": 2, "patience": 15, "seed": 0 },
        "split": { "train_frac": 0.7, "val_frac": 0.1, "test_frac": 0.2, "folds": 2, "stratified": true }
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout_path(o: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8_lossy(&o.stdout).lines().last().expect("run path").trim())
}

/// Content hash of every file below `root`, keyed by relative path.
fn tree_digest(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let digest = Sha256::digest(fs::read(&p).unwrap()).to_vec();
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), digest);
            }
        }
    }
    out
}

fn synth(dir: &Path, cfg: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join("runs");
    let o = robofi(&[&["synth", "--config", cfg, "--out", out.to_str().unwrap()], extra].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    stdout_path(&o).join("dataset")
}

#[test]
fn exit_codes_separate_usage_validation_and_success() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let out = out.to_str().unwrap();
    assert_eq!(robofi(&["--help"]).status.code(), Some(0));
    assert_eq!(robofi(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(robofi(&["cv", "--out", out, "--max-epochs", "0"]).status.code(), Some(1));
    assert_eq!(robofi(&["cv", "--out", out, "--rate", "12"]).status.code(), Some(1));
    assert_eq!(robofi(&["cv", "--out", out]).status.code(), Some(1), "missing dataset");
    let missing = dir.path().join("absent.json");
    assert_eq!(robofi(&["cv", "--config", missing.to_str().unwrap()]).status.code(), Some(1));

    let cfg = tiny_config(dir.path());
    let data = synth(dir.path(), &cfg, &["--velocity", "V1"]);
    // LOVO needs more than one velocity tier
    let o = robofi(&["lovo", "--config", &cfg, "--out", out, "--dataset", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn protocols_leave_input_datasets_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = synth(dir.path(), &cfg, &["--velocity", "V2"]);
    let before = tree_digest(&data);
    let out = dir.path().join("runs");
    for cmd in ["cv", "preprocess"] {
        let o = robofi(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap(), "--dataset", data.to_str().unwrap(), "--rate", "15"]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(tree_digest(&data), before);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = synth(dir.path(), &cfg, &["--velocity", "V3"]);
    let out = dir.path().join("runs");
    let out = out.to_str().unwrap();
    let first = robofi(&["cv", "--config", &cfg, "--out", out, "--dataset", data.to_str().unwrap(), "--seed", "5"]);
    assert!(first.status.success());
    let first = stdout_path(&first);
    let echo = first.join("config.json");
    let again = robofi(&["cv", "--config", echo.to_str().unwrap()]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    let again = stdout_path(&again);
    assert_ne!(first, again);
    assert_eq!(fs::read(first.join("report.json")).unwrap(), fs::read(again.join("report.json")).unwrap());
    assert_eq!(fs::read(first.join("config.json")).unwrap(), fs::read(again.join("config.json")).unwrap());
}

#[test]
fn report_command_rerenders_from_saved_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = synth(dir.path(), &cfg, &["--velocity", "V2"]);
    let out = dir.path().join("runs");
    let o = robofi(&["cv", "--config", &cfg, "--out", out.to_str().unwrap(), "--dataset", data.to_str().unwrap()]);
    assert!(o.status.success());
    let run = stdout_path(&o);
    let summary = fs::read(run.join("summary.csv")).unwrap();
    let svg = fs::read(run.join("summary.svg")).unwrap();
    fs::remove_file(run.join("summary.csv")).unwrap();
    fs::remove_file(run.join("summary.svg")).unwrap();

    let o = robofi(&["report", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(run.join("summary.csv")).unwrap(), summary);
    assert_eq!(fs::read(run.join("summary.svg")).unwrap(), svg);
    // without an argument the most recent run is used
    assert!(robofi(&["report", "--out", out.to_str().unwrap()]).status.success());
}

#[test]
fn lovo_and_sweep_reports_are_internally_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut args: Vec<String> = vec!["--config".into(), cfg.clone()];
    for v in ["V1", "V2", "V3"] {
        args.extend(["--dataset".into(), synth(dir.path(), &cfg, &["--velocity", v]).to_str().unwrap().to_string()]);
    }
    let out = dir.path().join("runs");
    args.extend(["--out".into(), out.to_str().unwrap().to_string()]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();

    assert!(robofi(&[&["lovo"], args.as_slice()].concat()).status.success());
    let Report::Lovo(lovo) = read_report(&latest(&out).unwrap()).unwrap() else { panic!("wrong report") };
    assert_eq!(lovo.arms.len(), 3);
    for arm in &lovo.arms {
        let held: u64 = arm.class_counts.iter().sum();
        assert_eq!(held, arm.fold.test_size as u64);
        assert!((weighted_class_mean(&arm.per_class_accuracy, &arm.class_counts) - arm.overall_accuracy).abs() < 1e-12);
    }

    let rates = ["--rate", "30"];
    assert!(robofi(&[&["sweep-freq"], args.as_slice()].concat()).status.success());
    let Report::FreqSweep(sweep) = read_report(&latest(&out).unwrap()).unwrap() else { panic!("wrong report") };
    assert_eq!(sweep.grid.len(), sweep.rates.len());
    for (i, rate) in sweep.rates.iter().enumerate() {
        for (j, v) in sweep.velocities.iter().enumerate() {
            let cell = &sweep.cells[i * sweep.velocities.len() + j];
            assert_eq!((cell.rate_hz, cell.velocity), (*rate, *v));
            assert_eq!(sweep.grid[i][j], cell.report.summary.accuracy);
        }
    }
    assert!(robofi(&[&["cv", "--velocity", "V1"], &rates[..], args.as_slice()].concat()).status.success());
    let Report::Cv(plain) = read_report(&latest(&out).unwrap()).unwrap() else { panic!("wrong report") };
    assert_eq!(sweep.cells[0].report, plain);
}
