use std::path::{Path, PathBuf};
use std::process::Command;

use ietp_cli::*;

const TINY: &str = r#"
seed = 5
learners = 2

[data]
t_h = 3
t_f = 5
stride = 5

[model]
encoder_hidden = 4
decoder_hidden = 8
conv1_depth = 4
conv2_depth = 4
position_scale = 1.0

[train]
epochs = 1
batch_size = 16

[eval]
steps_per_second = 1

[bench]
sizes = [1, 2]
samples = 4
repetitions = 1

[synth]
vehicles = 24
duration_s = 12.0
"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    csv: PathBuf,
}

fn fixture(config: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let cfg = root.join("c.toml");
    std::fs::write(&cfg, config).unwrap();
    let csv = root.join("tracks.csv");
    cmd_synth(&SynthArgs {
        config: Some(cfg.clone()),
        out: csv.clone(),
        seed: None,
        vehicles: None,
        noise_std: None,
    })
    .unwrap();
    Fixture {
        _dir: dir,
        root,
        config: cfg,
        csv,
    }
}

fn prepare(f: &Fixture, out: &str) -> PrepareReport {
    cmd_prepare(&PrepareArgs {
        config: Some(f.config.clone()),
        input: f.csv.clone(),
        out: f.root.join(out),
        seed: None,
        learners: None,
        stride: None,
        test_fraction: None,
    })
    .unwrap()
}

fn train(f: &Fixture, data: &str, run: &str, resume: bool) -> std::result::Result<RunManifest, CliError> {
    cmd_train(&TrainArgs {
        config: None,
        data: f.root.join(data),
        out: f.root.join(run),
        workers: Some(1),
        resume,
        epochs: None,
        learning_rate: None,
    })
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ietp"))
}

#[test]
fn prepare_counts_split_and_reproducible_indices() {
    let f = fixture(TINY);
    let a = prepare(&f, "a");
    assert_eq!(a.build.tracks, 24);
    assert_eq!(a.bootstrap_sets, 2);
    let total = a.train_samples + a.test_samples;
    assert_eq!(total, a.build.samples);
    assert_eq!(a.test_samples, (total as f64 * 0.25).round() as usize);
    let b = prepare(&f, "b");
    assert_eq!(a.dataset_fingerprint, b.dataset_fingerprint);
    for file in [
        "split.json",
        "bootstrap/set_001.json",
        "bootstrap/set_002.json",
        "samples.jsonl",
    ] {
        assert_eq!(
            std::fs::read(f.root.join("a").join(file)).unwrap(),
            std::fs::read(f.root.join("b").join(file)).unwrap(),
            "{file}"
        );
    }
}

fn read_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn train_evaluate_bench_round_trip() {
    let f = fixture(TINY);
    prepare(&f, "prep");
    let m = train(&f, "prep", "run", false).unwrap();
    assert_eq!(m.learners.iter().map(|e| e.index).collect::<Vec<_>>(), vec![1, 2]);
    assert!(m.failures.is_empty());

    let s = cmd_evaluate(&EvaluateArgs {
        run: f.root.join("run"),
        out: None,
    })
    .unwrap();
    let rows = read_rows(&f.root.join("run/metrics.csv"));
    assert_eq!(rows.len(), 2 * 2 * 5);
    // Summary row recomputed from the CSV.
    for h in 0..5 {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r[0] == "ensemble" && r[3] == (h + 1).to_string())
            .map(|r| r[4].parse().unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((s.summary.ensemble_mean.rmse[h] - mean).abs() < 1e-9 * mean.max(1.0));
    }
    assert!(s.fleet_variance.is_some());

    let r = cmd_bench(&BenchArgs {
        run: f.root.join("run"),
        out: None,
        sizes: None,
        samples: None,
        repetitions: None,
    })
    .unwrap();
    assert_eq!(r.ensembles.iter().map(|e| e.n).collect::<Vec<_>>(), vec![1, 2]);
    assert!(r.fit.is_some());
    let lat = read_rows(&f.root.join("run/latency.csv"));
    assert_eq!(lat.len(), 2);
}

#[test]
fn fleet_of_one_rmse_rows_match() {
    let f = fixture(&TINY.replace("learners = 2", "learners = 1"));
    prepare(&f, "prep");
    train(&f, "prep", "run", false).unwrap();
    let s = cmd_evaluate(&EvaluateArgs {
        run: f.root.join("run"),
        out: None,
    })
    .unwrap();
    assert!(s.fleet_variance.is_none());
    let rows = read_rows(&f.root.join("run/metrics.csv"));
    let (base, ens): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r[0] == "base");
    assert_eq!(base.len(), 5);
    for (b, e) in base.iter().zip(&ens) {
        assert_eq!(b[1..5], e[1..5]);
    }
}

#[test]
fn resume_skips_trained_learners() {
    let f = fixture(TINY);
    prepare(&f, "prep");
    let first = train(&f, "prep", "run", false).unwrap();
    let report = f.root.join("run/reports/learner_001.json");
    let before = std::fs::read(&report).unwrap();
    std::fs::remove_file(f.root.join("run/weights/learner_002.ietpw")).unwrap();
    let again = train(&f, "prep", "run", true).unwrap();
    assert_eq!(std::fs::read(&report).unwrap(), before);
    assert_eq!(first.learners, again.learners);
    let err = train(&f, "prep", "run", false).unwrap_err();
    assert_eq!(err.code, EXIT_CONFIG);
}

#[test]
fn exit_codes() {
    let f = fixture(TINY);
    prepare(&f, "prep");
    train(&f, "prep", "run", false).unwrap();
    std::fs::remove_file(f.root.join("run/weights/learner_002.ietpw")).unwrap();
    let out = bin()
        .args(["evaluate", "--run"])
        .arg(f.root.join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learner 2"));

    let bad = f.root.join("bad.toml");
    std::fs::write(&bad, "learners = 0\n").unwrap();
    let out = bin()
        .args(["prepare", "--input"])
        .arg(&f.csv)
        .arg("--out")
        .arg(f.root.join("x"))
        .arg("--config")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(f.root.join("broken.csv"), "vehicle_id,frame,x\n1,2,3\n").unwrap();
    let out = bin()
        .args(["prepare", "--input"])
        .arg(f.root.join("broken.csv"))
        .arg("--out")
        .arg(f.root.join("y"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    let out = bin()
        .args(["synth", "--out"])
        .arg(f.root.join("s.csv"))
        .args(["--vehicles", "3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn shipped_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/ietp.toml");
    assert_eq!(Config::load(&path).unwrap(), Config::default());
}
