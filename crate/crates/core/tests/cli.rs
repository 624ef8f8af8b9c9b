use std::path::Path;
use std::process::{Command, Output};

use srt::harness::{TrainingLog, CHECKPOINT_FILE, LOG_FILE};
use srt::model::checkpoint::Checkpoint;

fn srt(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_srt"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = srt(dir, args);
    assert!(
        out.status.success(),
        "srt {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = "# tiny model for CLI tests\n\
dataset = data.srt\n\
epochs = 2\n\
patience = 2\n\
batch = 4\n\
encoder_units = 6\n\
decoder_units = 6\n\
head_units = 4\n";

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["gen", "--out", "data.srt", "--cases", "10", "--timesteps", "24", "--cells", "8"],
    );
    std::fs::write(dir.path().join("small.conf"), SMALL).unwrap();
    dir
}

#[test]
fn train_then_eval() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--config", "small.conf", "--out", "serial"]);
    let log = TrainingLog::load(d.join("serial").join(LOG_FILE)).unwrap();
    assert_eq!(log.epochs.len(), 2);

    let stdout = ok(
        d,
        &[
            "eval",
            "--checkpoint",
            "serial/checkpoint.srt",
            "--dataset",
            "data.srt",
            "--groups",
            "5,last",
        ],
    );
    assert!(stdout.contains("pearson"));
    let report = std::fs::read_to_string(d.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("group,timestep,n,pearson,spearman,rmse,hist_r2_percent"));
    assert!(lines.next().unwrap().starts_with("t5,5,48,"));
    assert!(lines.next().unwrap().starts_with("last,23,48,"));
    let (x, y) = srt::metrics::read_scatter(d.join("scatter.csv")).unwrap();
    assert_eq!((x.len(), y.len()), (48, 48));
}

#[test]
fn flags_override_the_config_file() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--config", "small.conf", "--epochs", "1", "--patience", "1", "--precision", "f64", "--out", "o"]);
    let log = TrainingLog::load(d.join("o").join(LOG_FILE)).unwrap();
    assert_eq!(log.epochs.len(), 1);
    let header = srt::model::checkpoint::read_header(&std::fs::read(d.join("o").join(CHECKPOINT_FILE)).unwrap()).unwrap();
    assert_eq!(header.precision, srt::tensor::Precision::Double);
    assert_eq!(header.dims.encoder_units, 6);
}

#[test]
fn two_workers_match_each_other() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--config", "small.conf", "--layout", "2x1", "--out", "p2", "--save-all-ranks"]);
    let a = std::fs::read(d.join("p2/rank0.srt")).unwrap();
    let b = std::fs::read(d.join("p2/rank1.srt")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, std::fs::read(d.join("p2").join(CHECKPOINT_FILE)).unwrap());
    let ckpt = Checkpoint::<f32>::from_bytes(&a).unwrap();
    // 7 fit cases x 21 windows = 147 samples: 18 global batches of 2 x 4
    assert_eq!(ckpt.optimizer.unwrap().step, 2 * 18);
}

#[test]
fn worker_failure_names_a_rank() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.conf"), SMALL.replace("data.srt", "missing.srt")).unwrap();
    let out = srt(d, &["train", "--config", "bad.conf", "--layout", "1x2", "--out", "bad"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("worker rank"), "{err}");
}

#[test]
fn speedup_from_times_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("times.csv"),
        "label,seconds\n1,76674\n2,75346\n3,66573\n4,58678\n5,52908\n",
    )
    .unwrap();
    let stdout = ok(d, &["speedup", "--times", "times.csv", "--out", "s.csv"]);
    assert!(stdout.contains("1.45"), "{stdout}");
    let csv = std::fs::read_to_string(d.join("s.csv")).unwrap();
    assert!(csv.starts_with("label,seconds,min_seconds,max_seconds,parallel_speedup,incremental_speedup\n"));
    let last = csv.lines().last().unwrap();
    let parallel: f64 = last.split(',').nth(4).unwrap().parse().unwrap();
    assert_eq!(parallel, 76674.0 / 52908.0);

    let missing = srt(d, &["speedup", "--times", "times.csv", "--baseline", "9"]);
    assert!(!missing.status.success());
}

#[test]
fn simulated_bench_is_deterministic() {
    let dir = setup();
    let d = dir.path();
    let args = [
        "bench",
        "--config",
        "small.conf",
        "--mode",
        "simulated",
        "--layouts",
        "1x1,1x2,2x1,1x4,2x2,4x1",
        "--out",
        "b.csv",
        "--delta",
        "d.csv",
    ];
    ok(d, &args);
    let first = std::fs::read(d.join("b.csv")).unwrap();
    ok(d, &args);
    assert_eq!(first, std::fs::read(d.join("b.csv")).unwrap());
    let delta = std::fs::read_to_string(d.join("d.csv")).unwrap();
    assert_eq!(delta.lines().next(), Some("layout,partner,delta_percent"));
    assert_eq!(delta.lines().count(), 5);
    for line in delta.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let (l, p): (srt::collective::Layout, srt::collective::Layout) = (cols[0].parse().unwrap(), cols[1].parse().unwrap());
        let v: f64 = cols[2].parse().unwrap();
        assert_eq!(l.transpose(), p);
        assert_eq!(v >= 0.0, l.nodes < p.nodes, "{line}");
    }
}
