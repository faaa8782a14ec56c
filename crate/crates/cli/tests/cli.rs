use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "height = 32\nwidth = 32\nn_source = 6\nn_target = 6\nn_eval = 3\niters = 3\neval_every = 2\nckpt_every = 2\nwarmup = 1\n";

fn t2s(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t2s"))
        .args(args)
        .current_dir(dir)
        .env_remove("T2S_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.txt"), SMALL).unwrap();

    let o = t2s(&["gen-data", "--config", "cfg.txt", "--out", "data"], d);
    assert_eq!(code(&o), 0, "{o:?}");
    for part in ["source", "target", "eval_source", "eval_target"] {
        assert!(d.join("data").join(part).join("manifest.txt").exists(), "{part}");
    }

    let o = t2s(
        &["train", "--config", "cfg.txt", "--data", "data", "--out", "run", "--dump-pairs", "pairs.csv"],
        d,
    );
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("step 3 target mIoU"));
    for f in ["checkpoint.bin", "loss_log.csv", "metrics.csv", "config.txt"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    assert!(d.join("pairs.csv").exists());

    let o = t2s(&["eval", "--ckpt", "run/checkpoint.bin", "--data", "data/eval_target"], d);
    assert_eq!(code(&o), 0, "{o:?}");
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("class ")).count(), 4);
    assert!(text.contains("mIoU "));

    let o = t2s(
        &[
            "analyze", "--ckpt", "run/checkpoint.bin", "--data", "data/eval_target", "--source", "data/eval_source",
            "--out", "analysis", "--features", "encoder",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{o:?}");
    let metrics = std::fs::read_to_string(d.join("analysis/metrics.csv")).unwrap();
    for m in [",ccd,", ",pdd,", ",similarity,", ",iou,", ",miou,"] {
        assert!(metrics.contains(m), "{m}");
    }

    let o = t2s(
        &["translate", "--engine", "fda", "--beta", "0.05", "--src", "data/source", "--ref", "data/target", "--out", "tr"],
        d,
    );
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(d.join("tr/manifest.txt").exists());

    // Resuming a finished run is a no-op that still succeeds.
    let o = t2s(&["train", "--config", "cfg.txt", "--data", "data", "--out", "run", "--resume"], d);
    assert_eq!(code(&o), 0, "{o:?}");
    let log = std::fs::read_to_string(d.join("run/loss_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.txt"), "lamda = 0.1\n").unwrap();
    assert_eq!(code(&t2s(&["train", "--config", "bad.txt", "--out", "run"], d)), 2);
    std::fs::write(d.join("dg.txt"), "mode = dg\nengine = fda\n").unwrap();
    assert_eq!(code(&t2s(&["gen-data", "--config", "dg.txt", "--out", "x"], d)), 2);
    assert_eq!(code(&t2s(&["translate", "--engine", "warp", "--src", "x", "--out", "y"], d)), 2);

    let o = Command::new(env!("CARGO_BIN_EXE_t2s"))
        .args(["gen-data", "--out", "x"])
        .current_dir(d)
        .env("T2S_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn resume_under_another_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.txt"), SMALL).unwrap();
    std::fs::write(d.join("other.txt"), format!("{SMALL}lambda = 0.5\n")).unwrap();
    assert_eq!(code(&t2s(&["train", "--config", "cfg.txt", "--out", "run"], d)), 0);
    assert_eq!(code(&t2s(&["train", "--config", "other.txt", "--out", "run", "--resume"], d)), 2);
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&t2s(&["eval", "--ckpt", "missing.bin", "--data", "nowhere"], d)), 3);
    assert_eq!(code(&t2s(&["train", "--config", "missing.txt", "--out", "run"], d)), 3);
    std::fs::write(d.join("junk.bin"), b"not a checkpoint").unwrap();
    assert_eq!(code(&t2s(&["eval", "--ckpt", "junk.bin", "--data", "nowhere"], d)), 3);
}

#[test]
fn numeric_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.txt"), format!("{}lr_encoder = 1e300\nlr_head = 1e300\n", SMALL.replace("warmup = 1", "warmup = 0"))).unwrap();
    let o = t2s(&["train", "--config", "cfg.txt", "--out", "run"], d);
    assert_eq!(code(&o), 4, "{o:?}");
}
