use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn logoforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_logoforge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn logoforge")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train_into(out: &Path, epochs: &str, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec![
        "train", "--toy", "--synthetic", "40", "--epochs", epochs, "--seed", "7", "--batch-size", "8", "--out", out,
    ];
    args.extend_from_slice(extra);
    logoforge(&args)
}

/// One small trained run shared by the tests that need a checkpoint.
fn shared_run() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let o = train_into(&dir, "1", &[]);
        assert!(o.status.success(), "{}", stderr(&o));
        dir
    })
}

fn ckpt() -> String {
    shared_run().join("checkpoints/last.ckpt").to_str().unwrap().to_string()
}

#[test]
fn train_writes_run_outputs() {
    let dir = shared_run();
    for f in [
        "run.json",
        "config.json",
        "metrics.csv",
        "checkpoints/last.ckpt",
        "checkpoints/epoch_001.ckpt",
        "samples/epoch_001.png",
    ] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), "epoch,step,loss_d_seq,loss_d_img,loss_overlap,loss_g_adv,fid");
    assert_eq!(lines.count(), 1);
    let echo: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(echo["synthetic"], 40);
    assert_eq!(echo["train"]["batch_size"], 8);
}

#[test]
fn identical_flags_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_into(dir.path(), "1", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(dir.path().join("metrics.csv")).unwrap(),
        std::fs::read(shared_run().join("metrics.csv")).unwrap()
    );
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"lambda_ol": 3.5, "batch_size": 4, "synthetic": 12, "model": {"d_z": 8}}"#).unwrap();
    let out = dir.path().join("run");
    let o = logoforge(&[
        "train",
        "--toy",
        "--config",
        cfg.to_str().unwrap(),
        "--batch-size",
        "6",
        "--epochs",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(echo["train"]["lambda_ol"], 3.5);
    assert_eq!(echo["train"]["batch_size"], 6);
    assert_eq!(echo["train"]["model"]["d_z"], 8);
    // Untouched keys keep the toy preset.
    assert_eq!(echo["train"]["model"]["d_c"], 32);
    assert_eq!(echo["synthetic"], 12);
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = logoforge(&["train", "--config", "/nonexistent/cfg.json", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn missing_data_source_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = logoforge(&["train", "--toy", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = logoforge(&["train", "--toy", "--synthetic", "10", "--ablation", "no_magic", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = logoforge(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    let o = train_into(&straight, "2", &[]);
    assert!(o.status.success(), "{}", stderr(&o));

    let resumed = dir.path().join("resumed");
    let o = train_into(&resumed, "1", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = resumed.join("checkpoints/epoch_001.ckpt");
    let o = train_into(&resumed, "2", &["--resume", first.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    assert_eq!(
        std::fs::read(straight.join("checkpoints/last.ckpt")).unwrap(),
        std::fs::read(resumed.join("checkpoints/last.ckpt")).unwrap()
    );
    assert_eq!(
        std::fs::read_to_string(straight.join("metrics.csv")).unwrap(),
        std::fs::read_to_string(resumed.join("metrics.csv")).unwrap()
    );
}

#[test]
fn sample_writes_candidates_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = logoforge(&[
            "sample", "--ckpt", &ckpt(), "--text", "北京", "--k", "4", "--seed", "1", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a");
    let b = run("b");
    for j in 0..4 {
        for f in [format!("layout_{j}.json"), format!("logo_{j}.png"), format!("overlay_{j}.png")] {
            assert!(a.join(&f).exists(), "missing {f}");
        }
        let ja = std::fs::read(a.join(format!("layout_{j}.json"))).unwrap();
        assert_eq!(ja, std::fs::read(b.join(format!("layout_{j}.json"))).unwrap());
        let v: serde_json::Value = serde_json::from_slice(&ja).unwrap();
        assert_eq!(v["boxes"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn sample_rejects_texts_over_the_bound() {
    let text = "字".repeat(21);
    let o = logoforge(&["sample", "--ckpt", &ckpt(), "--text", &text, "--out", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at most 20"), "{}", stderr(&o));
}

#[test]
fn eval_baseline_and_checkpoint_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rule");
    let o = logoforge(&["eval", "--synthetic", "30", "--baseline", "a", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("method,fid,is,overlap,reading_order\nrule-a,"), "{csv}");
    assert!(std::fs::read_to_string(out.join("report.md")).unwrap().contains("| rule-a |"));

    let out = dir.path().join("model");
    let o = logoforge(&["eval", "--synthetic", "30", "--ckpt", &ckpt(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "model");
    assert!(row[1..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));

    let o = logoforge(&["eval", "--synthetic", "30", "--ckpt", &ckpt(), "--ablation", "no_seq_dis"]);
    assert_eq!(o.status.code(), Some(2));
    let o = logoforge(&["eval", "--synthetic", "30", "--baseline", "z"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compose_renders_and_reports_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let layout = dir.path().join("l.json");
    std::fs::write(&layout, r#"{"canvas":[128,128],"boxes":[[32.0,64.0,40.0,40.0],[96.0,64.0,40.0,40.0]]}"#).unwrap();
    let png = dir.path().join("out/logo.png");
    let o = logoforge(&[
        "compose", "--text", "星辰", "--layout", layout.to_str().unwrap(), "--out", png.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("overlap 0 px"));
    assert!(png.exists());

    let o = logoforge(&["compose", "--text", "星", "--layout", layout.to_str().unwrap(), "--out", png.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
