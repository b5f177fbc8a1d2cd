use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = r#"
seed = 3

[data]
holdout_hours = 120

[gan]
width_divisor = 16
max_iterations = 12
eval_every = 4

[calibration]
window = 48
refit = 12

[synth]
hours = 480
"#;

fn lmpgan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmpgan"))
        .args(args)
        .current_dir(dir)
        .env("LMPGAN_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lmpgan(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn project() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("lmpgan.toml"), CONFIG).unwrap();
    ok(dir.path(), &["synth"]);
    dir
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn synth_row_count_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--hours", "2160", "--out", "a.csv", "--seed", "11"]);
    ok(d, &["synth", "--hours", "2160", "--out", "b.csv", "--seed", "11"]);
    ok(d, &["synth", "--hours", "2160", "--out", "c.csv", "--seed", "12"]);
    let a = read(d, "a.csv");
    let text = String::from_utf8(a.clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 9 * 2160);
    assert!(text.starts_with("timestamp,zone,rtlmp,dalmp,demand\n"));
    assert_eq!(a, read(d, "b.csv"));
    assert_ne!(a, read(d, "c.csv"));
}

#[test]
fn ingest_is_idempotent() {
    let dir = project();
    let d = dir.path();
    let summary = ok(d, &["ingest"]);
    assert!(summary.contains("ingested 4320 rows into 480 frames"), "{summary}");
    let norm = read(d, "artifacts/normalized.csv");
    let stats = read(d, "artifacts/norm_stats.csv");
    ok(d, &["ingest"]);
    assert_eq!(norm, read(d, "artifacts/normalized.csv"));
    assert_eq!(stats, read(d, "artifacts/norm_stats.csv"));
}

#[test]
fn malformed_row_reports_line() {
    let dir = project();
    let d = dir.path();
    let mut lines: Vec<String> = fs::read_to_string(d.join("market.csv")).unwrap().lines().map(String::from).collect();
    let mut fields: Vec<&str> = lines[41].split(',').collect();
    fields[2] = "oops";
    lines[41] = fields.join(",");
    fs::write(d.join("market.csv"), lines.join("\n") + "\n").unwrap();
    let out = lmpgan(d, &["ingest"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("market.csv:42"), "{err}");
}

#[test]
fn config_and_usage_errors_exit_1() {
    let dir = project();
    let d = dir.path();
    assert_eq!(lmpgan(d, &["train", "--set", "gan.nonsense=1"]).status.code(), Some(1));
    assert_eq!(lmpgan(d, &["train", "--set", "gan.batch_size=0"]).status.code(), Some(1));
    assert_eq!(lmpgan(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(lmpgan(d, &["--config", "missing.toml", "ingest"]).status.code(), Some(1));
    // data errors are distinct from config errors
    assert_eq!(lmpgan(d, &["train"]).status.code(), Some(2));
}

#[test]
fn training_is_deterministic_and_resumable() {
    let a = project();
    let b = project();
    for d in [a.path(), b.path()] {
        ok(d, &["ingest"]);
    }
    ok(a.path(), &["train"]);
    ok(b.path(), &["train", "--set", "gan.max_iterations=8"]);
    ok(b.path(), &["train", "--resume"]);
    assert_eq!(read(a.path(), "checkpoints/latest.ckpt"), read(b.path(), "checkpoints/latest.ckpt"));
    let log = read(a.path(), "checkpoints/train_log.csv");
    assert_eq!(log, read(b.path(), "checkpoints/train_log.csv"));

    let text = String::from_utf8(log).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,loss_D,loss_G,adv,lp,gdl,dcl,val_l2"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 12);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (i + 1) as f64);
        assert!(r[1..7].iter().all(|v| v.is_finite()));
    }

    let c = project();
    ok(c.path(), &["ingest"]);
    ok(c.path(), &["train"]);
    assert_eq!(read(a.path(), "checkpoints/latest.ckpt"), read(c.path(), "checkpoints/latest.ckpt"));
}

#[test]
fn divergence_exits_3() {
    let dir = project();
    let d = dir.path();
    ok(d, &["ingest"]);
    let out = lmpgan(d, &["train", "--set", "gan.lr_g=1e300", "--set", "gan.lr_d=1e300"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_reports_align_with_holdout() {
    let dir = project();
    let d = dir.path();
    ok(d, &["ingest"]);
    ok(d, &["train"]);
    ok(d, &["predict"]);
    ok(d, &["calibrate"]);
    let table = ok(d, &["evaluate"]);
    assert!(table.contains("persistence 1h"));
    ok(d, &["evaluate", "--source", "gan"]);

    let pred = fs::read_to_string(d.join("reports/predictions.csv")).unwrap();
    assert_eq!(pred.lines().count(), 1 + 9 * 120);
    let market = fs::read_to_string(d.join("market.csv")).unwrap();
    let holdout: Vec<&str> = market.lines().skip(1 + 9 * 360).map(|l| l.split(',').next().unwrap()).collect();
    let pred_ts: Vec<&str> = pred.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(holdout, pred_ts);

    let cal = fs::read_to_string(d.join("reports/calibration.csv")).unwrap();
    assert!(cal.starts_with("timestamp,zone,y_true,y_gan,delta_hat,y_calibrated\n"));
    assert_eq!(cal.lines().count(), 1 + 9 * (120 - 48));
    assert_eq!(cal.lines().nth(1).unwrap().split(',').next(), pred_ts.get(9 * 48).copied());
    assert!(read(d, "reports/score.csv").starts_with(b"metric,zone,value\n"));
}

#[test]
fn render_writes_p6() {
    let dir = project();
    let d = dir.path();
    ok(d, &["ingest"]);
    ok(d, &["render", "frame", "--index", "0", "--out", "f.ppm"]);
    let img = read(d, "f.ppm");
    assert_eq!(&img[..11], b"P6\n3 3\n255\n");
    assert_eq!(img.len(), 11 + 27);
    assert!(img[11..].chunks(3).all(|px| px[0] == px[1] && px[1] == px[2]));
    assert_eq!(lmpgan(d, &["render", "frame", "--index", "100000"]).status.code(), Some(2));
}
