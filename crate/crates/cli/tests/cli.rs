use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spinekpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinekpt"))
        .args(args)
        .env_remove("SPINEKPT_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = spinekpt(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_writes_sixty_twenty_twenty() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let stdout = ok(&["gen", "--count", "10", "--out", s(&data)]);
    assert!(stdout.contains("train 6, val 2, test 2"), "{stdout}");
    let manifest = fs::read_to_string(data.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.starts_with("train\t")).count(), 6);
    assert!(data.join("sample_0009.pgm").is_file());
    assert!(data.join("sample_0009.json").is_file());
}

#[test]
fn gen_is_deterministic_and_honours_seed_env() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["gen", "--count", "3", "--seed", "4", "--out", s(&a)]);
    ok(&["gen", "--count", "3", "--seed", "4", "--out", s(&b)]);
    let out = Command::new(env!("CARGO_BIN_EXE_spinekpt"))
        .args(["gen", "--count", "3", "--out", s(&c)])
        .env("SPINEKPT_SEED", "4")
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in ["sample_0001.pgm", "sample_0001.json", "manifest.tsv"] {
        let bytes = fs::read(a.join(f)).unwrap();
        assert_eq!(bytes, fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(bytes, fs::read(c.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn full_pipeline_on_a_tiny_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("model.ckpt");
    ok(&["gen", "--count", "5", "--splits", "1,1,3", "--out", s(&data)]);
    let stdout = ok(&[
        "train", "--data-dir", s(&data), "--checkpoint", s(&ckpt), "--epochs", "1",
    ]);
    assert!(stdout.contains("trained 1 epochs"), "{stdout}");
    assert!(ckpt.is_file());
    let log = fs::read_to_string(dir.path().join("model.ckpt.loss.txt")).unwrap();
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 1);

    let eval_dir = dir.path().join("oracle");
    let report = ok(&[
        "eval", "--data-dir", s(&data), "--mode", "oracle", "--split", "test", "--out",
        s(&eval_dir),
    ]);
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[lines.len() - 2], "SMAPE SMAPE_PT SMAPE_MT SMAPE_TL Error_dec");
    assert_eq!(lines[lines.len() - 1], "0.000000 0.000000 0.000000 0.000000 0.000000");
    assert!(eval_dir.join("sample_0004.json").is_file());

    let decoded = dir.path().join("decoded.json");
    let image = data.join("sample_0002.pgm");
    ok(&["decode", "--image", s(&image), "--checkpoint", s(&ckpt), "--out", s(&decoded)]);
    let svg = dir.path().join("plot.svg");
    ok(&["plot", "--image", s(&image), "--annotation", s(&decoded), "--out", s(&svg)]);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.contains("class=\"corner-offset\""));

    let gt_svg = dir.path().join("gt.svg");
    let gt = data.join("sample_0002.json");
    ok(&["plot", "--image", s(&image), "--annotation", s(&gt), "--out", s(&gt_svg)]);
    let text = fs::read_to_string(&gt_svg).unwrap();
    assert_eq!(text.matches("class=\"landmark\"").count(), 68);
    assert_eq!(text.matches("class=\"vertebra\"").count(), 17);
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--data-dir", s(&missing), "--checkpoint", "x.ckpt"],
        vec!["eval", "--data-dir", s(dir.path()), "--mode", "oracle", "--out", s(&missing)],
        vec!["plot", "--image", "a.pgm", "--annotation", s(&missing), "--out", "a.svg"],
        vec!["gen", "--count", "0", "--out", s(&missing)],
    ];
    for args in cases {
        let out = spinekpt(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        let stderr = String::from_utf8(out.stderr).unwrap();
        assert_eq!(stderr.lines().count(), 1, "{args:?}: {stderr}");
        assert!(stderr.starts_with("error: "), "{stderr}");
    }
}

#[test]
fn malformed_annotation_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"image\": 3}").unwrap();
    let out = spinekpt(&[
        "plot",
        "--image",
        "a.pgm",
        "--annotation",
        s(&bad),
        "--out",
        s(&dir.path().join("a.svg")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed annotation"));
}
