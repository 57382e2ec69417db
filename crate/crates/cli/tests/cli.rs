use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn glyphprompt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glyphprompt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fonts_dir(which: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../assets/fonts")
        .join(which)
}

fn fonts() -> PathBuf {
    fonts_dir("heldout")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: &str) {
    let out = glyphprompt(&[
        "synth",
        "--seed",
        "9",
        "--count",
        count,
        "--fonts",
        s(&fonts()),
        "--out",
        s(dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_build_annotate_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "3");

    let bank = tmp.path().join("bank.bin");
    let (manifest, images, gt) = (
        data.join("manifest.json"),
        data.join("images"),
        data.join("gt"),
    );
    let out = glyphprompt(&[
        "glyphs",
        "build",
        "--fonts",
        s(&fonts_dir("bank")),
        "--out",
        s(&bank),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(bank.exists());

    for (name, extra) in [
        ("corrupt", ["--corrupt", "fill-holes,truncate"]),
        ("merge", ["--merge-rate", "0.3"]),
    ] {
        let pred = tmp.path().join(name);
        #[rustfmt::skip]
        let mut args = vec![
            "annotate",
            "--manifest", s(&manifest),
            "--images", s(&images),
            "--bank", s(&bank),
            "--backend", "oracle",
            "--gt", s(&gt),
            "--threads", "2",
            "--out", s(&pred),
        ];
        args.extend(extra);
        let out = glyphprompt(&args);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(pred.join("report.json").exists());

        let out = glyphprompt(&["eval", "--pred", s(&pred), "--gt", s(&gt)]);
        assert!(out.status.success());
        let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(summary["images"], 3);
        assert!(
            summary["fg_iou"].as_f64().unwrap() > 0.95,
            "{name}: {summary}"
        );
    }
}

#[test]
fn failed_words_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "1");
    #[rustfmt::skip]
    let out = glyphprompt(&[
        "annotate",
        "--manifest", s(&data.join("manifest.json")),
        "--images", s(&data.join("images")),
        "--fonts", s(&fonts()),
        "--backend", "remote",
        "--endpoint", "http://127.0.0.1:9",
        "--out", s(&tmp.path().join("pred")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    #[rustfmt::skip]
    let out = glyphprompt(&[
        "annotate",
        "--manifest", s(&tmp.path().join("missing.json")),
        "--images", s(tmp.path()),
        "--fonts", s(&fonts()),
        "--backend", "oracle",
        "--gt", s(tmp.path()),
        "--out", s(&tmp.path().join("pred")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn backend_flags_are_checked() {
    let out = glyphprompt(&[
        "annotate",
        "--manifest",
        "m",
        "--images",
        "i",
        "--fonts",
        "f",
        "--backend",
        "remote",
        "--out",
        "o",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--endpoint"));
}
