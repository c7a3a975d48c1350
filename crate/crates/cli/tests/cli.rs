use std::path::Path;
use std::process::{Command, Output};

fn charseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_charseg"))
        .args(args)
        .output()
        .expect("spawn charseg")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(out: &Path, seed: &str, count: &str, width: &str) -> Output {
    charseg(&[
        "synth",
        "--seed",
        seed,
        "--out",
        p(out),
        "--count",
        count,
        "--width",
        width,
        "--atlas-seed",
        "42",
    ])
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    assert_eq!(code(&synth(&a, "9", "5", "128")), 0);
    assert_eq!(code(&synth(&b, "9", "5", "128")), 0);
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b));
}

#[test]
fn synth_zero_count_writes_empty_manifest() {
    let t = tempfile::tempdir().unwrap();
    let out = synth(&t.path().join("d"), "1", "0", "128");
    assert_eq!(code(&out), 0);
    assert!(t.path().join("d/manifest.txt").exists());
}

#[test]
fn bad_arguments_exit_with_two() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(&t.path().join("d"), "1", "2", "500")), 2);
    assert_eq!(code(&charseg(&["synth", "--out", p(&t.path().join("e"))])), 2);
    assert_eq!(
        code(&charseg(&[
            "eval",
            "--data",
            p(&t.path().join("missing")),
            "--method",
            "proj"
        ])),
        2
    );
    assert_eq!(code(&charseg(&["eval", "--data", p(t.path()), "--method", "fcn"])), 2);
    let out = charseg(&["gradcheck", "--set", "no.such.key=1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_passes_and_detects_faults() {
    let out = charseg(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("PASS")).count(), 9);
    assert_eq!(code(&charseg(&["gradcheck", "--only", "conv2d", "--inject-fault"])), 1);
    let list = stdout(&charseg(&["gradcheck", "--list"]));
    assert!(list.lines().any(|l| l == "weighted_bce"));
}

#[test]
fn segment_blank_line_is_empty() {
    let t = tempfile::tempdir().unwrap();
    let img = t.path().join("blank.pgm");
    let mut bytes = b"P5\n64 48\n255\n".to_vec();
    bytes.extend(std::iter::repeat_n(255u8, 64 * 48));
    std::fs::write(&img, bytes).unwrap();
    let ov = t.path().join("ov.pgm");
    let out = charseg(&["segment", "--image", p(&img), "--method", "proj", "--overlay", p(&ov)]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "[]");
    assert!(std::fs::read(&ov).unwrap().starts_with(b"P5\n64 48\n255\n"));
}

#[test]
fn eval_reports_and_gates() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    assert_eq!(code(&synth(&d, "3", "4", "256")), 0);
    let csv = t.path().join("r.csv");
    let out = charseg(&["eval", "--data", p(&d), "--method", "oracle", "--out", p(&csv)]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("mean_acc=1.0000"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("sample_")).count(), 4);
    let gated = charseg(&["eval", "--data", p(&d), "--method", "proj", "--min-acc", "1.01"]);
    assert_eq!(code(&gated), 1);
}

#[test]
fn short_training_is_reproducible_and_usable() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    assert_eq!(code(&synth(&d, "4", "4", "64")), 0);
    let run = |name: &str| {
        let ck = t.path().join(name);
        let out = charseg(&[
            "train",
            "--data",
            p(&d),
            "--out",
            p(&ck),
            "--seed",
            "7",
            "--iters",
            "3",
            "--batch",
            "2",
            "--width",
            "64",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(ck).unwrap()
    };
    assert_eq!(run("a.ckpt"), run("b.ckpt"));
    let missing_seed = charseg(&["train", "--data", p(&d), "--out", p(&t.path().join("c"))]);
    assert_eq!(code(&missing_seed), 2);

    let ck = t.path().join("a.ckpt");
    let eval = charseg(&["eval", "--data", p(&d), "--method", "fcn", "--model", p(&ck)]);
    assert_eq!(code(&eval), 0);
    let img = d.join("sample_00000.pgm");
    let seg = charseg(&["segment", "--image", p(&img), "--method", "fcn", "--model", p(&ck)]);
    assert_eq!(code(&seg), 0);
    assert!(stdout(&seg).trim().starts_with('['));
}
