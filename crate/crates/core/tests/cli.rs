//! The `tsit` binary end to end: exit codes, determinism, artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tsit::data::{write_image, DataMode, DataSpec, ImageRecord};
use tsit::evaluation::EvalReport;
use tsit::Tensor;

const TINY: [&str; 14] = [
    "--set",
    "net.k=2",
    "--set",
    "net.base_width=8",
    "--set",
    "net.schedule=[16,32]",
    "--set",
    "net.d_base_width=8",
    "--set",
    "net.d_scales=2",
    "--set",
    "data.height=16",
    "--set",
    "data.width=16",
];

fn tsit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsit")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_tiny(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--preset", "desk-style-transfer", "--out", s(out), "--set", "train.steps=4"];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    tsit(&args)
}

#[test]
fn train_writes_artifacts_and_manifest_reruns_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = train_tiny(&a, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["manifest.toml", "metrics.tsv", "final.tsit"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    let metrics = fs::read_to_string(a.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 5, "header plus one line per step");

    let b = dir.path().join("b");
    let o = tsit(&["train", "--config", s(&a.join("manifest.toml")), "--out", s(&b)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(a.join("final.tsit")).unwrap(), fs::read(b.join("final.tsit")).unwrap());

    let c = dir.path().join("c");
    assert_eq!(code(&train_tiny(&c, &["--seed", "9"])), 0);
    let manifest = fs::read_to_string(c.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 9"), "{manifest}");
    assert_ne!(fs::read(a.join("final.tsit")).unwrap(), fs::read(c.join("final.tsit")).unwrap());
}

#[test]
fn resume_continues_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    assert_eq!(code(&train_tiny(&straight, &[])), 0);
    let half = dir.path().join("half");
    assert_eq!(code(&train_tiny(&half, &["--set", "train.steps=2"])), 0);
    let o = tsit(&[
        "train",
        "--config",
        s(&straight.join("manifest.toml")),
        "--resume",
        s(&half.join("final.tsit")),
        "--out",
        s(&half),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(straight.join("final.tsit")).unwrap(), fs::read(half.join("final.tsit")).unwrap());
}

#[test]
fn config_and_data_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train_tiny(&out, &["--set", "train.learning_rate=0.1"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let missing = dir.path().join("no-such-content");
    let o = train_tiny(
        &out,
        &[
            "--set",
            "data.source=\"directory\"",
            "--set",
            &format!("data.content_dir=\"{}\"", s(&missing)),
            "--set",
            &format!("data.style_dir=\"{}\"", s(dir.path())),
        ],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("no-such-content"), "{}", stderr(&o));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[net]\nk = 2\nbogus = 1\n").unwrap();
    assert_eq!(code(&tsit(&["train", "--config", s(&bad), "--out", s(&out)])), 2);
}

fn save(path: &Path, pixels: Tensor<f32>) {
    write_image(path, &ImageRecord::new(pixels, "fixture").unwrap()).unwrap();
}

fn fixtures(dir: &Path, n: usize, seed: u64) -> Vec<PathBuf> {
    fs::create_dir_all(dir).unwrap();
    let ds = DataSpec::synthetic(DataMode::Paired, n, 16, 16, seed).load().unwrap();
    ds.style
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let p = dir.join(format!("{i:02}.png"));
            save(&p, r.pixels);
            p
        })
        .collect()
}

#[test]
fn infer_is_deterministic_and_checks_extents() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&train_tiny(&run, &[])), 0);
    let ckpt = run.join("final.tsit");
    let imgs = fixtures(&dir.path().join("img"), 3, 4);
    let outs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("o{i}.png"))).collect();
    for o in &outs {
        let r = tsit(&[
            "infer",
            "--checkpoint",
            s(&ckpt),
            "--content",
            s(&imgs[0]),
            "--style",
            s(&imgs[1]),
            "--out",
            s(o),
            "--noise-seed",
            "3",
        ]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
    }
    assert_eq!(fs::read(&outs[0]).unwrap(), fs::read(&outs[1]).unwrap());

    let odd = dir.path().join("odd.png");
    save(&odd, Tensor::zeros(&[1, 3, 15, 15]).unwrap());
    let r = tsit(&["infer", "--checkpoint", s(&ckpt), "--content", s(&odd), "--style", s(&odd), "--out", s(&outs[0])]);
    assert_eq!(code(&r), 3, "{}", stderr(&r));
}

#[test]
fn eval_reports_zero_fid_on_identical_dirs_and_rejects_empty() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    fixtures(&a, 12, 2);
    let report = dir.path().join("report.txt");
    let o = tsit(&["eval", s(&a), s(&a), "--classifier-samples", "40", "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let parsed = EvalReport::parse(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(parsed.fid < 1e-6, "{}", parsed.fid);
    assert_eq!((parsed.n_generated, parsed.n_reference), (12, 12));
    assert!(parsed.is_mean >= 1.0);

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&tsit(&["eval", s(&empty), s(&a)])), 3);
}

#[test]
fn selftest_passes_and_names_injected_failures() {
    let o = tsit(&["selftest"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{out}");
    for suite in ["gradient:", "oracle:", "invariant:"] {
        assert!(out.contains(suite), "{out}");
    }
    let o = tsit(&["selftest", "--inject-conv-grad-fault"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAILED conv2d/"));
}

#[test]
fn desk_preset_trains_within_ten_minutes() {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let o = tsit(&["train", "--preset", "desk-style-transfer", "--out", s(dir.path()), "--log-every", "0"]);
    let took = started.elapsed();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 501);
    assert!(took < Duration::from_secs(600), "{took:?}");
}
