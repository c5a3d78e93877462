use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use capsdbn::checkpoint::Checkpoint;

const SMALL: &str = "seed = 5\nsynth.per_category = 6\nearly_stop.max_epochs = 2\n\
                     dbn.epochs_per_layer = 1\nfusion.epochs = 5\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_capsdbn"))
}

fn capsdbn(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(text.trim_end().lines().count(), 1, "expected one stderr line, got {text:?}");
    text.trim_end().to_string()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

struct Run {
    dir: PathBuf,
    cfg: PathBuf,
}

impl Run {
    fn new(dir: &Path) -> Self {
        let cfg = dir.join("small.cfg");
        std::fs::write(&cfg, SMALL).unwrap();
        Self { dir: dir.to_path_buf(), cfg }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn step(&self, args: &[&str]) -> Output {
        let mut all = vec!["--config", s(&self.cfg)];
        all.extend_from_slice(args);
        ok(capsdbn(&all))
    }

    fn synth_and_preprocess(&self) {
        self.step(&["synth", "--out", s(&self.p("data"))]);
        self.step(&["preprocess", "--manifest", s(&self.p("data/manifest.csv")), "--out", s(&self.p("archive"))]);
    }

    fn train(&self) {
        let a = self.p("archive");
        self.step(&["pretrain-dbn", "--archive", s(&a), "--out", s(&self.p("dbn"))]);
        self.step(&["train-caps", "--archive", s(&a), "--out", s(&self.p("caps"))]);
        self.step(&[
            "train-fusion", "--archive", s(&a),
            "--caps", s(&self.p("caps/caps.cblf")),
            "--dbn", s(&self.p("dbn/dbn.cblf")),
            "--out", s(&self.p("fusion")),
        ]);
    }

    fn model_args(&self) -> Vec<String> {
        ["--caps", "caps/caps.cblf", "--dbn", "dbn/dbn.cblf", "--fusion", "fusion/fusion.cblf"]
            .iter()
            .enumerate()
            .map(|(i, a)| if i % 2 == 0 { a.to_string() } else { s(&self.p(a)).to_string() })
            .collect()
    }

    fn evaluate(&self, out: &str) {
        let mut args = vec!["evaluate".to_string(), "--archive".into(), s(&self.p("archive")).into()];
        args.extend(self.model_args());
        args.extend(["--out".to_string(), s(&self.p(out)).into()]);
        ok(capsdbn(&args.iter().map(String::as_str).collect::<Vec<_>>()));
    }
}

#[test]
fn full_pipeline_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<Run> = ["a", "b"]
        .iter()
        .map(|n| {
            let d = tmp.path().join(n);
            std::fs::create_dir_all(&d).unwrap();
            Run::new(&d)
        })
        .collect();
    for r in &runs {
        r.synth_and_preprocess();
        r.train();
        r.evaluate("eval");
    }
    for rel in [
        "data/manifest.csv",
        "archive/index.csv",
        "caps/curves.csv",
        "fusion/curves.csv",
        "dbn/dbn_errors.csv",
        "caps/caps.cblf",
        "eval/metrics.csv",
        "eval/confusion.csv",
        "eval/referral.csv",
        "eval/auc.csv",
    ] {
        assert_eq!(std::fs::read(runs[0].p(rel)).unwrap(), std::fs::read(runs[1].p(rel)).unwrap(), "{rel}");
    }
    let curves = std::fs::read_to_string(runs[0].p("caps/curves.csv")).unwrap();
    assert!(curves.starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n"));
    let metrics = std::fs::read_to_string(runs[0].p("eval/metrics.csv")).unwrap();
    assert!(metrics.starts_with("category,precision,recall,f1,support\n"));
    assert_eq!(metrics.lines().count(), 6);

    let r = &runs[0];
    let mut args = vec!["predict".to_string()];
    args.extend(r.model_args());
    let images = [r.p("data/images/synth-c0-0000.png"), r.p("data/images/synth-c4-0001.png")];
    args.extend(images.iter().map(|p| s(p).to_string()));
    let out = ok(capsdbn(&args.iter().map(String::as_str).collect::<Vec<_>>()));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("path,category,referral,p_Lesion not found,"));
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 8);
        let total: f64 = fields[3..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-5, "{line}");
    }
}

#[test]
fn validation_images_do_not_affect_whitening() {
    let tmp = tempfile::tempdir().unwrap();
    let r = Run::new(tmp.path());
    r.synth_and_preprocess();
    let before = std::fs::read(r.p("archive/whitening.cblf")).unwrap();
    let index = std::fs::read_to_string(r.p("archive/index.csv")).unwrap();
    let val_sources: Vec<&str> = index
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(1) == Some("validation"))
        .map(|l| l.split(',').nth(3).unwrap())
        .collect();
    assert!(!val_sources.is_empty());
    let noise = capsdbn_core::Tensor::<f32>::from_fn(&[3, 32, 32], |i| (i % 7) as f32 / 6.0);
    for src in &val_sources {
        capsdbn::imageio::write_png(&r.p("data").join(src), &noise).unwrap();
    }
    r.step(&["preprocess", "--manifest", s(&r.p("data/manifest.csv")), "--out", s(&r.p("archive2"))]);
    assert_eq!(std::fs::read(r.p("archive2/whitening.cblf")).unwrap(), before);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let r = Run::new(tmp.path());
    r.step(&["synth", "--out", s(&r.p("a"))]);
    r.step(&["--seed", "6", "synth", "--out", s(&r.p("b"))]);
    let a = std::fs::read(r.p("a/images/synth-c0-0000.png")).unwrap();
    let b = std::fs::read(r.p("b/images/synth-c0-0000.png")).unwrap();
    assert_ne!(a, b);
    let cfg = std::fs::read_to_string(r.p("b/run.cfg")).unwrap();
    assert!(cfg.contains("seed = 6"), "{cfg}");
}

#[test]
fn usage_errors_exit_2() {
    let out = capsdbn(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[usage]: "));
    let out = capsdbn(&["synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("--out"));
    assert!(capsdbn(&["--help"]).status.success());
}

#[test]
fn missing_config_file_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.cfg");
    let out = capsdbn(&["--config", s(&missing), "synth", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(4));
    let line = stderr_line(&out);
    assert!(line.starts_with("error[io]: ") && line.contains("nope.cfg"), "{line}");
}

#[test]
fn geometry_violations_name_keys_at_startup() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "dbn.l1.filter_extent = 4\n").unwrap();
    let out = capsdbn(&["--config", s(&cfg), "synth", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    let line = stderr_line(&out);
    assert!(line.starts_with("error[geometry]: "), "{line}");
    assert!(line.contains("dbn.l1.pool_window") && line.contains("dbn.l1.filter_extent"), "{line}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn malformed_manifest_row_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let r = Run::new(tmp.path());
    r.step(&["synth", "--out", s(&r.p("data"))]);
    let manifest = r.p("data/manifest.csv");
    let mut text = std::fs::read_to_string(&manifest).unwrap();
    text.push_str("images/extra.png,Not a category\n");
    std::fs::write(&manifest, &text).unwrap();
    let line_no = text.lines().count();
    let out = capsdbn(&["--config", s(&r.cfg), "preprocess", "--manifest", s(&manifest), "--out", s(&r.p("arch"))]);
    assert_eq!(out.status.code(), Some(5));
    let line = stderr_line(&out);
    assert!(line.starts_with("error[manifest]: ") && line.contains(&format!(":{line_no}:")), "{line}");
}

#[test]
fn checkpoint_version_mismatch_exits_6() {
    let tmp = tempfile::tempdir().unwrap();
    let r = Run::new(tmp.path());
    r.synth_and_preprocess();
    r.train();
    let path = r.p("fusion/fusion.cblf");
    let mut bytes = std::fs::read(&path).unwrap();
    assert!(Checkpoint::from_bytes(&bytes).is_ok());
    bytes[4] = 9;
    std::fs::write(&path, &bytes).unwrap();
    let mut args = vec!["predict".to_string()];
    args.extend(r.model_args());
    args.push(s(&r.p("data/images/synth-c0-0000.png")).to_string());
    let out = capsdbn(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(6));
    let line = stderr_line(&out);
    assert!(line.starts_with("error[checkpoint]: ") && line.contains("version"), "{line}");
}
