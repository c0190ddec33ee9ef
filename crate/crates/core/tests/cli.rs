//! End-to-end runs of the subcommands on small synthetic IDX files.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sefnet::cli::{run_with, EXIT_DATA, EXIT_OK, EXIT_USAGE, EXIT_VERIFY};
use sefnet::data::Dataset;

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut argv = vec!["sefnet"];
    argv.extend_from_slice(args);
    let code = run_with(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes `train-*` IDX files with blob images whose position encodes the label.
fn write_idx(dir: &Path, count: usize, seed: u64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut imgs = Vec::new();
    for v in [0x0803u32, count as u32, 28, 28] {
        imgs.extend_from_slice(&v.to_be_bytes());
    }
    let mut labels = Vec::new();
    for v in [0x0801u32, count as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    for i in 0..count {
        let label = (i % 10) as u8;
        let (cy, cx) = (6 + (label as usize / 5) * 14, 4 + (label as usize % 5) * 5);
        for y in 0..28usize {
            for x in 0..28usize {
                let d2 = (y as f64 - cy as f64).powi(2) + (x as f64 - cx as f64).powi(2);
                let v = 255.0 * (-d2 / 8.0).exp() + r.gen_range(0.0..20.0);
                imgs.push(v.min(255.0) as u8);
            }
        }
        labels.push(label);
    }
    std::fs::create_dir_all(dir).unwrap();
    std::fs::File::create(dir.join("train-images-idx3-ubyte")).unwrap().write_all(&imgs).unwrap();
    std::fs::File::create(dir.join("train-labels-idx1-ubyte")).unwrap().write_all(&labels).unwrap();
}

#[test]
fn prepare_is_deterministic_and_reports_histograms() {
    let t = tempfile::tempdir().unwrap();
    let src = t.path().join("mnist");
    write_idx(&src, 120, 1);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for dir in [&a, &b] {
        let (code, out) = run(&["prepare", "--mnist-dir", p(&src), "--out", p(dir), "--splits", "42,21,21", "--seed", "3"]);
        assert_eq!(code, EXIT_OK, "{out}");
        assert!(out.contains("train 42 sha256="));
        assert_eq!(out.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 21);
    }
    for f in ["train.msc", "val.msc", "test.msc", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let train = Dataset::load(a.join("train.msc")).unwrap();
    assert!(train.histogram().values().all(|&c| c == 2));
    let cfg = std::fs::read_to_string(a.join("config.txt")).unwrap();
    assert!(cfg.contains("seed=3") && cfg.contains("splits=42,21,21"));

    let c = t.path().join("c");
    run(&["prepare", "--mnist-dir", p(&src), "--out", p(&c), "--splits", "42,21,21", "--seed", "4"]);
    assert_ne!(std::fs::read(a.join("train.msc")).unwrap(), std::fs::read(c.join("train.msc")).unwrap());
}

#[test]
fn single_resolution_passes_sources_through() {
    let t = tempfile::tempdir().unwrap();
    let src = t.path().join("mnist");
    write_idx(&src, 20, 2);
    let out = t.path().join("d");
    let (code, _) = run(&["prepare", "--mnist-dir", p(&src), "--out", p(&out), "--splits", "10,5,5", "--scales", "28"]);
    assert_eq!(code, EXIT_OK);
    let bytes = std::fs::read(src.join("train-images-idx3-ubyte")).unwrap();
    for s in Dataset::load(out.join("train.msc")).unwrap().samples {
        assert_eq!(s.resolution, 28);
        let i = s.source_index as usize;
        let raw = &bytes[16 + i * 784..16 + (i + 1) * 784];
        assert!(raw.iter().zip(&s.image).all(|(&b, &v)| v == (b as f64 / 255.0) as f32));
    }
}

#[test]
fn config_files_are_overridden_by_flags_and_checked_for_typos() {
    let t = tempfile::tempdir().unwrap();
    let src = t.path().join("mnist");
    write_idx(&src, 30, 3);
    let cfg = t.path().join("prep.cfg");
    std::fs::write(&cfg, format!("# data\nmnist-dir = {}\nscales=8,28\nseed=5\nsplits=10,4,4\n", p(&src))).unwrap();
    let out = t.path().join("o");
    let (code, _) = run(&["prepare", "--config", p(&cfg), "--out", p(&out), "--seed", "6"]);
    assert_eq!(code, EXIT_OK);
    let echoed = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("seed=6") && echoed.contains("scales=8,28"), "{echoed}");
    assert_eq!(Dataset::load(out.join("train.msc")).unwrap().histogram().len(), 2);

    std::fs::write(&cfg, "sede=5\n").unwrap();
    assert_eq!(run(&["prepare", "--config", p(&cfg)]).0, EXIT_USAGE);
    std::fs::write(&cfg, "no equals sign\n").unwrap();
    assert_eq!(run(&["prepare", "--config", p(&cfg)]).0, EXIT_USAGE);
    assert_eq!(run(&["train", "--frobnicate"]).0, EXIT_USAGE);
    assert_eq!(run(&["train", "--precision", "f16", "--data", p(&out)]).0, EXIT_USAGE);
    assert_eq!(run(&["--help"]).0, EXIT_OK);
}

#[test]
fn missing_or_corrupt_data_exits_with_data_code() {
    let t = tempfile::tempdir().unwrap();
    let empty = t.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(run(&["prepare", "--mnist-dir", p(&empty), "--out", p(&t.path().join("x"))]).0, EXIT_DATA);
    assert_eq!(run(&["train", "--data", p(&empty), "--out", p(&t.path().join("r"))]).0, EXIT_DATA);
    std::fs::write(empty.join("test.msc"), b"MSC2\x01\0\0\0\0").unwrap();
    assert_eq!(run(&["eval", "--data", p(&empty), "--checkpoint", p(&empty.join("none.sefw"))]).0, EXIT_DATA);
    let src = t.path().join("mnist");
    write_idx(&src, 10, 4);
    let (code, _) = run(&["prepare", "--mnist-dir", p(&src), "--out", p(&t.path().join("y")), "--splits", "8,4,4"]);
    assert_eq!(code, EXIT_DATA);
}

#[test]
fn tiny_training_run_is_reproducible_and_evaluates() {
    let t = tempfile::tempdir().unwrap();
    let src = t.path().join("mnist");
    write_idx(&src, 80, 5);
    let data = t.path().join("data");
    let (code, _) = run(&["prepare", "--mnist-dir", p(&src), "--out", p(&data), "--splits", "42,21,17", "--scales", "8,12,16,20,24,28"]);
    assert_eq!(code, EXIT_OK);
    let mut ckpts = Vec::new();
    for name in ["r1", "r2"] {
        let dir = t.path().join(name);
        let (code, out) = run(&[
            "train", "--data", p(&data), "--out", p(&dir), "--epochs", "2", "--channels", "1,2",
            "--localities", "3", "--hidden", "8", "--batch-size", "8", "--lr", "0.01", "--seed", "1",
        ]);
        assert_eq!(code, EXIT_OK, "{out}");
        assert!(out.contains("epoch   0 train") && out.contains("final val accuracy"), "{out}");
        let log = std::fs::read_to_string(dir.join("train_log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 6);
        let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(first["epoch"], 0);
        ckpts.push(std::fs::read(dir.join("checkpoint.sefw")).unwrap());
    }
    assert_eq!(ckpts[0], ckpts[1]);

    let ck = t.path().join("r1/checkpoint.sefw");
    let (code, out) = run(&["eval", "--data", p(&data), "--checkpoint", p(&ck)]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("samples 17"), "{out}");
    let acc: f64 = out.lines().find_map(|l| l.strip_prefix("accuracy ")).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(out.lines().skip_while(|l| !l.starts_with("resolution")).skip(1).count(), 6);
    // a single container file also works
    let (code, _) = run(&["eval", "--data", p(&data.join("val.msc")), "--checkpoint", p(&ck)]);
    assert_eq!(code, EXIT_OK);
}

#[test]
fn verify_passes_and_negative_control_fails() {
    let t = tempfile::tempdir().unwrap();
    let report = t.path().join("report.json");
    let (code, out) = run(&["verify", "--scales", "8,10,12", "--trials", "3", "--probe-trials", "1", "--report", p(&report)]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.trim_end().ends_with("PASS"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(json["max"].as_f64().unwrap() <= 1e-10);

    let (code, out) = run(&["verify", "--scales", "8,10,12", "--trials", "3", "--probe-trials", "1", "--negative-control", "true"]);
    assert_eq!(code, EXIT_VERIFY, "{out}");
    assert!(out.contains("spatial-relu") && out.contains("FAIL"));

    let (code, out) = run(&["verify", "--scales", "8,10,12", "--trials", "2", "--probe-trials", "1", "--mode", "gaussian"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.contains("informational"));
}

#[test]
fn bench_prints_one_row_per_size() {
    let (code, out) = run(&["bench", "--sizes", "8,12", "--reps", "1", "--k", "0"]);
    assert_eq!(code, EXIT_OK);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "n,k,fft_ms,conv_ms,nonlin_ms,pool_ms");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("8,8,") && lines[2].starts_with("12,12,"));
}
