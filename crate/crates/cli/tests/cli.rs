use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lumenseg::data::{read_gray8, read_mask, synth_dataset, write_dataset, write_mask_png};
use lumenseg::metrics::{BinaryMask, MetricsReport};

const RUN_ROOT_ENV: &str = "LUMENSEG_RUN_ROOT";

fn lumenseg(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lumenseg"))
        .current_dir(cwd)
        .env(RUN_ROOT_ENV, cwd.join("runs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.unwrap().path()).collect(),
        Err(_) => Vec::new(),
    };
    v.sort();
    v
}

const TINY: &[&str] = &[
    "--preset",
    "custom",
    "--architecture",
    "simple-unet",
    "--base-filters",
    "2",
    "--kernel-size",
    "3",
    "--input-size",
    "32",
    "--batch-size",
    "2",
    "--learning-rate",
    "0.05",
    "--augment",
    "off",
];

fn train_tiny(cwd: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    lumenseg(cwd, &args)
}

fn write_synth(root: &Path, n: usize, size: usize) {
    let samples = synth_dataset(n, size, 3).unwrap().load_all().unwrap();
    write_dataset(&samples, root).unwrap();
}

#[test]
fn exp1_synthetic_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = lumenseg(dir.path(), &["train", "--preset", "exp1", "--synthetic", "16", "--epochs", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("runs/exp1-lumen-seed0");
    for f in ["manifest.ini", "best.ckpt", "last.ckpt", "train_log.csv", "split.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let manifest = fs::read_to_string(run.join("manifest.ini")).unwrap();
    for line in ["batch_size = 8", "optimizer = adam", "learning_rate = 0.000001", "epochs = 2", "synthetic = 16"] {
        assert!(manifest.contains(line), "{line}");
    }
}

#[test]
fn missing_mask_directory_exits_3_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ivus");
    write_synth(&data, 4, 32);
    fs::remove_dir_all(data.join("masks_media")).unwrap();
    let o = train_tiny(dir.path(), &["--data", data.to_str().unwrap(), "--epochs", "1"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("masks_media"), "{}", stderr(&o));
}

#[test]
fn invalid_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_file = dir.path().join("bad.ini");
    fs::write(&bad_file, "[train]\nbatch = 3\n").unwrap();
    for args in [
        vec!["train", "--synthetic", "4", "--kernel-size", "4"],
        vec!["train", "--synthetic", "4", "--input-size", "100"],
        vec!["train", "--synthetic", "4", "--set", "train.nope=1"],
        vec!["train", "--config", bad_file.to_str().unwrap(), "--synthetic", "4"],
        vec!["train", "--preset", "exp9"],
        vec!["train", "--preset", "exp2"],
        vec!["train", "--bogus-flag"],
    ] {
        let o = lumenseg(dir.path(), &args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    assert!(files(&dir.path().join("runs")).is_empty());
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(
        dir.path(),
        &["--synthetic", "6", "--epochs", "3", "--learning-rate", "1e300", "--clip-norm", "none"],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn manifest_reruns_to_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(dir.path(), &["--synthetic", "6", "--epochs", "2", "--seed", "5", "--run-dir", "a"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = dir.path().join("a");
    let manifest = a.join("manifest.ini");
    let o = lumenseg(
        dir.path(),
        &["train", "--config", manifest.to_str().unwrap(), "--run-dir", "b"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let b = dir.path().join("b");
    for f in ["best.ckpt", "last.ckpt", "train_log.csv", "split.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ma = fs::read_to_string(&manifest).unwrap().replace("= a/", "= b/").replace("run_dir = a", "run_dir = b");
    assert_eq!(ma, fs::read_to_string(b.join("manifest.ini")).unwrap());
}

#[test]
fn run_root_comes_from_the_environment_and_both_trains_two_models() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(dir.path(), &["--synthetic", "6", "--epochs", "1", "--target", "both"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("runs/custom-both-seed0");
    for t in ["lumen", "media"] {
        let m = fs::read_to_string(run.join(t).join("manifest.ini")).unwrap();
        assert!(m.contains(&format!("target = {t}")));
        assert!(run.join(t).join("best.ckpt").is_file());
    }
}

#[test]
fn resume_continues_to_the_same_log() {
    let dir = tempfile::tempdir().unwrap();
    let full = train_tiny(dir.path(), &["--synthetic", "6", "--epochs", "3", "--run-dir", "full"]);
    assert_eq!(code(&full), 0);
    let part = train_tiny(dir.path(), &["--synthetic", "6", "--epochs", "2", "--run-dir", "part"]);
    assert_eq!(code(&part), 0);
    // same run extended: only the epoch budget differs, so resuming is refused
    let o = train_tiny(dir.path(), &["--synthetic", "6", "--epochs", "3", "--run-dir", "part", "--resume"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = train_tiny(dir.path(), &["--synthetic", "6", "--epochs", "3", "--run-dir", "mid"]);
    assert_eq!(code(&o), 0);
    let o = train_tiny(dir.path(), &["--synthetic", "6", "--epochs", "3", "--run-dir", "mid", "--resume"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("resuming"));
    assert_eq!(
        fs::read(dir.path().join("full/train_log.csv")).unwrap(),
        fs::read(dir.path().join("mid/train_log.csv")).unwrap()
    );
}

#[test]
fn predict_writes_one_deterministic_mask_per_scan() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ivus");
    write_synth(&data, 5, 64);
    let o = train_tiny(dir.path(), &["--data", data.to_str().unwrap(), "--epochs", "1", "--run-dir", "run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = dir.path().join("run/best.ckpt");
    let before = files(&data.join("scans"));
    for out in ["p1", "p2"] {
        let o = lumenseg(
            dir.path(),
            &["predict", "--checkpoint", ckpt.to_str().unwrap(), "--images", data.to_str().unwrap(), "--out", out],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("synth_0000: "));
        assert!(stdout(&o).contains("predicted 5 masks"));
    }
    let p1 = files(&dir.path().join("p1"));
    assert_eq!(p1.len(), 5);
    for (a, s) in p1.iter().zip(&before) {
        assert_eq!(a.file_stem(), s.file_stem());
        assert_eq!(read_mask(a).unwrap().dims(), (32, 32));
        assert_eq!(fs::read(a).unwrap(), fs::read(dir.path().join("p2").join(a.file_name().unwrap())).unwrap());
    }
    assert_eq!(files(&data.join("scans")), before);

    let o = lumenseg(
        dir.path(),
        &["predict", "--checkpoint", ckpt.to_str().unwrap(), "--images", data.to_str().unwrap(), "--out", "p3", "--input-size", "64"],
    );
    assert_eq!(code(&o), 2);
    let o = lumenseg(
        dir.path(),
        &["predict", "--checkpoint", "nope.ckpt", "--images", data.to_str().unwrap(), "--out", "p3"],
    );
    assert_eq!(code(&o), 3);
}

fn mask_dir(dir: &Path, masks: &[(&str, &BinaryMask)]) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    for (stem, m) in masks {
        write_mask_png(&dir.join(format!("{stem}.png")), m).unwrap();
    }
    dir.to_path_buf()
}

/// Masks with prescribed intersection and union.
fn crafted(inter: usize, union: usize, side: usize) -> (BinaryMask, BinaryMask) {
    let mut a = BinaryMask::zeros(side, side);
    let mut b = BinaryMask::zeros(side, side);
    for k in 0..union {
        let (y, x) = (k / side, k % side);
        if k < inter || k % 2 == 0 {
            a.set(y, x, true);
        }
        if k < inter || k % 2 == 1 {
            b.set(y, x, true);
        }
    }
    (a, b)
}

#[test]
fn evaluate_reports_rows_averages_and_unmatched() {
    let dir = tempfile::tempdir().unwrap();
    let (p, t) = crafted(2168, 2355, 64);
    let disc = BinaryMask::from_fn(64, 64, |y, x| (y as i32 - 30).pow(2) + (x as i32 - 33).pow(2) < 200);
    let pred = mask_dir(&dir.path().join("pred"), &[("a", &p), ("b", &disc)]);
    let truth = mask_dir(&dir.path().join("truth"), &[("a", &t), ("b", &disc)]);
    let o = lumenseg(
        dir.path(),
        &["evaluate", "--pred", pred.to_str().unwrap(), "--truth", truth.to_str().unwrap(), "--out", "report.csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = MetricsReport::from_csv(&fs::read_to_string(dir.path().join("report.csv")).unwrap()).unwrap();
    let a = &report.rows[0];
    assert_eq!((a.image_id.as_str(), a.intersection_area, a.union_area), ("a", 2168, 2355));
    assert!((a.jaccard - 0.9205).abs() < 1e-4 && (a.dice - 0.9586).abs() < 1e-4);
    assert_eq!((report.rows[1].jaccard, report.rows[1].dice), (1.0, 1.0));
    assert!(fs::read_to_string(dir.path().join("report_summary.txt")).unwrap().contains("average jaccard"));

    // identical sets average to exactly one
    let o = lumenseg(
        dir.path(),
        &["evaluate", "--pred", truth.to_str().unwrap(), "--truth", truth.to_str().unwrap(), "--out", "same.csv"],
    );
    assert_eq!(code(&o), 0);
    let same = MetricsReport::from_csv(&fs::read_to_string(dir.path().join("same.csv")).unwrap()).unwrap();
    assert_eq!((same.average_jaccard, same.average_dice), (1.0, 1.0));

    // a truth stem without a prediction is listed and left out
    mask_dir(&truth, &[("c", &disc)]);
    let o = lumenseg(
        dir.path(),
        &["evaluate", "--pred", pred.to_str().unwrap(), "--truth", truth.to_str().unwrap(), "--out", "partial.csv"],
    );
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.contains("unmatched") && out.contains("c: no prediction"), "{out}");
    let partial = MetricsReport::from_csv(&fs::read_to_string(dir.path().join("partial.csv")).unwrap()).unwrap();
    assert_eq!(partial.rows.len(), 2);
    assert_eq!(partial.average_jaccard, report.average_jaccard);
}

#[test]
fn evaluate_resizes_truth_to_prediction_dims() {
    let dir = tempfile::tempdir().unwrap();
    let small = BinaryMask::from_fn(32, 32, |y, x| y < 16 && x >= 8);
    let big = BinaryMask::from_fn(64, 64, |y, x| y < 32 && x >= 16);
    let pred = mask_dir(&dir.path().join("pred"), &[("s", &small)]);
    let truth = mask_dir(&dir.path().join("truth"), &[("s", &big)]);
    let o = lumenseg(
        dir.path(),
        &["evaluate", "--pred", pred.to_str().unwrap(), "--truth", truth.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = MetricsReport::from_csv(&fs::read_to_string(dir.path().join("evaluation.csv")).unwrap()).unwrap();
    assert_eq!((r.rows[0].intersection_area, r.rows[0].union_area), (384, 384));
    // writing the report into an input directory is refused
    let o = lumenseg(
        dir.path(),
        &["evaluate", "--pred", "pred", "--truth", "truth", "--out", "pred/r.csv"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn summary_prints_census_and_totals() {
    let dir = tempfile::tempdir().unwrap();
    let total = |args: &[&str]| -> u64 {
        let o = lumenseg(dir.path(), args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let text = stdout(&o);
        let line = text.lines().find(|l| l.starts_with("total parameters: ")).unwrap();
        line["total parameters: ".len()..].parse().unwrap()
    };
    let vgg = total(&["summary", "--preset", "exp3", "--csv", "vgg.csv"]);
    assert!(vgg > 100_000_000);
    let o = lumenseg(dir.path(), &["summary", "--preset", "exp2"]);
    assert!(stdout(&o).contains("conv layers: 29"));
    let simple = total(&["summary", "--architecture", "simple-unet", "--base-filters", "16", "--kernel-size", "5"]);
    assert!(simple < vgg);
    assert!(fs::read_to_string(dir.path().join("vgg.csv")).unwrap().lines().count() > 29);
}

#[test]
fn augment_preview_is_deterministic_and_counts_panels() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["augment-preview", "--synthetic", "3", "--synthetic-size", "64", "--seed", "9"];
    let o = lumenseg(dir.path(), &[&common[..], &["-n", "0", "--out", "none"]].concat());
    assert_eq!(code(&o), 0);
    assert!(!dir.path().join("none").exists());
    for out in ["a", "b"] {
        let o = lumenseg(dir.path(), &[&common[..], &["-n", "4", "--out", out]].concat());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = files(&dir.path().join("a"));
    assert_eq!(a.len(), 8);
    for f in &a {
        let twin = dir.path().join("b").join(f.file_name().unwrap());
        assert_eq!(fs::read(f).unwrap(), fs::read(twin).unwrap());
    }
    let reseeded = ["augment-preview", "--synthetic", "3", "--synthetic-size", "64", "--seed", "10"];
    let o = lumenseg(dir.path(), &[&reseeded[..], &["-n", "4", "--out", "c"]].concat());
    assert_eq!(code(&o), 0);
    let differs = a.iter().any(|f| fs::read(f).unwrap() != fs::read(dir.path().join("c").join(f.file_name().unwrap())).unwrap());
    assert!(differs);
    let img = read_gray8(&a[1]).unwrap();
    assert_eq!((img.width, img.height), (192, 64));
}
