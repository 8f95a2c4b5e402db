use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wound_unet::data::{load_gray, load_manifest, ClassMap};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wound-unet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let out = run(&[
        "synth-data",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join("manifest.csv")
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in ["train", "eval", "predict", "gradcheck", "synth-data"] {
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["train", "--config", "x.cfg"])), 1);
    assert_eq!(code(&run(&["bogus"])), 1);
    assert_eq!(code(&run(&["synth-data", "--n", "many", "--out", "x"])), 1);
}

#[test]
fn synth_data_layout_and_reproducibility() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let manifest = synth(a.path(), 4, 11);
    synth(b.path(), 4, 11);
    assert_eq!(files_in(&a.path().join("images")).len(), 16);
    assert_eq!(files_in(&a.path().join("masks")).len(), 16);
    let text = fs::read_to_string(&manifest).unwrap();
    assert_eq!(text.lines().count(), 17);
    assert_eq!(text.lines().next(), Some("image_path,mask_path,class_name"));
    for sub in ["images", "masks"] {
        for (x, y) in files_in(&a.path().join(sub)).iter().zip(files_in(&b.path().join(sub))) {
            assert_eq!(fs::read(x).unwrap(), fs::read(&y).unwrap(), "{}", x.display());
        }
    }
    assert_eq!(text, fs::read_to_string(b.path().join("manifest.csv")).unwrap());
    let ds = load_manifest(&manifest).unwrap();
    assert_eq!(ds.len(), 16);
    for c in 0..4 {
        assert_eq!(ds.samples.iter().filter(|s| s.label == c).count(), 4);
    }
}

#[test]
fn synth_into_unwritable_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    fs::write(&file, b"x").unwrap();
    let out = run(&["synth-data", "--n", "1", "--out", file.join("sub").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn train_with_missing_manifest_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "epochs = 1\n").unwrap();
    let missing = dir.path().join("nowhere.csv");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--manifest",
        missing.to_str().unwrap(),
        "--out",
        dir.path().join("m.wunt").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nowhere.csv"), "{}", stderr(&out));
}

#[test]
fn bad_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), 2, 1);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "epochs = 1\nmomentum = 0.9\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("m.wunt").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("momentum"));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), 2, 3);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "epochs = 2\nbatch_size = 4\nseed = 5\n").unwrap();
    let ckpt = dir.path().join("model.wunt");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(ckpt.exists());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let csv = fs::read_to_string(dir.path().join("model.wunt.epochs.csv")).unwrap();
    assert_eq!(stdout, csv);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,cls_loss,seg_loss,total_loss,seconds");
    assert_eq!(lines.len(), 3);
    for row in &lines[1..] {
        let f: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(f.len(), 5);
        assert_eq!(f[3], f[1] + f[2]);
    }

    let eval = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--split",
        "train",
    ]);
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    let fields = report.as_object().unwrap();
    assert_eq!(fields.len(), 6);
    for key in [
        "accuracy",
        "f1_classification",
        "dice_mean",
        "precision_seg",
        "recall_seg",
        "f1_seg",
    ] {
        let v = fields[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }

    // Two samples per class with a 0.2 fraction rounds to an empty validation split.
    let val = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--split",
        "val",
    ]);
    assert_eq!(code(&val), 1);

    let image = dir.path().join("data/images/leg_ulcer_001.png");
    let mask = dir.path().join("pred.png");
    let pred = run(&[
        "predict",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--out",
        mask.to_str().unwrap(),
    ]);
    assert_eq!(code(&pred), 0, "{}", stderr(&pred));
    let json: serde_json::Value = serde_json::from_slice(&pred.stdout).unwrap();
    assert!(ClassMap::NAMES.contains(&json["class"].as_str().unwrap()));
    let probs = json["probabilities"].as_object().unwrap();
    assert_eq!(probs.len(), 4);
    let total: f64 = probs.values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    let png = load_gray(&mask).unwrap();
    assert_eq!(png.dimensions(), (128, 128));
    assert!(png.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));

    let junk = dir.path().join("junk.wunt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let bad = run(&[
        "eval",
        "--ckpt",
        junk.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(code(&bad), 1);
    assert!(stderr(&bad).contains("magic"), "{}", stderr(&bad));
}

#[test]
fn predict_rejects_undecodable_image() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), 2, 4);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "epochs = 1\nbatch_size = 8\n").unwrap();
    let ckpt = dir.path().join("m.wunt");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let fake = dir.path().join("fake.png");
    fs::write(&fake, b"plain text").unwrap();
    let pred = run(&[
        "predict",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--image",
        fake.to_str().unwrap(),
        "--out",
        dir.path().join("o.png").to_str().unwrap(),
    ]);
    assert_eq!(code(&pred), 1);
    assert!(stderr(&pred).contains("fake.png"));
}

#[test]
fn gradcheck_passes_and_lists_each_layer_once() {
    let out = run(&["gradcheck", "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    for layer in [
        "conv2d",
        "convtranspose2d",
        "maxpool2d",
        "relu",
        "linear",
        "concat",
        "cross_entropy",
        "bce_with_logits",
        "network",
    ] {
        let n = text
            .lines()
            .filter(|l| l.split_whitespace().next() == Some(layer))
            .count();
        assert_eq!(n, 1, "{layer}\n{text}");
    }
}
