use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vitse::checkpoint::Checkpoint;
use vitse::pgm::read_pgm;

/// Drops augmentation and runs 200 steps on 30 images: enough to fit them all.
const OVERFIT: &str = "\
# memorize a small synthetic set
preset = toy
synth_per_class = 10
synth_valid_per_class = 0
mixup = off
cutout = off
flip_p = 0
grayscale_p = 0
jitter_p = 0
learning_rate = 0.001
weight_decay = 0
epochs = 100
";

fn vitse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vitse")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Width, height and pixels of a PGM file.
fn pgm(path: &Path) -> (usize, usize, Vec<u8>) {
    let (w, h, _, pixels) = read_pgm(fs::File::open(path).unwrap()).unwrap();
    (w, h, pixels)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--out", p(dir), "--epochs", "2",
        "--set", "synth_per_class=8", "--set", "synth_valid_per_class=2",
    ];
    args.extend_from_slice(extra);
    vitse(&args)
}

fn fer_row(label: usize, value: u8, usage: &str) -> String {
    format!("{label},{},{usage}\n", vec![value.to_string(); 48 * 48].join(" "))
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&vitse(&[])), 1);
    assert_eq!(code(&vitse(&["fly"])), 1);
    assert_eq!(code(&vitse(&["train", "--se", "maybe"])), 1);
    assert_eq!(code(&vitse(&["--help"])), 0);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "# comment\nepochs = 1\nlearning_rat = 0.1\n").unwrap();
    let out = vitse(&["train", "--config", p(&conf), "--out", p(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("bad.conf:3"), "{}", stderr(&out));
    assert!(stderr(&out).contains("learning_rat"));
    let out = vitse(&["train", "--set", "colour=blue", "--out", p(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("final.vse").exists());
}

#[test]
fn invalid_model_fails_before_any_computation() {
    let dir = tempfile::tempdir().unwrap();
    let out = vitse(&["gradcheck", "--set", "heads=3", "--out", p(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("heads"), "{}", stderr(&out));
    assert!(!dir.path().join("gradcheck.log").exists());
}

#[test]
fn gradcheck_passes_and_logs_every_group() {
    let dir = tempfile::tempdir().unwrap();
    let out = vitse(&["gradcheck", "--seed", "4", "--out", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = fs::read_to_string(dir.path().join("gradcheck.log")).unwrap();
    assert!(log.starts_with("# resolved configuration\n"));
    assert!(log.contains("rng_seed = 4"));
    assert!(log.contains("se.expand.weight"));
    assert!(!log.contains("FAIL"));
}

#[test]
fn impossible_gradcheck_tolerance_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = vitse(&["gradcheck", "--set", "gradcheck_tolerance=1e-30", "--out", p(dir.path())]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn zero_epochs_writes_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = vitse(&["train", "--epochs", "0", "--out", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = Checkpoint::load(&dir.path().join("final.vse")).unwrap();
    assert_eq!(ckpt.step, 0);
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics, "epoch,train_loss,valid_accuracy\n");
}

#[test]
fn same_seed_gives_identical_outputs() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        assert_eq!(code(&small_train(dir.path(), &["--seed", "5"])), 0);
    }
    assert_eq!(code(&small_train(c.path(), &["--seed", "6"])), 0);
    for file in ["final.vse", "epoch_001.vse", "metrics.csv"] {
        let read = |d: &tempfile::TempDir| fs::read(d.path().join(file)).unwrap();
        assert_eq!(read(&a), read(&b), "{file}");
        if file != "metrics.csv" || read(&a).len() > 40 {
            assert_ne!(read(&a), read(&c), "{file}");
        }
    }
    let metrics = fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
    assert_eq!(lines[2].split(',').count(), 3);
}

#[test]
fn flags_override_the_config_file_and_the_log_echoes_the_result() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "epochs = 7\nrng_seed = 1\nsynth_per_class = 4\nsynth_valid_per_class = 0\n").unwrap();
    let out = vitse(&["train", "--config", p(&conf), "--epochs", "1", "--se", "off", "--out", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = fs::read_to_string(dir.path().join("train.log")).unwrap();
    for line in ["epochs = 1", "rng_seed = 1", "se_enabled = false", "synth_per_class = 4"] {
        assert!(log.lines().any(|l| l == line), "{line} missing from\n{log}");
    }
    assert_eq!(String::from_utf8_lossy(&out.stdout), log);
    let ckpt = Checkpoint::load(&dir.path().join("final.vse")).unwrap();
    assert!(!ckpt.train.se_enabled);
    assert!(ckpt.tensors.iter().all(|(n, _)| !n.starts_with("se.")));
}

#[test]
fn missing_data_and_checkpoints_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = vitse(&["train", "--data", "/nonexistent/fer.csv", "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
    let out = vitse(&["eval", "--checkpoint", "/nonexistent/model.vse", "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("model.vse"));
    let garbage = dir.path().join("garbage.vse");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(code(&vitse(&["eval", "--checkpoint", p(&garbage), "--out", p(dir.path())])), 2);
    // no checkpoint named at all is a usage problem
    assert_eq!(code(&vitse(&["eval", "--out", p(dir.path())])), 1);
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fer.csv");
    fs::write(&csv, format!("emotion,pixels,Usage\n{}9,1 2,Training\n", fer_row(0, 3, "Training"))).unwrap();
    let out = vitse(&["train", "--data", p(&csv), "--set", "num_classes=7", "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn seven_class_confusion_has_a_header_and_seven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fer.csv");
    let rows: String = (0..7).map(|k| fer_row(k, (k * 30) as u8, "Training")).collect();
    fs::write(&csv, format!("emotion,pixels,Usage\n{rows}")).unwrap();
    let train = vitse(&["train", "--data", p(&csv), "--set", "num_classes=7", "--epochs", "1", "--out", p(dir.path())]);
    assert_eq!(code(&train), 0, "{}", stderr(&train));
    let ckpt = dir.path().join("final.vse");
    let out = vitse(&["eval", "--checkpoint", p(&ckpt), "--data", p(&csv), "--out", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let confusion = fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
    let lines: Vec<&str> = confusion.lines().collect();
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[0], "angry,disgust,fear,happy,sad,surprise,neutral");
    let total: usize = lines[1..].iter().flat_map(|l| l.split(',')).map(|c| c.parse::<usize>().unwrap()).sum();
    assert_eq!(total, 7);
    // a 3-class checkpoint cannot score 7-class data
    let small = tempfile::tempdir().unwrap();
    assert_eq!(code(&vitse(&["train", "--epochs", "0", "--out", p(small.path())])), 0);
    let three = small.path().join("final.vse");
    assert_eq!(code(&vitse(&["eval", "--checkpoint", p(&three), "--data", p(&csv), "--out", p(small.path())])), 2);
}

#[test]
fn overfit_toy_model_scores_a_diagonal_confusion() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("overfit.conf");
    fs::write(&conf, OVERFIT).unwrap();
    let out = vitse(&["train", "--config", p(&conf), "--seed", "0", "--out", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = dir.path().join("final.vse");
    let out = vitse(&["eval", "--config", p(&conf), "--checkpoint", p(&ckpt), "--out", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("samples 30 accuracy 1.000000"));
    let confusion = fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
    assert_eq!(confusion, "class0,class1,class2\n10,0,0\n0,10,0\n0,0,10\n");
}

#[test]
fn synthetic_export_and_attention_maps() {
    let dir = tempfile::tempdir().unwrap();
    let export = dir.path().join("faces");
    let out = small_train(dir.path(), &["--set", &format!("synth_export={}", p(&export))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut names: Vec<String> = fs::read_dir(&export).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    // 8 train and 2 valid images per class
    assert_eq!(names.len(), 30);
    for k in 0..3 {
        for i in 0..10 {
            assert!(names.contains(&format!("{k}_{i}.pgm")), "{k}_{i}.pgm");
        }
    }
    let (w, h, _) = pgm(&export.join("1_0.pgm"));
    assert_eq!((w, h), (16, 16));

    let maps = dir.path().join("maps");
    let ckpt = dir.path().join("final.vse");
    let image = export.join("2_3.pgm");
    let out = vitse(&["attnmap", "--checkpoint", p(&ckpt), "--image", p(&image), "--out", p(&maps)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for file in ["attn_layer1.pgm", "attn_layer2.pgm", "attn_rollout.pgm"] {
        let (w, h, pixels) = pgm(&maps.join(file));
        assert_eq!((w, h), (16, 16), "{file}");
        // nearest-neighbour upscaling of a 4x4 grid
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(pixels[y * 16 + x], pixels[(y / 4 * 4) * 16 + x / 4 * 4]);
            }
        }
    }
    let out = vitse(&["attnmap", "--checkpoint", p(&ckpt), "--image", "/nonexistent.pgm", "--out", p(&maps)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn warm_start_copies_matching_tensors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_train(dir.path(), &["--se", "off"])), 0);
    let base = dir.path().join("final.vse");
    let next = dir.path().join("next");
    let out = vitse(&["train", "--init", p(&base), "--epochs", "0", "--se", "on", "--out", p(&next)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = fs::read_to_string(next.join("train.log")).unwrap();
    assert!(log.contains("fresh: [se.reduce.weight, se.reduce.bias, se.expand.weight, se.expand.bias]"), "{log}");
    let a = Checkpoint::load(&base).unwrap();
    let b = Checkpoint::load(&next.join("final.vse")).unwrap();
    for (name, t) in &a.tensors {
        let copied = &b.tensors.iter().find(|(n, _)| n == name).unwrap().1;
        assert_eq!(copied, t, "{name}");
    }
}
