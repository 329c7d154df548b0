use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use catpose_core::learn::{decode_checkpoint, ModelConfig, TrainConfig, Trainer};
use catpose_core::synth::{read_dataset, write_predictions, Prediction};

fn catpose(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catpose"))
        .args(args)
        .env("CATPOSE_DATA_DIR", dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn small_dataset(dir: &Path, n: &str, seed: &str) -> PathBuf {
    let path = dir.join(format!("ds_{n}_{seed}.jsonl"));
    let p = path.to_str().unwrap();
    ok(&catpose(dir, &["synth", "--out", p, "--n-per-category", n, "--seed", seed, "--n-p", "16", "--n-m", "12"]));
    path
}

const SMALL_NET: &str = "c=4\nc_g=6\nhidden=6\nbatch_size=4\nepochs=1\n";

#[test]
fn synth_writes_counted_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_dataset(dir.path(), "2", "7");
    let b = small_dataset(dir.path(), "2", "7");
    let c = small_dataset(dir.path(), "2", "8");
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_ne!(text, std::fs::read_to_string(&c).unwrap());
    let records = text.lines().filter(|l| l.contains("\"kind\":\"instance\"")).count();
    assert_eq!(records, 12);
}

#[test]
fn synth_zero_instances_gives_valid_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_dataset(dir.path(), "0", "0");
    assert!(read_dataset(&path).unwrap().instances.is_empty());
}

#[test]
fn synth_defaults_to_data_dir_and_reports_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&catpose(dir.path(), &["synth", "--n-per-category", "1", "--n-p", "16", "--n-m", "12"]));
    assert!(out.starts_with("synth: 6 instances"), "{out}");
    assert!(dir.path().join("dataset.jsonl").is_file());
}

#[test]
fn ground_truth_predictions_score_one_and_empty_predictions_zero() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = small_dataset(dir.path(), "3", "1");
    let ds = read_dataset(&ds_path).unwrap();
    let gt: Vec<Prediction> = ds
        .instances
        .iter()
        .map(|i| Prediction { id: i.id, category: i.category.clone(), pose: i.gt_pose, size: i.gt_size })
        .collect();
    let pred_path = dir.path().join("gt.jsonl");
    write_predictions(&pred_path, &gt).unwrap();
    let report = dir.path().join("report.jsonl");
    let args = ["eval", "--dataset", ds_path.to_str().unwrap(), "--predictions", pred_path.to_str().unwrap(), "--out", report.to_str().unwrap()];
    let out = ok(&catpose(dir.path(), &args));
    assert!(out.contains("IoU25=1.000") && out.contains("10deg10cm=1.000"), "{out}");
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.lines().all(|l| l.contains("\"ap\":1.0")), "{text}");
    for kind in ["iou", "rotation", "translation"] {
        let csv = std::fs::read_to_string(dir.path().join(format!("report_{kind}.csv"))).unwrap();
        assert!(csv.starts_with("threshold,category,ap\n"));
    }

    write_predictions(&pred_path, &[]).unwrap();
    let out = ok(&catpose(dir.path(), &args));
    assert!(out.contains("IoU25=0.000") && out.contains("10deg10cm=0.000"), "{out}");
}

#[test]
fn unknown_prediction_ids_are_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = small_dataset(dir.path(), "1", "1");
    let ds = read_dataset(&ds_path).unwrap();
    let i = &ds.instances[0];
    let bad = vec![
        Prediction { id: 900, category: i.category.clone(), pose: i.gt_pose, size: i.gt_size },
        Prediction { id: 901, category: i.category.clone(), pose: i.gt_pose, size: i.gt_size },
    ];
    let pred_path = dir.path().join("bad.jsonl");
    write_predictions(&pred_path, &bad).unwrap();
    let out = catpose(dir.path(), &["eval", "--dataset", ds_path.to_str().unwrap(), "--predictions", pred_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("900,901"), "{err}");
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = catpose(dir.path(), &["eval", "--dataset", "/nonexistent/ds.jsonl", "--predictions", "/nonexistent/p.jsonl"]);
    assert_eq!(out.status.code(), Some(4));
    let out = catpose(dir.path(), &["synth", "--out", "/nonexistent/dir/ds.jsonl"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn zero_epochs_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = small_dataset(dir.path(), "1", "2");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL_NET).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    ok(&catpose(
        dir.path(),
        &["train", "--config", cfg.to_str().unwrap(), "--dataset", ds_path.to_str().unwrap(), "--out", ckpt.to_str().unwrap(), "--epochs", "0"],
    ));
    let (model, _) = decode_checkpoint(&std::fs::read(&ckpt).unwrap(), "m").unwrap();
    let ds = read_dataset(&ds_path).unwrap();
    let mc = ModelConfig { c: 4, c_g: 6, hidden: 6, n_m: 12, ..ModelConfig::default() };
    let init = Trainer::new(&ds, mc, TrainConfig { batch_size: 4, epochs: 0, ..TrainConfig::default() }).unwrap();
    assert_eq!(model, init.model);
    let csv = std::fs::read_to_string(dir.path().join("m.loss.csv")).unwrap();
    assert_eq!(csv, "step,l_z,l_d,l_g,l_corr,l_cd,l_entro,l_reg,total\n");
}

#[test]
fn training_is_reproducible_and_logs_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = small_dataset(dir.path(), "2", "3");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL_NET).unwrap();
    let mut outputs = Vec::new();
    for (k, fmt) in ["binary", "binary", "text"].iter().enumerate() {
        let ckpt = dir.path().join(format!("m{k}.ckpt"));
        let out = ok(&catpose(
            dir.path(),
            &["train", "--config", cfg.to_str().unwrap(), "--dataset", ds_path.to_str().unwrap(), "--out", ckpt.to_str().unwrap(), "--epochs", "2", "--format", fmt],
        ));
        assert!(out.starts_with("train: 12 instances, 6 steps"), "{out}");
        let csv = std::fs::read_to_string(dir.path().join(format!("m{k}.loss.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + 6);
        outputs.push((std::fs::read(&ckpt).unwrap(), csv));
    }
    assert_eq!(outputs[0], outputs[1]);
    let (bin, _) = decode_checkpoint(&outputs[0].0, "bin").unwrap();
    let (text, _) = decode_checkpoint(&outputs[2].0, "text").unwrap();
    assert_eq!(bin, text);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = small_dataset(dir.path(), "1", "4");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL_NET.replace("epochs=1", "epochs=3")).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let base = ["train", "--config", cfg.to_str().unwrap(), "--dataset", ds_path.to_str().unwrap(), "--out", ckpt.to_str().unwrap()];
    let out = ok(&catpose(dir.path(), &base));
    assert!(out.contains(", 6 steps"), "{out}");
    let mut args = base.to_vec();
    args.extend(["--epochs", "1"]);
    let out = ok(&catpose(dir.path(), &args));
    assert!(out.contains(", 2 steps"), "{out}");
}

#[test]
fn divergence_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = small_dataset(dir.path(), "1", "5");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL_NET.replace("epochs=1", "epochs=5\nlr_main=1e300")).unwrap();
    let out = catpose(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--dataset", ds_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn invalid_options_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = small_dataset(dir.path(), "1", "6");
    let out = catpose(dir.path(), &["train", "--dataset", ds_path.to_str().unwrap(), "--batch-size", "0"]);
    assert_eq!(out.status.code(), Some(3));
    let out = catpose(dir.path(), &["synth", "--categories", "teapot"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn checkpoint_eval_and_ablate_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = small_dataset(dir.path(), "5", "9");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL_NET).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let ds = ds_path.to_str().unwrap();
    ok(&catpose(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--dataset", ds, "--out", ckpt.to_str().unwrap(), "--holdout-every", "5"]));
    let preds = dir.path().join("pred.jsonl");
    let out = ok(&catpose(
        dir.path(),
        &["eval", "--dataset", ds, "--checkpoint", ckpt.to_str().unwrap(), "--holdout-every", "5", "--predictions-out", preds.to_str().unwrap()],
    ));
    assert!(out.contains("eval: 6 ground truths"), "{out}");
    assert!(dir.path().join("report.jsonl").is_file());

    let prefix = dir.path().join("c");
    let out = ok(&catpose(dir.path(), &["curves", "--dataset", ds, "--predictions", preds.to_str().unwrap(), "--out", prefix.to_str().unwrap()]));
    assert!(out.starts_with("curves: 3 files"), "{out}");
    let rot = std::fs::read_to_string(dir.path().join("c_rotation.csv")).unwrap();
    let first = &read_dataset(&ds_path).unwrap().instances[0].category;
    assert_eq!(rot.lines().filter(|l| l.split(',').nth(1) == Some(first.as_str())).count(), 61);

    let table = dir.path().join("ablation.csv");
    let out = ok(&catpose(
        dir.path(),
        &["ablate", "--config", cfg.to_str().unwrap(), "--dataset", ds, "--variants", "full,no_ngph", "--out", table.to_str().unwrap(), "--threads", "2"],
    ));
    assert!(out.contains("ablate[full]") && out.contains("ablate[no_ngph]"), "{out}");
    let text = std::fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "variant,IoU25,IoU50,IoU75,10cm,10deg,10deg10cm,depth_l1");
    assert!(rows[1].starts_with("full,") && rows[2].starts_with("no_ngph,"));
}

#[test]
fn standard_size_dataset_has_600_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("std.jsonl");
    ok(&catpose(dir.path(), &["synth", "--out", path.to_str().unwrap()]));
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("\"kind\":\"instance\"")).count(), 600);
    let ds = read_dataset(&path).unwrap();
    for c in &ds.categories {
        assert_eq!(ds.instances.iter().filter(|i| i.category == c.name).count(), 100);
    }
}

#[test]
fn curve_csv_matches_a_recount() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = small_dataset(dir.path(), "4", "11");
    let ds = read_dataset(&ds_path).unwrap();
    let offsets: Vec<f64> = (0..ds.instances.len()).map(|k| 0.0073 * (k % 13) as f64).collect();
    let preds: Vec<Prediction> = ds
        .instances
        .iter()
        .zip(&offsets)
        .map(|(i, dx)| {
            let mut pose = i.gt_pose;
            pose.translation.x += dx;
            Prediction { id: i.id, category: i.category.clone(), pose, size: i.gt_size }
        })
        .collect();
    let pred_path = dir.path().join("p.jsonl");
    write_predictions(&pred_path, &preds).unwrap();
    let prefix = dir.path().join("rc");
    ok(&catpose(
        dir.path(),
        &["curves", "--dataset", ds_path.to_str().unwrap(), "--predictions", pred_path.to_str().unwrap(), "--out", prefix.to_str().unwrap()],
    ));
    let csv = std::fs::read_to_string(dir.path().join("rc_translation.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let t: f64 = f[0].parse().unwrap();
        let ap: f64 = f[2].parse().unwrap();
        let recall = |cat: &str| {
            let idx: Vec<usize> = (0..ds.instances.len()).filter(|&k| ds.instances[k].category == cat).collect();
            idx.iter().filter(|&&k| offsets[k] < t).count() as f64 / idx.len() as f64
        };
        let expected = if f[1] == "mean" {
            ds.categories.iter().map(|c| recall(&c.name)).sum::<f64>() / ds.categories.len() as f64
        } else {
            recall(f[1])
        };
        assert!((ap - expected).abs() < 1e-12, "{line}: recount {expected}");
        rows += 1;
    }
    assert_eq!(rows, 21 * 7);
}
