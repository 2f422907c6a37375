use std::path::Path;
use std::process::{Command, Output};

use spcl::harness::io::{load_dataset, load_detections, load_detectors, read_json, save_dataset, save_detections, save_detectors};
use spcl::harness::synth::{generate_synthetic, SynthConfig};
use spcl::harness::RunRecord;
use spcl::trainer::{self, DetectConfig};
use spcl::MetricReport;

fn spcl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spcl"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn hundred_bag_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(&SynthConfig {
        num_bags: 100,
        ..SynthConfig::default()
    })
    .unwrap()
    .train;
    let p = dir.path().join("d.jsonl");
    save_dataset(&data, &p).unwrap();
    assert_eq!(load_dataset(&p).unwrap(), data);

    let cfg = spcl::TrainConfig {
        max_iters: 2,
        ..Default::default()
    };
    let (det, _) = trainer::train(&data, &cfg).unwrap();
    let mp = dir.path().join("m.json");
    save_detectors(&det, &mp).unwrap();
    assert_eq!(load_detectors(&mp).unwrap(), det);

    let dets: Vec<_> = trainer::detect(&data.bags, &det, &DetectConfig::default()).unwrap().into_iter().flatten().collect();
    let dp = dir.path().join("det.jsonl");
    save_detections(&dets, &dp).unwrap();
    assert_eq!(load_detections(&dp).unwrap(), dets);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let small = ["--set", "synth.num_bags=24", "--set", "train.max_iters=4"];

    ok(&spcl(&[&["synth", "--seed", "5"][..], &small].concat(), d));
    let train = d.join("train.jsonl");
    let test = d.join("test.jsonl");
    assert!(train.exists() && test.exists());

    let tdir = d.join("train");
    ok(&spcl(&[&["train", "--data", s(&train), "--seed", "5"][..], &small].concat(), &tdir));
    let model = tdir.join("model.json");
    let log = std::fs::read_to_string(tdir.join("run_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let record: RunRecord = read_json(&tdir.join("run.json")).unwrap();
    assert_eq!((record.command.as_str(), record.seed, record.log.len()), ("train", 5, 4));
    assert!(record.instance_accuracy.is_some());

    let ddir = d.join("detect");
    ok(&spcl(&["detect", "--model", s(&model), "--data", s(&test)], &ddir));
    let dets = ddir.join("detections.jsonl");

    let edir = d.join("eval");
    ok(&spcl(
        &["eval", "--detections", s(&dets), "--data", s(&test), "--model", s(&model), "--train-data", s(&train)],
        &edir,
    ));
    let report: MetricReport = read_json(&edir.join("metrics.json")).unwrap();
    assert_eq!(report.per_class_ap.len(), 4);
    assert!(report.corloc.is_some());
    assert!((0.0..=1.0).contains(&report.mean_ap));
}

#[test]
fn run_record_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&spcl(&["synth", "--seed", "2", "--set", "synth.num_bags=16"], d));
    let train = d.join("train.jsonl");
    let first = d.join("first");
    ok(&spcl(&["train", "--data", s(&train), "--seed", "2", "--set", "train.max_iters=3"], &first));

    let record: RunRecord = read_json(&first.join("run.json")).unwrap();
    let cfg = d.join("replay.json");
    std::fs::write(&cfg, serde_json::to_string(&record.config).unwrap()).unwrap();
    let second = d.join("second");
    ok(&spcl(&["train", "--data", s(&train), "--config", s(&cfg)], &second));

    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&first.join("model.json")), read(&second.join("model.json")));
    assert_eq!(read(&first.join("run_log.jsonl")), read(&second.join("run_log.jsonl")));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("missing.jsonl");
    let out = spcl(&["train", "--data", s(&missing)], d);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let bad = d.join("bad.jsonl");
    std::fs::write(&bad, "{not json}\n").unwrap();
    assert!(!spcl(&["train", "--data", s(&bad)], d).status.success());
    assert!(!spcl(&["synth", "--set", "synth.bogus=1"], d).status.success());
}
