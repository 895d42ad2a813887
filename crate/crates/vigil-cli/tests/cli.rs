//! End-to-end runs of the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

use vigil_core::datagen::{self, make_benchmark, DatasetKind, LabelSet};
use vigil_core::nn::{Activation, HyperConfig, OptimizerKind};
use vigil_core::series::{Instance, MultivariateSeries, FEATURE_COUNT};

fn vigil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vigil"))
        .args(args)
        .output()
        .expect("binary should launch")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Mildly varying series so window normalization has a real span.
fn tiny_series(len: usize) -> MultivariateSeries {
    let instances = (0..len)
        .map(|t| {
            let mut v = [0.0; FEATURE_COUNT];
            for (m, x) in v.iter_mut().enumerate() {
                *x = 10.0 + ((t + m) % 5) as f64;
            }
            Instance::new(t as i64 * 150, v).unwrap()
        })
        .collect();
    MultivariateSeries::new(instances).unwrap()
}

fn tiny_config() -> HyperConfig {
    HyperConfig {
        units: 3,
        activation: Activation::Sigmoid,
        learning_rate: 0.01,
        optimizer: OptimizerKind::Adam,
        num_layers: 1,
        dropout: 0.0,
    }
}

#[test]
fn generate_writes_benchmark_files_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert_ok(&vigil(&["generate", "--kind", "2d1a", "--seed", "7", "--out", out.to_str().unwrap()]));
    }
    let series = read(&a.join("series.csv"));
    assert_eq!(series.lines().count(), 1152, "header plus one row per instance");
    assert_eq!(series, read(&b.join("series.csv")));
    let labels = read(&a.join("labels.csv"));
    assert_eq!(labels, "start,end\n600,627\n");
    assert_eq!(labels, read(&b.join("labels.csv")));
    let manifest = read(&a.join("manifest.txt"));
    assert!(manifest.contains("command=generate\n"));
    assert!(manifest.contains("kind=2d1a\n"));
    assert!(manifest.contains("seed=7\n"));

    // Same arguments again: every output byte-identical, manifest included.
    let before = (series, read(&a.join("manifest.txt")));
    assert_ok(&vigil(&["generate", "--kind", "2d1a", "--seed", "7", "--out", a.to_str().unwrap()]));
    assert_eq!(before.0, read(&a.join("series.csv")));
    assert_eq!(before.1, read(&a.join("manifest.txt")));
}

#[test]
fn tune_with_a_unit_budget_writes_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("series.csv");
    datagen::write_csv(&data, &tiny_series(40)).unwrap();
    let out = dir.path().join("tuned");
    let result = vigil(&[
        "tune",
        "--data", data.to_str().unwrap(),
        "--window", "4",
        "--max-epochs", "1",
        "--eta", "3",
        "--seed", "3",
        "--out", out.to_str().unwrap(),
    ]);
    assert_ok(&result);
    let best = HyperConfig::load(&out.join("best_config.txt")).unwrap();
    best.validate().unwrap();
    let trials = read(&out.join("trials.csv"));
    assert_eq!(trials.lines().count(), 2, "a budget of 1 runs exactly one trial");
    assert!(trials.starts_with("trial_id,bracket,rung,"));
    let manifest = read(&out.join("manifest.txt"));
    assert!(manifest.contains("max_epochs=1\n"));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("min"), "tune reports wall time: {stdout}");
}

#[test]
fn detect_repeats_bit_for_bit_and_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("series.csv");
    datagen::write_csv(&data, &tiny_series(40)).unwrap();
    let config = dir.path().join("model.txt");
    tiny_config().save(&config).unwrap();

    let run = |out: &Path, trace: bool| {
        let out_s = out.to_str().unwrap().to_string();
        let mut args = vec![
            "detect".to_string(),
            "--data".into(), data.to_str().unwrap().into(),
            "--config".into(), config.to_str().unwrap().into(),
            "--window".into(), "4".into(),
            "--criterion".into(), "individual".into(),
            "--seed".into(), "9".into(),
            "--out".into(), out_s.clone(),
        ];
        if trace {
            args.push("--trace-out".into());
            args.push(out_s);
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_ok(&vigil(&refs));
    };

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&a, true);
    run(&b, false);
    let verdicts = read(&a.join("verdicts.csv"));
    assert_eq!(verdicts.lines().count(), 37, "header plus one verdict per streamed row");
    assert_eq!(verdicts, read(&b.join("verdicts.csv")));
    let trace = read(&a.join("trace.csv"));
    assert!(trace.starts_with("step,timestamp,aare_temp,"));
    assert_eq!(trace.lines().count(), 37);
    assert!(read(&a.join("manifest.txt")).contains("criterion=individual\n"));
}

#[test]
fn majority_column_never_exceeds_the_individual_column() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("series.csv");
    // A spike makes some steps actually flag.
    let mut instances: Vec<Instance> = tiny_series(40).instances().to_vec();
    for inst in &mut instances[20..=22] {
        let mut v = inst.values;
        v.iter_mut().for_each(|x| *x *= 10.0);
        *inst = Instance::new(inst.timestamp, v).unwrap();
    }
    datagen::write_csv(&data, &MultivariateSeries::new(instances).unwrap()).unwrap();
    let config = dir.path().join("model.txt");
    tiny_config().save(&config).unwrap();
    let out = dir.path().join("out");
    assert_ok(&vigil(&[
        "detect",
        "--data", data.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
        "--window", "4",
        "--criterion", "majority",
        "--seed", "9",
        "--out", out.to_str().unwrap(),
    ]));
    let verdicts = read(&out.join("verdicts.csv"));
    for line in verdicts.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let (individual, majority) = (cols[4], cols[5]);
        assert!(!(majority == "1" && individual == "0"), "bad line: {line}");
    }
}

#[test]
fn sweep_emits_the_table_shaped_report() {
    let dir = tempfile::tempdir().unwrap();
    let (series, labels) = make_benchmark(DatasetKind::TwoDay, 7).unwrap();
    let data = dir.path().join("series.csv");
    let labels_path = dir.path().join("labels.csv");
    datagen::write_csv(&data, &series).unwrap();
    datagen::write_labels(&labels_path, &labels).unwrap();
    let config = dir.path().join("model.txt");
    tiny_config().save(&config).unwrap();
    let out = dir.path().join("out");
    assert_ok(&vigil(&[
        "sweep",
        "--data", data.to_str().unwrap(),
        "--labels", labels_path.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
        "--seed", "5",
        "--out", out.to_str().unwrap(),
    ]));
    let results = read(&out.join("results.csv"));
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(lines[0], "combination,event,precision,recall,f1");
    assert_eq!(lines.len(), 17, "8 sizes x 2 criteria on a single-event run");
    let expected: Vec<String> = ["Ind", "Maj"]
        .iter()
        .flat_map(|c| {
            [6, 12, 24, 48, 72, 96, 120, 144].iter().map(move |n| format!("{c}-{n}"))
        })
        .collect();
    let got: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(got, expected);
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1], "all");
        for v in &cols[2..] {
            let x: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&x), "metric out of range: {line}");
        }
    }
}

#[test]
fn exit_codes_separate_usage_data_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    let bad_kind = vigil(&["generate", "--kind", "bogus", "--seed", "1", "--out", out_s]);
    assert_eq!(bad_kind.status.code(), Some(2));

    let missing = vigil(&[
        "detect",
        "--data", dir.path().join("absent.csv").to_str().unwrap(),
        "--config", dir.path().join("absent.txt").to_str().unwrap(),
        "--out", out_s,
    ]);
    assert_eq!(missing.status.code(), Some(3));

    let data = dir.path().join("series.csv");
    datagen::write_csv(&data, &tiny_series(40)).unwrap();
    let config = dir.path().join("explosive.txt");
    HyperConfig {
        units: 3,
        activation: Activation::Relu,
        learning_rate: 1e160,
        optimizer: OptimizerKind::RmsProp,
        num_layers: 1,
        dropout: 0.0,
    }
    .save(&config)
    .unwrap();
    let diverged = vigil(&[
        "detect",
        "--data", data.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
        "--window", "4",
        "--out", out_s,
    ]);
    assert_eq!(diverged.status.code(), Some(4));

    let bad_criterion = vigil(&[
        "detect",
        "--data", data.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
        "--criterion", "both",
        "--out", out_s,
    ]);
    assert_eq!(bad_criterion.status.code(), Some(2));

    // Labels that fall outside the series are a data problem.
    let labels_path = dir.path().join("labels.csv");
    datagen::write_labels(&labels_path, &LabelSet::new(vec![(100, 120)]).unwrap()).unwrap();
    let good_config = dir.path().join("model.txt");
    tiny_config().save(&good_config).unwrap();
    let oob = vigil(&[
        "sweep",
        "--data", data.to_str().unwrap(),
        "--labels", labels_path.to_str().unwrap(),
        "--config", good_config.to_str().unwrap(),
        "--out", out_s,
    ]);
    assert_eq!(oob.status.code(), Some(3));
}
