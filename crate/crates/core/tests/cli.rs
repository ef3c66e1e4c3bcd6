use std::path::Path;
use std::process::Command;

use eadnet::autograd::ParamStore;
use eadnet::cli::run;
use eadnet::cost::CostReport;
use eadnet::netpbm::{load_ppm, write_pgm_labels, write_ppm, Palette};
use eadnet::weights::{load_weights, save_weights};
use eadnet::{build_eadnet, EadnetConfig, LabelMap, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn eadnet(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("eadnet").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn summarize_default_totals() {
    let (code, out, _) = eadnet(&["summarize"]);
    assert_eq!(code, 0);
    let total = out.lines().last().unwrap();
    assert!(total.contains("(0.338M)"), "{total}");
    assert!(total.contains("(16.343G)"), "{total}");
}

#[test]
fn summarize_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let (code, _, _) = eadnet(&["summarize", "--n1", "0", "--n2", "0", "--input-size", "64x128", "--json", p(&json)]);
    assert_eq!(code, 0);
    let report = CostReport::from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(report.layers.iter().all(|l| l.kind != "mmrfc"));
    let (_, stdout, _) = eadnet(&["analyze", "--n1", "0", "--n2", "0", "--input-size", "64x128"]);
    assert_eq!(CostReport::from_json(&stdout).unwrap(), report);
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(eadnet(&["summarize", "--channels", "16,8,4"]).0, 1);
    assert_eq!(eadnet(&["summarize", "--input-size", "abc"]).0, 1);
    assert_eq!(eadnet(&["frobnicate"]).0, 1);
    assert_eq!(eadnet(&["--help"]).0, 0);
}

#[test]
fn rf_report_rows() {
    let (code, out, _) = eadnet(&["rf-report"]);
    assert_eq!(code, 0);
    let firsts: Vec<&str> = out.lines().filter(|l| l.trim_start().starts_with("branch 1 ")).collect();
    assert_eq!(firsts.len(), 15);
    assert!(firsts.iter().all(|l| l.contains("rectangle (3, 3)")), "{out}");
    assert!(out.contains("rectangle (25, 49)"));
    assert!(out.contains("rectangle (49, 25)"));
}

#[test]
fn rf_report_verify_matches() {
    let (code, out, _) = eadnet(&["rf-report", "--verify"]);
    assert_eq!(code, 0, "{out}");
    assert!(!out.contains("!="));
}

fn zero_weights(dir: &Path, classes: usize) -> std::path::PathBuf {
    let cfg = EadnetConfig {
        num_classes: classes,
        ..EadnetConfig::default()
    }
    .with_blocks(1, 1);
    let mut store = ParamStore::<f32>::new();
    build_eadnet(&cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    store.fill_conv(0.0, 0.0);
    let path = dir.join("zero.weights");
    save_weights(&store, &path).unwrap();
    path
}

#[test]
fn infer_with_zero_weights_paints_class_zero() {
    let dir = tempfile::tempdir().unwrap();
    let weights = zero_weights(dir.path(), 5);
    let image = dir.path().join("in.ppm");
    write_ppm(&Tensor::from_fn([1, 3, 16, 24], |_, c, h, w| ((c + h + w) % 5) as f32 / 4.0), &image).unwrap();
    let truth = dir.path().join("truth.pgm");
    write_pgm_labels(&LabelMap::new([1, 16, 24], vec![0; 16 * 24]).unwrap(), &truth).unwrap();
    let output = dir.path().join("out.ppm");
    let args = ["infer", "--classes", "5", "--n1", "1", "--n2", "1", "--weights", p(&weights), "--input", p(&image), "--output", p(&output), "--truth", p(&truth)];
    let (code, out, err) = eadnet(&args);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("mIoU 1.0000"));
    let painted = load_ppm(&output).unwrap();
    let expected = Palette::default().color(0);
    for c in 0..3 {
        assert!(painted.plane(0, c).iter().all(|&v| (v * 255.0).round() as u8 == expected[c]));
    }
    let first = std::fs::read(&output).unwrap();
    eadnet(&args);
    assert_eq!(std::fs::read(&output).unwrap(), first);
}

#[test]
fn infer_errors() {
    let dir = tempfile::tempdir().unwrap();
    let weights = zero_weights(dir.path(), 5);
    let image = dir.path().join("odd.ppm");
    write_ppm(&Tensor::full([1, 3, 13, 21], 0.5), &image).unwrap();
    let output = dir.path().join("out.ppm");
    let base = ["infer", "--classes", "5", "--n1", "1", "--n2", "1", "--weights", p(&weights), "--output", p(&output)];

    let missing = [&base[..], &["--input", "/nonexistent.ppm"]].concat();
    assert_eq!(eadnet(&missing).0, 2);
    let unaligned = [&base[..], &["--input", p(&image)]].concat();
    let (code, _, err) = eadnet(&unaligned);
    assert_eq!(code, 2);
    assert!(err.contains("multiple of 8"), "{err}");
    let padded = [&base[..], &["--input", p(&image), "--pad"]].concat();
    assert_eq!(eadnet(&padded).0, 0);
    assert_eq!(load_ppm(&output).unwrap().dims(), [1, 3, 13, 21]);
    let wrong_classes = ["infer", "--classes", "7", "--n1", "1", "--n2", "1", "--weights", p(&weights), "--output", p(&output), "--input", p(&image), "--pad"];
    assert_eq!(eadnet(&wrong_classes).0, 2);
}

#[test]
fn train_zero_iters_saves_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("a.weights");
    let log = dir.path().join("a.csv");
    let args = ["train", "--classes", "3", "--n1", "1", "--n2", "1", "--count", "4", "--size", "32", "--iters", "0", "--weights-out", p(&w), "--log", p(&log)];
    assert_eq!(eadnet(&args).0, 0);
    let first = load_weights(&w).unwrap();
    assert_eq!(std::fs::read_to_string(&log).unwrap().trim(), "iter,lr,loss");
    std::fs::remove_file(&w).unwrap();
    eadnet(&args);
    let second = load_weights(&w).unwrap();
    for name in first.names() {
        assert_eq!(first.get(name).unwrap(), second.get(name).unwrap());
    }
}

#[test]
fn train_logs_learning_rate_and_loss() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("b.weights");
    let log = dir.path().join("b.csv");
    let args = [
        "train", "--classes", "3", "--n1", "1", "--n2", "1", "--count", "4", "--size", "32", "--iters", "3", "--base-lr",
        "0.003", "--batch", "2", "--weights-out", p(&w), "--log", p(&log), "--eval",
    ];
    let (code, out, err) = eadnet(&args);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("training mIoU"));
    let text = std::fs::read_to_string(&log).unwrap();
    let rows: Vec<Vec<f64>> = text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][1], 0.003);
    assert!(rows[1][1] < rows[0][1]);
    assert!(rows.iter().all(|r| r[2].is_finite() && r[2] > 0.0));
}

#[test]
fn gradcheck_single_op_and_corruption() {
    let (code, out, _) = eadnet(&["gradcheck", "--op", "conv2d", "--instances", "3"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("conv2d") && out.contains("PASS"));
    let (code, out, _) = eadnet(&["gradcheck", "--op", "softmax", "--instances", "3", "--corrupt", "softmax"]);
    assert_eq!(code, 3);
    assert!(out.contains("softmax") && out.contains("FAIL"));
    assert_eq!(eadnet(&["gradcheck", "--op", "nope"]).0, 1);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_eadnet");
    let ok = Command::new(bin).args(["summarize", "--n1", "0", "--n2", "0"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("total:"));
    let missing = Command::new(bin)
        .args(["infer", "--weights", "/nope", "--input", "/nope", "--output", "/tmp/x.ppm"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}
