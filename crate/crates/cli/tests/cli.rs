use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use va_core::phantom::{run_experiment, ExperimentConfig};
use va_core::volume::io::{read_volume, write_labels, write_volume};
use va_core::volume::{preprocess, IntensitySpace, LabelVolume, PreprocessConfig, Volume};

fn va(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_va-engine"))
        .args(args)
        .env_remove("VA_ENGINE_THREADS")
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

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn hu_volume() -> Volume {
    Volume::from_fn([6, 10, 12], [2.5, 0.8, 0.8], IntensitySpace::Hu, |z, y, x| {
        -400.0 + 60.0 * z as f64 + 25.0 * y as f64 - 10.0 * x as f64
    })
    .unwrap()
}

fn labels(dims: [usize; 3], lesion: impl Fn(usize, usize, usize) -> bool) -> LabelVolume {
    let [nz, ny, nx] = dims;
    let mut out = Vec::with_capacity(nz * ny * nx);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.push(if lesion(z, y, x) { 2 } else { 1 });
            }
        }
    }
    LabelVolume::new(dims, [1.0; 3], out).unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.json");
    std::fs::write(
        &path,
        r#"{"schema": 1, "seeds": 1, "phantom": {"grid": [16, 48, 48], "n_lesions": 1}, "train": {"epochs": 1}}"#,
    )
    .unwrap();
    path
}

#[test]
fn preprocess_matches_library_and_is_idempotent() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("case.vol");
    let v = hu_volume();
    write_volume(&input, &v).unwrap();
    let out1 = dir.path().join("a");
    let o = va(&["preprocess", "--in", p(&input), "--out", p(&out1), "--size", "16"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("effective preprocess config"));

    let got = read_volume(&out1.join("case.vol")).unwrap();
    let cfg = PreprocessConfig {
        size: 16,
        ..PreprocessConfig::default()
    };
    let want = preprocess(&v, &cfg).unwrap();
    assert_eq!(got.dims(), want.dims());
    assert_eq!(got.intensity(), IntensitySpace::Unit);
    for (a, b) in got.values().iter().zip(want.values()) {
        assert_eq!(*a, *b as f32 as f64);
    }

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out1.join("case.slabs.json")).unwrap()).unwrap();
    let slabs = manifest["slabs"].as_array().unwrap();
    assert_eq!(slabs.len(), got.dims()[0]);
    assert_eq!(slabs[0]["slices"], serde_json::json!([0, 0, 1]));

    let out2 = dir.path().join("b");
    let o = va(&["preprocess", "--in", p(&out1.join("case.vol")), "--out", p(&out2), "--size", "16"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        std::fs::read(out1.join("case.vol")).unwrap(),
        std::fs::read(out2.join("case.vol")).unwrap()
    );
}

#[test]
fn preprocess_bad_window_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("case.vol");
    write_volume(&input, &hu_volume()).unwrap();
    let o = va(&["preprocess", "--in", p(&input), "--out", p(dir.path()), "--clamp", "300,-200"]);
    assert_eq!(code(&o), 2);
    let o = va(&["preprocess", "--in", p(&dir.path().join("missing.vol")), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_passes_and_fails_at_tiny_tolerance() {
    let o = va(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("PASS va_forward"));
    assert!(!out.contains("FAIL"));
    assert_eq!(stdout(&va(&["gradcheck"])), out);

    let o = va(&["gradcheck", "--tol", "1e-12"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
    assert!(stderr(&o).contains("gradcheck failed"));
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = TempDir::new().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let dims = [4, 12, 12];
    let m = labels(dims, |z, y, x| (1..3).contains(&z) && (3..7).contains(&y) && (4..8).contains(&x));
    write_labels(&gt.join("a.msk"), &m).unwrap();
    write_labels(&pred.join("a.msk"), &m).unwrap();

    let o = va(&["eval", "--pred", p(&pred), "--gt", p(&gt)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["dice_per_case"], 1.0);
    assert_eq!(report["ap50"], 1.0);

    let probs = Volume::new(
        dims,
        [1.0; 3],
        m.labels().iter().map(|&l| if l == 2 { 0.9 } else { 0.1 }).collect(),
        IntensitySpace::Unit,
    )
    .unwrap();
    write_volume(&dir.path().join("a.vol"), &probs).unwrap();
    let out = dir.path().join("metrics.json");
    let records = dir.path().join("records.jsonl");
    let o = va(&[
        "eval",
        "--pred",
        p(&dir.path().join("a.vol")),
        "--gt",
        p(&gt.join("a.msk")),
        "--out",
        p(&out),
        "--records",
        p(&records),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["dice_per_case"], 1.0);
    assert_eq!(std::fs::read_to_string(&records).unwrap().lines().count(), dims[0]);
}

#[test]
fn eval_reports_orphans_and_empty_directories() {
    let dir = TempDir::new().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let m = labels([2, 4, 4], |_, y, x| y == 1 && x == 1);
    write_labels(&gt.join("a.msk"), &m).unwrap();

    let o = va(&["eval", "--pred", p(&pred), "--gt", p(&gt)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no predictions"));

    write_labels(&pred.join("a.msk"), &m).unwrap();
    write_labels(&pred.join("b.msk"), &m).unwrap();
    write_labels(&gt.join("c.msk"), &m).unwrap();
    let o = va(&["eval", "--pred", p(&pred), "--gt", p(&gt)]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("b.msk") && err.contains("c.msk"), "{err}");

    let o = va(&["eval", "--pred", p(&pred.join("a.msk")), "--gt", p(&gt)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn experiment_matches_library_run() {
    let dir = TempDir::new().unwrap();
    let cfg_path = small_config(dir.path());
    let o = va(&["experiment", "--config", p(&cfg_path), "--mode", "channel", "--bag", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let mut cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg.model.mode = va_core::attention::AttentionMode::Channel;
    cfg.model.bag_size = 3;
    let want = run_experiment(&cfg).unwrap().to_json() + "\n";
    assert_eq!(stdout(&o), want);

    let out = dir.path().join("run");
    let o = va(&["experiment", "--config", p(&cfg_path), "--mode", "channel", "--bag", "3", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("metrics.json")).unwrap(), want);
    for f in ["config.json", "metrics.csv", "loss.csv", "froc.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let echoed: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn experiment_config_errors() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seeds": 1}"#).unwrap();
    let o = va(&["experiment", "--config", p(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("schema"));

    std::fs::write(&bad, r#"{"schema": 1, "sedes": 1}"#).unwrap();
    assert_eq!(code(&va(&["experiment", "--config", p(&bad)])), 2);

    let ok = small_config(dir.path());
    assert_eq!(code(&va(&["experiment", "--config", p(&ok), "--bag", "4"])), 2);
    assert_eq!(code(&va(&["experiment", "--config", p(&ok), "--mode", "sideways"])), 2);
}

#[test]
fn ablate_writes_one_row_per_value() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("abl");
    let o = va(&[
        "ablate", "--axis", "bag", "--values", "1,3", "--config", p(&cfg), "--mode", "channel", "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(out.join("ablation.json").is_file());

    assert_eq!(code(&va(&["ablate", "--axis", "bag", "--values", "2", "--config", p(&cfg)])), 2);
}

#[test]
fn zero_threads_is_rejected() {
    assert_eq!(code(&va(&["--threads", "0", "gradcheck"])), 2);
}
