use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::NaiveDate;
use dde_core::eval::MetricSet;
use dde_core::predictor::ThresholdFile;
use dde_core::raster::{write_raster, GeoGrid, SceneRaster, DEFAULT_NODATA};
use ndarray::Array2;

fn dde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dde"))
        .args(args)
        .output()
        .expect("dde runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path) -> PathBuf {
    let out = dir.to_str().unwrap();
    let o = dde(&["synth", "--out", out, "--size", "96"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("run.toml")
}

fn raster(path: &Path, w: usize, values: Vec<f32>) {
    let h = values.len() / w;
    let grid = GeoGrid::new(w, h, (0.0, 0.0), (1.0, -1.0), "EPSG:4326").unwrap();
    let date = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
    let data = Array2::from_shape_vec((h, w), values).unwrap();
    let scene = SceneRaster::single(grid, "b", data, date, DEFAULT_NODATA).unwrap();
    write_raster(&scene, path).unwrap();
}

#[test]
fn run_then_rerun_skips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let cfg = cfg.to_str().unwrap();
    let o = dde(&["run", "--config", cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).matches("succeeded").count(), 8);
    let o = dde(&["run", "--config", cfg]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).matches("skipped").count(), 8);
}

#[test]
fn subcommands_stop_at_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let cfg = cfg.to_str().unwrap();
    for (cmd, stages) in [("acquire", 1), ("predict", 4), ("mdm", 6), ("hexbin", 7), ("render", 8)] {
        let o = dde(&[cmd, "--config", cfg]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let lines = stdout(&o).lines().filter(|l| l.starts_with("  ")).count();
        assert_eq!(lines, stages, "{cmd}");
    }
}

#[test]
fn flag_overrides_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let cfg = cfg.to_str().unwrap();
    let a = stdout(&dde(&["hexbin", "--config", cfg]));
    let b = stdout(&dde(&["hexbin", "--config", cfg, "--hex-width-m", "500", "--top-k", "3"]));
    let run_line = |s: &str| s.lines().next().unwrap().to_string();
    assert_ne!(run_line(&a), run_line(&b));
    let run_dir = b.lines().last().unwrap().trim_start_matches("run directory: ").to_string();
    let top = std::fs::read_to_string(Path::new(&run_dir).join("hexbin/top_pixels.csv")).unwrap();
    assert_eq!(top.lines().count(), 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let cfg_s = cfg.to_str().unwrap();

    assert_eq!(dde(&["run", "--config", cfg_s, "--threshold", "1.5"]).status.code(), Some(2));
    assert_eq!(dde(&["run", "--config", cfg_s, "--trim", "1.0"]).status.code(), Some(2));

    let text = std::fs::read_to_string(&cfg).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, format!("mystery = 1\n{text}")).unwrap();
    assert_eq!(dde(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    std::fs::remove_file(dir.path().join("weights.json")).unwrap();
    let o = dde(&["run", "--config", cfg_s]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("weights"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn integrity_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    for e in std::fs::read_dir(dir.path().join("fmask")).unwrap() {
        std::fs::remove_file(e.unwrap().path()).unwrap();
    }
    let o = dde(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("failed"));
}

#[test]
fn eval_metrics_hand_example() {
    let dir = tempfile::tempdir().unwrap();
    let (p, r, j) = (dir.path().join("p.json"), dir.path().join("r.json"), dir.path().join("m.json"));
    raster(&p, 3, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    raster(&r, 3, vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    let o = dde(&[
        "eval", "metrics", "--pred", p.to_str().unwrap(), "--reference", r.to_str().unwrap(), "--json",
        j.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    let debris = table.lines().find(|l| l.starts_with("MD&SP")).unwrap();
    assert_eq!(debris.split_whitespace().collect::<Vec<_>>(), ["MD&SP", "0.5000", "0.6667", "0.6667", "0.6667"]);
    assert!(table.contains("Overall (micro)") && table.contains("Overall (macro)"));
    let m: MetricSet = serde_json::from_str(&std::fs::read_to_string(&j).unwrap()).unwrap();
    assert!((m.per_class[&1].iou - 0.5).abs() < 1e-12);
}

#[test]
fn eval_rejects_mismatched_rasters() {
    let dir = tempfile::tempdir().unwrap();
    let (p, r) = (dir.path().join("p.json"), dir.path().join("r.json"));
    raster(&p, 3, vec![1.0; 6]);
    raster(&r, 2, vec![1.0; 6]);
    let o = dde(&["eval", "metrics", "--pred", p.to_str().unwrap(), "--reference", r.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn eval_thresholds_feed_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let (p, r, t) = (dir.path().join("p.tif"), dir.path().join("r.json"), dir.path().join("t.json"));
    // Positives at 0.9 and 0.97, one negative at 0.92: max F1 at 0.9; precision 1 from the
    // first grid step above 0.92.
    raster(&p, 4, vec![0.1, 0.2, 0.9, 0.97, 0.92, 0.3, 0.05, DEFAULT_NODATA]);
    raster(&r, 4, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let o = dde(&[
        "eval", "thresholds", "--probs", p.to_str().unwrap(), "--reference", r.to_str().unwrap(), "--out",
        t.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let th = ThresholdFile::load(&t).unwrap();
    assert_eq!(th.opt, 0.9f32 as f64);
    assert_eq!(th.hp, 93.0 / 101.0);

    let cfg = synth(&dir.path().join("s"));
    let text = std::fs::read_to_string(&cfg).unwrap().replace(
        "weights = \"weights.json\"",
        &format!("weights = \"weights.json\"\nthresholds = {:?}", t.to_str().unwrap()),
    );
    std::fs::write(&cfg, text).unwrap();
    let o = dde(&["mdm", "--config", cfg.to_str().unwrap(), "--threshold", "hp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run_dir = stdout(&o).lines().last().unwrap().trim_start_matches("run directory: ").to_string();
    let params = std::fs::read_to_string(Path::new(&run_dir).join("mdm/params.json")).unwrap();
    assert!(params.contains(&format!("{}", 93.0 / 101.0)), "{params}");
}
