use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use idcn_core::io::{read_image, write_pnm};
use idcn_core::labeling::LabelMode;
use idcn_core::model::{Idcn, ModelConfig, ModelWeights};
use idcn_core::synth::natural_corpus;

fn idcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idcn")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = idcn(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_corpus(dir: &Path, count: usize, size: usize, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    for (i, img) in natural_corpus(count, size, size, seed).iter().enumerate() {
        write_pnm(&dir.join(format!("im{i}.ppm")), img).unwrap();
    }
}

fn micro() -> ModelConfig {
    ModelConfig { n: 1, k: 4, l: 3, b: 4, labeling: LabelMode::None, ..ModelConfig::default() }
}

#[test]
fn tables_prints_both_classes() {
    let out = ok(&["tables", "-q", "50"]);
    assert!(out.starts_with("# luma q=50"));
    assert!(out.lines().nth(1).unwrap().trim_start().starts_with("16  11  10"));
    assert!(out.contains("# chroma q=50"));
    assert!(!idcn(&["tables", "-q", "0"]).status.success());
}

#[test]
fn degrade_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (input, a, b) = (dir.path().join("in"), dir.path().join("a"), dir.path().join("b"));
    fs::create_dir_all(&input).unwrap();
    assert!(!idcn(&["degrade", "--in", p(&input), "--out", p(&a), "-q", "20"]).status.success());

    write_corpus(&input, 1, 24, 1);
    ok(&["degrade", "--in", p(&input), "--out", p(&a), "-q", "20"]);
    ok(&["degrade", "--in", p(&input), "--out", p(&b), "-q", "20", "--threads", "1"]);
    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    let rows: Vec<&str> = manifest.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("im0.ppm,20,"));
    assert_eq!(fs::read(a.join("im0.ppm")).unwrap(), fs::read(b.join("im0.ppm")).unwrap());

    fs::write(input.join("broken.ppm"), b"P6\n4 4\n255\n").unwrap();
    let out = idcn(&["degrade", "--in", p(&input), "--out", p(&b), "-q", "20"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.ppm"));
}

#[test]
fn eval_against_itself_and_degraded() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, degraded) = (dir.path().join("clean"), dir.path().join("deg"));
    write_corpus(&clean, 2, 32, 2);
    let csv = ok(&["eval", "--clean", p(&clean), "--test", p(&clean)]);
    for row in csv.lines().skip(1) {
        assert!(row.ends_with(",99.000000,1.000000,99.000000"), "{row}");
    }

    ok(&["degrade", "--in", p(&clean), "--out", p(&degraded), "-q", "10"]);
    let csv_path = dir.path().join("m.csv");
    ok(&["eval", "--clean", p(&clean), "--test", p(&degraded), "-q", "10", "--out", p(&csv_path)]);
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for row in csv.lines().skip(1) {
        let f: Vec<f64> = row.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        assert!(f[2] <= f[0], "psnr_b above psnr: {row}");
    }

    fs::remove_file(clean.join("im1.ppm")).unwrap();
    let out = idcn(&["eval", "--clean", p(&clean), "--test", p(&degraded)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("im1.ppm"));
}

#[test]
fn stats_writes_grids_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (input, out) = (dir.path().join("in"), dir.path().join("out"));
    write_corpus(&input, 3, 48, 3);
    let report = ok(&["stats", "--in", p(&input), "--out", p(&out), "-q", "20"]);
    assert!(report.contains("grid_luma,"));
    for name in ["grid_r", "grid_g", "grid_b", "grid_luma", "grid_luma16"] {
        assert!(out.join(format!("{name}.txt")).exists());
        assert!(read_image(&out.join(format!("{name}.ppm"))).is_ok());
    }
    let luma = fs::read_to_string(out.join("grid_luma.txt")).unwrap();
    assert!(luma.contains("omega=8"));
}

#[test]
fn kernel_files_have_64_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["kernel", "-q", "10", "--out", p(dir.path())]);
    let text = fs::read_to_string(dir.path().join("kernel_luma_q10.txt")).unwrap();
    assert_eq!(text.lines().count(), 64);
    assert!(text.lines().all(|l| l.split(' ').count() == 64));
}

#[test]
fn train_smoke_run_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val, out, out2) = (dir.path().join("t"), dir.path().join("v"), dir.path().join("o"), dir.path().join("o2"));
    write_corpus(&train, 2, 32, 4);
    write_corpus(&val, 1, 24, 5);
    let config = dir.path().join("run.cfg");
    let text = micro().to_text()
        + "patch_size = 16\npatch_size_stage2 = 24\nbatch_size = 2\nbatches_per_epoch = 2\nmax_epochs = 2\n";
    fs::write(&config, text).unwrap();
    ok(&["train", "--config", p(&config), "--train", p(&train), "--val", p(&val), "--out", p(&out), "-q", "10"]);
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.lines().skip(1).all(|l| l.split(',').all(|v| !v.contains("NaN") && !v.contains("inf"))));

    let weights = out.join("weights.idcn");
    ok(&["train", "--train", p(&train), "--val", p(&val), "--out", p(&out2), "-q", "10", "--resume", p(&weights), "--max-epochs", "3"]);
    let history = fs::read_to_string(out2.join("history.csv")).unwrap();
    assert!(history.lines().nth(1).unwrap().starts_with("3,"));

    // Flexible training insists on multi-channel labels.
    assert!(!idcn(&["train-flexible", "--config", p(&config), "--train", p(&train), "--val", p(&val), "--out", p(&out), "--quality-range", "5:20"])
        .status
        .success());
}

#[test]
fn infer_is_deterministic_and_accepts_mixed_qualities() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, deg, a, b) = (dir.path().join("c"), dir.path().join("d"), dir.path().join("a"), dir.path().join("b"));
    write_corpus(&clean, 2, 24, 6);
    ok(&["degrade", "--in", p(&clean), "--out", p(&deg), "-q", "20"]);
    let mut manifest = fs::read_to_string(deg.join("manifest.csv")).unwrap();
    manifest = manifest.replacen("im1.ppm,20", "im1.ppm,5", 1);
    fs::write(deg.join("manifest.csv"), manifest).unwrap();

    let weights = dir.path().join("w.idcn");
    ModelWeights::from_network(&Idcn::<f32>::new(micro(), 9).unwrap(), None).save(&weights).unwrap();
    ok(&["infer", "--weights", p(&weights), "--in", p(&deg), "--out", p(&a), "--manifest", p(&deg.join("manifest.csv"))]);
    ok(&["infer", "--weights", p(&weights), "--in", p(&deg), "--out", p(&b), "--manifest", p(&deg.join("manifest.csv"))]);
    for name in ["im0.ppm", "im1.ppm"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        let img = read_image(&a.join(name)).unwrap();
        assert!(img.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
    }
    assert!(!idcn(&["infer", "--weights", p(&weights), "--in", p(&deg), "--out", p(&a)]).status.success());
}

#[test]
fn spectrum_of_zeroed_estimators_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("c");
    write_corpus(&clean, 1, 24, 7);
    let mut net = Idcn::<f32>::new(micro(), 1).unwrap();
    net.zero_estimators();
    let weights = dir.path().join("w.idcn");
    ModelWeights::from_network(&net, None).save(&weights).unwrap();
    let out = dir.path().join("s");
    let summary = ok(&["spectrum", "--weights", p(&weights), "--in", p(&clean), "-q", "10", "--out", p(&out)]);
    assert!(summary.contains("y,0.000000,0.000000,false"), "{summary}");
    let text = fs::read_to_string(out.join("spectrum_y.txt")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(' ').all(|v| v == "0.000000")));
}

#[test]
fn synth_and_gradcheck() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", p(dir.path()), "--count", "2", "--size", "20", "--seed", "3"]);
    let first = fs::read(dir.path().join("img0000.ppm")).unwrap();
    ok(&["synth", "--out", p(dir.path()), "--count", "2", "--size", "20", "--seed", "3"]);
    assert_eq!(first, fs::read(dir.path().join("img0000.ppm")).unwrap());
    let report = ok(&["gradcheck"]);
    assert!(report.contains("network,fe1.weight"));
}
