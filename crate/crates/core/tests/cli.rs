use std::path::Path;
use std::process::{Command, Output};

use fluororeg::cli::{RunConfig, RunRecord};
use fluororeg::evaluation::RmseReport;
use fluororeg::registration::{reprojection_loss, Bounds, RegistrationProblem};
use fluororeg::synthesis::SyntheticCase;

fn fluororeg(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fluororeg"));
    cmd.args(args);
    for (flag, p) in paths {
        cmd.arg(flag).arg(p);
    }
    cmd.output().expect("binary runs")
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

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn small_basin_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("small.toml");
    write(&p, "[sampling]\nrot_range_deg = 5.0\ntrans_range_mm = 10.0\n");
    p
}

#[test]
fn help_lists_every_flag() {
    for (sub, flags) in [
        ("synth", &["--config", "--seed", "--count", "--out", "--noise", "--heatmaps", "--jobs"][..]),
        ("register", &["--case", "--landmarks3d", "--landmarks2d", "--heatmaps", "--preset", "--optimizer", "--lr", "--iters", "--tolerance", "--out", "--jobs"][..]),
        ("eval", &["--pred", "--gt", "--out", "--config"][..]),
        ("gradcheck", &["--seed", "--trials", "--config"][..]),
    ] {
        let o = fluororeg(&[sub, "--help"], &[]);
        assert_eq!(code(&o), 0);
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{sub} --help misses {f}");
        }
    }
    assert_eq!(code(&fluororeg(&["synth", "--out", "x", "--frobnicate"], &[])), 2);
    assert_eq!(code(&fluororeg(&["teleport"], &[])), 2);
}

#[test]
fn synth_count_zero_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cases");
    let o = fluororeg(&["synth", "--count", "0"], &[("--out", &out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 0);
}

#[test]
fn synth_single_case_is_deterministic_and_stamped() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&fluororeg(&["synth", "--seed", "42", "--count", "1"], &[("--out", d)])), 0);
    }
    let fa = std::fs::read(a.join("case_0000.json")).unwrap();
    assert_eq!(fa, std::fs::read(b.join("case_0000.json")).unwrap());
    let case = SyntheticCase::read(&a.join("case_0000.json")).unwrap();
    assert_eq!(case.seed, 42);
    let text = String::from_utf8(fa).unwrap();
    assert!(text.contains(&format!("\"config_hash\": \"{}\"", RunConfig::default().hash())));
    assert!(text.contains("\"generator\""));
}

#[test]
fn hundred_default_cases_are_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cases");
    assert_eq!(code(&fluororeg(&["synth", "--count", "100", "--jobs", "4"], &[("--out", &out)])), 0);
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().collect();
    assert_eq!(files.len(), 100);
    for f in files {
        let c = SyntheticCase::read(&f.unwrap().path()).unwrap();
        let prob = RegistrationProblem::new(c.landmarks_3d.clone(), c.landmarks_2d_gt.clone(), c.intrinsics, Bounds::default())
            .unwrap()
            .with_projector(c.projector())
            .unwrap();
        assert!(reprojection_loss(&c.true_pose, &prob).unwrap() < 1e-12);
    }
}

#[test]
fn synth_input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    write(&blocker, "");
    let o = fluororeg(&["synth"], &[("--out", &blocker.join("sub"))]);
    assert_eq!(code(&o), 2);
    let bad = dir.path().join("bad.toml");
    write(&bad, "[sampling]\nrot_range_deg = -3.0\n");
    assert_eq!(code(&fluororeg(&["synth"], &[("--config", &bad), ("--out", dir.path())])), 2);
    write(&bad, "[intrinsics]\nsdd = \"far\"\n");
    let o = fluororeg(&["synth"], &[("--config", &bad), ("--out", dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.toml:2"), "{}", stderr(&o));
}

#[test]
fn register_noiseless_case_with_converge_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_basin_config(dir.path());
    let cases = dir.path().join("cases");
    assert_eq!(code(&fluororeg(&["synth", "--count", "1"], &[("--config", &cfg), ("--out", &cases)])), 0);
    let runs = dir.path().join("runs");
    let o = fluororeg(&["register", "--preset", "converge"], &[("--config", &cfg), ("--case", &cases.join("case_0000.json")), ("--out", &runs)]);
    let rec = RunRecord::read(&runs.join("case_0000.run.json")).unwrap();
    assert!(rec.rmse_px < 0.5, "{}", rec.rmse_px);
    assert_eq!(rec.iterations_run, rec.trace.len());
    assert_eq!(code(&o), if rec.converged { 0 } else { 3 });
    assert!(runs.join("case_0000.csv").is_file());

    // the quasi-Newton preset reaches the loss-change tolerance
    let o = fluororeg(&["register", "--preset", "lbfgs"], &[("--config", &cfg), ("--case", &cases), ("--out", &runs)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let rec = RunRecord::read(&runs.join("case_0000.run.json")).unwrap();
    assert!(rec.converged && rec.rmse_px < 1e-3);
    assert!(rec.pose_error.unwrap().translation_error_mm < 1e-3);
}

#[test]
fn register_paper_preset_on_identity_case() {
    let dir = tempfile::tempdir().unwrap();
    let cases = dir.path().join("cases");
    let synth = fluororeg(&["synth", "--rot-range", "0", "--trans-range", "0"], &[("--out", &cases)]);
    assert_eq!(code(&synth), 0);
    let o = fluororeg(&["register", "--preset", "paper"], &[("--case", &cases), ("--out", &dir.path().join("runs"))]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn register_from_landmark_files() {
    let dir = tempfile::tempdir().unwrap();
    let cases = dir.path().join("cases");
    assert_eq!(code(&fluororeg(&["synth", "--rot-range", "3", "--trans-range", "5"], &[("--out", &cases)])), 0);
    let case = SyntheticCase::read(&cases.join("case_0000.json")).unwrap();
    let (l3, l2) = (dir.path().join("l3.csv"), dir.path().join("l2.csv"));
    write(&l3, &fluororeg::io::format_landmarks_3d(&case.landmarks_3d));
    write(&l2, &fluororeg::io::format_landmarks_2d(&case.landmarks_2d_gt));
    let runs = dir.path().join("runs");
    let o = fluororeg(&["register", "--preset", "lbfgs"], &[("--landmarks3d", &l3), ("--landmarks2d", &l2), ("--out", &runs)]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let rec = RunRecord::read(&runs.join("l2.run.json")).unwrap();
    assert!(rec.rmse_px < 1e-3);
    assert!(rec.pose_error.is_none());

    // one observation short
    let short: String = std::fs::read_to_string(&l2).unwrap().lines().take(8).map(|l| format!("{l}\n")).collect();
    write(&l2, &short);
    let o = fluororeg(&["register"], &[("--landmarks3d", &l3), ("--landmarks2d", &l2), ("--out", &runs)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mismatch"), "{}", stderr(&o));

    // malformed row
    write(&l2, "id,x,y\n1,0,0\n2,zero,1\n");
    let o = fluororeg(&["register"], &[("--landmarks3d", &l3), ("--landmarks2d", &l2), ("--out", &runs)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("l2.csv:3") && stderr(&o).contains("`x`"), "{}", stderr(&o));
}

#[test]
fn register_records_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cases = dir.path().join("cases");
    assert_eq!(code(&fluororeg(&["synth", "--count", "3", "--noise", "0.5"], &[("--out", &cases)])), 0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = fluororeg(&["register", "--jobs", "1"], &[("--case", &cases), ("--out", &a)]);
    let ob = fluororeg(&["register", "--jobs", "3"], &[("--case", &cases), ("--out", &b)]);
    assert_eq!(code(&oa), code(&ob));
    for i in 0..3 {
        let name = format!("case_{i:04}.run.json");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn eval_tables_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred) = (dir.path().join("gt"), dir.path().join("pred"));
    std::fs::create_dir_all(&gt).unwrap();
    std::fs::create_dir_all(&pred).unwrap();
    let empty = fluororeg(&["eval"], &[("--pred", &pred), ("--gt", &gt)]);
    assert_eq!(code(&empty), 2);

    write(&gt.join("img1.csv"), "id,x,y\n1,0,0\n2,10,10\n");
    write(&gt.join("img2.csv"), "id,x,y\n1,5,5\n2,-3,4\n");
    write(&pred.join("img1.csv"), "id,x,y\n1,0,0\n2,10,10\n");
    let missing = fluororeg(&["eval"], &[("--pred", &pred), ("--gt", &gt)]);
    assert_eq!(code(&missing), 2);
    assert!(stderr(&missing).contains("img2"), "{}", stderr(&missing));

    write(&pred.join("img2.csv"), "id,x,y\n1,5,5\n2,-3,4\n");
    let same = fluororeg(&["eval"], &[("--pred", &pred), ("--gt", &gt)]);
    assert_eq!(code(&same), 0);
    assert!(stdout(&same).contains("0.0000    0.0000    0.0000"), "{}", stdout(&same));

    // landmark 2 off by (3, 4) in one of two images: sqrt(25 / 2)
    write(&pred.join("img2.csv"), "id,x,y\n1,5,5\n2,0,8\n");
    let out = dir.path().join("report.json");
    let o = fluororeg(&["eval"], &[("--pred", &pred), ("--gt", &gt), ("--out", &out)]);
    assert_eq!(code(&o), 0);
    let r = RmseReport::read(&out).unwrap();
    let l2 = (25.0f64 / 2.0).sqrt();
    assert_eq!(r.per_landmark[0], 0.0);
    assert!((r.per_landmark[1] - l2).abs() < 1e-12);
    assert!((r.mean - l2 / 2.0).abs() < 1e-12);
    assert_eq!(r.config_hash, RunConfig::default().hash());
    assert!(stdout(&o).contains(&format!("{:.4}", l2)));
}

#[test]
fn eval_decodes_heatmap_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cases = dir.path().join("cases");
    let o = fluororeg(&["synth", "--count", "4", "--heatmaps", "--rot-range", "5", "--trans-range", "10"], &[("--out", &cases)]);
    assert_eq!(code(&o), 0);
    let o = fluororeg(&["eval"], &[("--pred", &cases), ("--gt", &cases), ("--out", &dir.path().join("r.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = RmseReport::read(&dir.path().join("r.json")).unwrap();
    // hard argmax on a 512 grid rescaled to 768 px: at most 0.75 px per axis
    assert!(r.mean < 1.5f64.hypot(1.5) / 2.0 + 1e-9);
    assert_eq!(r.n_images, 4);
}

#[test]
fn gradcheck_passes_fails_and_counts() {
    let o = fluororeg(&["gradcheck", "--trials", "100"], &[]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));
    let o = fluororeg(&["gradcheck", "--trials", "5", "--corrupt-gradient"], &[]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("r_x"), "{}", stderr(&o));
    let o = fluororeg(&["gradcheck", "--trials", "1"], &[]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains(" 1 trial(s)"));
    assert_eq!(code(&fluororeg(&["gradcheck", "--trials", "0"], &[])), 2);
}

#[test]
fn end_to_end_heatmap_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("e2e.toml");
    write(&cfg, "[sampling]\nrot_range_deg = 5.0\ntrans_range_mm = 10.0\n[heatmap]\ntau = 0.1\n");
    let cases = dir.path().join("cases");
    let runs = dir.path().join("runs");
    assert_eq!(code(&fluororeg(&["synth", "--count", "5", "--heatmaps"], &[("--config", &cfg), ("--out", &cases)])), 0);
    let o = fluororeg(&["register", "--preset", "lbfgs"], &[("--config", &cfg), ("--case", &cases), ("--heatmaps", &cases), ("--out", &runs)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = fluororeg(&["eval"], &[("--config", &cfg), ("--pred", &runs), ("--gt", &cases)]);
    assert_eq!(code(&o), 0);
    let r = RmseReport::read(&runs.join("report.json")).unwrap();
    assert!(r.mean < 0.1, "{}", r.mean);
}

#[test]
fn bundled_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    assert_eq!(RunConfig::load(&dir.join("default.toml")).unwrap(), RunConfig::default());
    let small = RunConfig::load(&dir.join("small_basin.toml")).unwrap();
    assert_eq!(small.sampling.rot_range_deg, 5.0);
    assert_eq!(small.optimizer, fluororeg::registration::OptimizerConfig::converge());
}
