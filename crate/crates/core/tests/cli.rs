use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csid::config::{ExperimentConfig, SceneSource};
use csid::io::{read_pgm, write_cube};
use csid::model::SpectralCube;
use ndarray::Array3;

fn csid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csid")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = ExperimentConfig::desk_scale(2, 28.0).unwrap();
    cfg.scene = SceneSource::Synthetic {
        rows: 32,
        cols: 32,
        seed: 5,
    };
    cfg.solver.max_admm_iters = 40;
    cfg.output_dir = PathBuf::from("run");
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_reconstruct_evaluate_plot_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let run = tmp.path().join("run");

    let out = csid(&["simulate", "--config", s(&config)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["measurements.csid", "masks.csid", "truth.csid"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let meas = run.join("measurements.csid");
    let out = csid(&["reconstruct", "--config", s(&config), "--meas", s(&meas), "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert!(history.starts_with("iter,misfit,l1_norm,rel_change,cg_iters\n"));

    let report = run.join("report.csv");
    let out = csid(&[
        "evaluate",
        "--truth",
        s(&run.join("truth.csid")),
        "--recon",
        s(&run.join("recon.csid")),
        "--out",
        s(&report),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&report).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    for col in ["psnr_db", "ssim", "sam_deg"] {
        assert!(header.contains(&col), "{col}");
    }

    let spectra = run.join("spectra.csv");
    let out = csid(&["plot", "--cube", s(&run.join("recon.csid")), "--points", "3,4;10,20", "--out", s(&spectra)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&spectra).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "wavelength_nm,x3_y4,x10_y20");
    assert_eq!(csv.lines().count(), 9);
    assert_eq!(read_pgm(run.join("spectra_band0.pgm")).unwrap().dim(), (32, 32));

    let out = csid(&["plot", "--cube", s(&run.join("recon.csid")), "--points", "99,1", "--out", s(&spectra)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_config_gives_identical_containers_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert!(csid(&["simulate", "--config", s(&config), "--out", s(dir)]).status.success());
        let meas = dir.join("measurements.csid");
        assert!(csid(&["reconstruct", "--config", s(&config), "--meas", s(&meas), "--out", s(dir)])
            .status
            .success());
        let report = dir.join("report.csv");
        let truth = dir.join("truth.csid");
        let recon = dir.join("recon.csid");
        assert!(csid(&["evaluate", "--truth", s(&truth), "--recon", s(&recon), "--out", s(&report)])
            .status
            .success());
    }
    for f in ["measurements.csid", "masks.csid", "truth.csid", "recon.csid", "report.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn psf_command_writes_containers_and_graymaps() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let dir = tmp.path().join("psf");
    let out = csid(&["psf", "--config", s(&config), "--out", s(&dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("psf_k0.csid").exists() && dir.join("psf_k1.csid").exists());
    let img = read_pgm(dir.join("psf_k0_s7.pgm")).unwrap();
    assert_eq!(img.dim(), (127, 127));
    assert_eq!(img.iter().copied().max(), Some(65535));
    let bytes = std::fs::read(dir.join("psf_k0_s7.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5"));
}

#[test]
fn usage_and_data_errors_map_to_exit_codes() {
    let out = csid(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(csid(&[]).status.code(), Some(1));
    assert_eq!(csid(&["--help"]).status.code(), Some(0));

    let tmp = tempfile::tempdir().unwrap();
    let wl = |n: usize| (0..n).map(|i| (450.0 + 50.0 * i as f64) * 1e-9).collect::<Vec<_>>();
    let a = SpectralCube::new(Array3::zeros((2, 8, 8)), wl(2), 4e-6).unwrap();
    let b = SpectralCube::new(Array3::zeros((3, 8, 8)), wl(3), 4e-6).unwrap();
    write_cube(&a, tmp.path().join("a.csid")).unwrap();
    write_cube(&b, tmp.path().join("b.csid")).unwrap();
    let report = tmp.path().join("r.csv");
    let out = csid(&[
        "evaluate",
        "--truth",
        s(&tmp.path().join("a.csid")),
        "--recon",
        s(&tmp.path().join("b.csid")),
        "--out",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"scene": {"kind": "synthetic", "rows": 4, "cols": 4, "seed": 1}, "extra": 1}"#).unwrap();
    let out = csid(&["simulate", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(tmp.path().join("junk.csid"), b"NOTACUBE and more").unwrap();
    let out = csid(&["plot", "--cube", s(&tmp.path().join("junk.csid")), "--points", "0,0", "--out", s(&report)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
}

#[test]
fn demo_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("demo");
    let out = csid(&["demo", "--out", s(&dir), "--size", "32", "--max-iters", "30"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PSNR"));
    assert!(stdout.contains("adjoint baseline"));
    assert!(dir.join("report.csv").exists());
}
