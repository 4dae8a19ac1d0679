//! Command-line front end: `psf | simulate | reconstruct | evaluate | plot | demo`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use ndarray::Axis;
use serde_json::{Map, Value};

use crate::config::{Experiment, ExperimentConfig, SceneSource};
use crate::error::{Error, Result};
use crate::io::{
    read_cube, read_masks, read_measurements, to_gray16, write_cube_with_metadata, write_masks, write_measurements,
    write_pgm, write_psf_stack,
};
use crate::metrics::{evaluate, EvaluationReport};
use crate::model::SystemOperator;
use crate::solver::history_csv;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "csid", version, about = "Compressive spectral imaging with diffractive lenses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the PSF stack; writes one container per measurement and one PGM per kernel.
    Psf {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate measurements; writes measurements.csid, masks.csid and truth.csid.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct a cube from measurements; writes recon.csid and history.csv.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        meas: PathBuf,
        /// Mask container; regenerated from the config when omitted.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a reconstruction with the ground truth and write a CSV report.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write spectra at `x,y;x,y;...` (column, row) and one PGM per band.
    Plot {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        points: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the desk-scale scenario end to end and print the report.
    Demo {
        #[arg(long, default_value = "demo_out")]
        out: PathBuf,
        /// Number of measurements (2, 3 or 4).
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 28.0)]
        snr: f64,
        /// Scene side length in pixels.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    ExitCode::from(run_code(argv))
}

pub fn run_code<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical { .. } => EXIT_NUMERICAL,
        Error::Kernel { source, .. } => exit_code(source),
        _ => EXIT_DATA,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Psf { config, out } => cmd_psf(&config, out),
        Command::Simulate { config, out } => cmd_simulate(&config, out).map(|_| ()),
        Command::Reconstruct { config, meas, masks, out } => cmd_reconstruct(&config, &meas, masks.as_deref(), out).map(|_| ()),
        Command::Evaluate { truth, recon, out } => cmd_evaluate(&truth, &recon, &out).map(|_| ()),
        Command::Plot { cube, points, out } => cmd_plot(&cube, &points, &out),
        Command::Demo { out, k, snr, size, max_iters } => cmd_demo(&out, k, snr, size, max_iters),
    }
}

fn base_dir(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn output_dir(config_path: &Path, cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| base_dir(config_path).join(&cfg.output_dir));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn provenance(cfg: &ExperimentConfig) -> Map<String, Value> {
    let mut meta = Map::new();
    meta.insert("mask_seed".into(), Value::from(cfg.mask.seed));
    meta.insert("noise_seed".into(), Value::from(cfg.noise.seed));
    meta.insert("snr_db".into(), Value::from(cfg.noise.snr_db));
    meta.insert("focused_wavelengths_nm".into(), Value::from(cfg.focused_wavelengths_nm.clone()));
    if let SceneSource::Synthetic { seed, .. } = cfg.scene {
        meta.insert("scene_seed".into(), Value::from(seed));
    }
    meta
}

fn cmd_psf(config_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(config_path)?;
    let dir = output_dir(config_path, &cfg, out)?;
    let psfs = cfg.build_psfs()?;
    let paths = write_psf_stack(&psfs, &dir)?;
    for k in 0..psfs.num_measurements() {
        for (s, kernel) in psfs.row(k).iter().enumerate() {
            let img = to_gray16(kernel.samples().view(), kernel.peak());
            write_pgm(&img, dir.join(format!("psf_k{k}_s{s}.pgm")))?;
        }
    }
    eprintln!(
        "wrote {} psf containers ({} kernels of side {}) to {}",
        paths.len(),
        psfs.num_measurements() * psfs.num_bands(),
        psfs.kernel(0, 0).side(),
        dir.display()
    );
    Ok(())
}

fn cmd_simulate(config_path: &Path, out: Option<PathBuf>) -> Result<PathBuf> {
    let cfg = ExperimentConfig::load(config_path)?;
    let dir = output_dir(config_path, &cfg, out)?;
    let truth = cfg.load_scene(&base_dir(config_path))?;
    let (_, rows, cols) = truth.dims();
    let exp = Experiment::prepare(&cfg, (rows, cols))?;
    let meas = exp.simulate(&truth)?;
    write_measurements(&meas, dir.join("measurements.csid"))?;
    write_masks(&exp.masks, &cfg.wavelengths_m(), dir.join("masks.csid"))?;
    write_cube_with_metadata(&truth, provenance(&cfg), dir.join("truth.csid"))?;
    eprintln!(
        "simulated {} frames of {rows}x{cols}, sigma {:.4e}, in {}",
        meas.num_frames(),
        meas.noise_sigma,
        dir.display()
    );
    Ok(dir)
}

fn cmd_reconstruct(config_path: &Path, meas_path: &Path, masks_path: Option<&Path>, out: Option<PathBuf>) -> Result<PathBuf> {
    let cfg = ExperimentConfig::load(config_path)?;
    let dir = output_dir(config_path, &cfg, out)?;
    let meas = read_measurements(meas_path)?;
    let focus = cfg.designs()?.iter().map(|d| d.focused_wavelength_m).collect::<Vec<_>>();
    let same_focus = focus.len() == meas.focused_wavelengths_m.len()
        && focus
            .iter()
            .zip(&meas.focused_wavelengths_m)
            .all(|(a, b)| (a - b).abs() <= 1e-6 * a);
    if !same_focus {
        return Err(Error::shape(format!(
            "{}: focused wavelengths differ from the config",
            meas_path.display()
        )));
    }
    let (_, rows, cols) = meas.frames.dim();
    let mut exp = Experiment::prepare(&cfg, (rows, cols))?;
    if let Some(path) = masks_path {
        let (masks, _) = read_masks(path)?;
        exp.operator = SystemOperator::new(&masks, &exp.response, &exp.psfs)?;
        exp.masks = masks;
    }
    let start = Instant::now();
    let rec = exp.reconstruct(&meas)?;
    let misfit = rec.final_misfit().unwrap_or(f64::NAN);
    eprintln!(
        "admm: {} iterations in {:.1?}, misfit {:.4e} (epsilon {:.4e})",
        rec.history().len(),
        start.elapsed(),
        misfit,
        rec.epsilon
    );
    let mut meta = provenance(&cfg);
    meta.insert("epsilon".into(), Value::from(rec.epsilon));
    meta.insert("final_misfit".into(), Value::from(misfit));
    meta.insert("admm_iters".into(), Value::from(rec.history().len()));
    write_cube_with_metadata(&rec.cube, meta, dir.join("recon.csid"))?;
    let history = dir.join("history.csv");
    fs::write(&history, history_csv(rec.history())).map_err(|e| Error::io(&history, e))?;
    Ok(dir)
}

fn cmd_evaluate(truth: &Path, recon: &Path, out: &Path) -> Result<EvaluationReport> {
    let truth = read_cube(truth)?;
    let recon = read_cube(recon)?;
    let report = evaluate(recon.values(), truth.values())?;
    fs::write(out, report.to_csv()).map_err(|e| Error::io(out, e))?;
    eprintln!("{report}");
    Ok(report)
}

/// Parses `x,y;x,y;...` into `(col, row)` pairs.
pub fn parse_points(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let mut it = p.split(',').map(|v| v.trim().parse::<usize>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => Ok((x, y)),
                _ => Err(Error::config(format!("bad point {p:?}, expected x,y"))),
            }
        })
        .collect()
}

fn cmd_plot(cube_path: &Path, points: &str, out: &Path) -> Result<()> {
    let cube = read_cube(cube_path)?;
    let points = parse_points(points)?;
    let (bands, rows, cols) = cube.dims();
    if points.is_empty() {
        return Err(Error::config("no points given"));
    }
    if let Some(&(x, y)) = points.iter().find(|&&(x, y)| x >= cols || y >= rows) {
        return Err(Error::shape(format!("point ({x}, {y}) outside the {cols}x{rows} cube")));
    }
    let spectra: Vec<Vec<f64>> = points.iter().map(|&(x, y)| cube.spectrum(y, x)).collect();
    let mut csv = String::from("wavelength_nm");
    for &(x, y) in &points {
        csv.push_str(&format!(",x{x}_y{y}"));
    }
    csv.push('\n');
    for s in 0..bands {
        csv.push_str(&format!("{}", cube.wavelengths_m()[s] * 1e9));
        for spectrum in &spectra {
            csv.push_str(&format!(",{}", spectrum[s]));
        }
        csv.push('\n');
    }
    fs::write(out, csv).map_err(|e| Error::io(out, e))?;

    let max = cube.values().iter().copied().fold(0.0, f64::max);
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let dir = out.parent().unwrap_or(Path::new(""));
    for (s, band) in cube.values().axis_iter(Axis(0)).enumerate() {
        write_pgm(&to_gray16(band, max), dir.join(format!("{stem}_band{s}.pgm")))?;
    }
    Ok(())
}

fn cmd_demo(out: &Path, k: usize, snr: f64, size: Option<usize>, max_iters: Option<usize>) -> Result<()> {
    let mut cfg = ExperimentConfig::desk_scale(k, snr)?;
    if let Some(n) = size {
        if let SceneSource::Synthetic { rows, cols, .. } = &mut cfg.scene {
            *rows = n;
            *cols = n;
        }
    }
    if let Some(iters) = max_iters {
        cfg.solver.max_admm_iters = iters;
    }
    cfg.output_dir = PathBuf::from(".");
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_path = out.join("config.json");
    fs::write(&config_path, cfg.to_json()).map_err(|e| Error::io(&config_path, e))?;

    let start = Instant::now();
    let dir = cmd_simulate(&config_path, None)?;
    let meas_path = dir.join("measurements.csid");
    cmd_reconstruct(&config_path, &meas_path, Some(&dir.join("masks.csid")), None)?;
    let report = cmd_evaluate(&dir.join("truth.csid"), &dir.join("recon.csid"), &dir.join("report.csv"))?;

    let truth = read_cube(dir.join("truth.csid"))?;
    let exp = Experiment::prepare(&cfg, (truth.dims().1, truth.dims().2))?;
    let baseline = exp.baseline(&read_measurements(&meas_path)?)?;
    let base = evaluate(baseline.values(), truth.values())?;
    println!("K = {k}, SNR = {snr} dB, {:.1?}", start.elapsed());
    println!("ADMM reconstruction\n{report}");
    println!("adjoint baseline: PSNR {:.2} dB", base.psnr_db);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_codes() {
        let numerical = Error::Numerical {
            iteration: 4,
            reason: "diverged".into(),
        };
        assert_eq!(exit_code(&numerical), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::shape("x")), EXIT_DATA);
        let nested = Error::Kernel {
            k: 0,
            s: 1,
            source: Box::new(numerical),
        };
        assert_eq!(exit_code(&nested), EXIT_NUMERICAL);
    }

    #[test]
    fn points_parse() {
        assert_eq!(parse_points("1,2; 30,4;").unwrap(), vec![(1, 2), (30, 4)]);
        assert!(parse_points("1;2").is_err());
        assert!(parse_points("1,2,3").is_err());
        assert!(parse_points("a,b").is_err());
    }
}
