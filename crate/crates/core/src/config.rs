//! JSON experiment configuration and the simulate/reconstruct pipeline built
//! from it.
//!
//! Relative paths inside a configuration file are resolved against the
//! directory that contains the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{import_raster_stack, read_cube, ClipOutliers};
use crate::model::{
    adjoint_baseline, generate_mask, simulate_with_operator, CodedApertureSet, DetectorResponse, MeasurementSet,
    SpectralCube, SystemOperator,
};
use crate::optics::{build_psf_stack, default_kernel_side, LensDesign, PsfStack};
use crate::scene::synthetic_scene;
use crate::solver::{reconstruct_with_operator, Reconstruction, SolverConfig};

const NM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    Synthetic {
        rows: usize,
        cols: usize,
        seed: u64,
    },
    /// A cube container whose wavelengths match the configured grid.
    File { path: PathBuf },
    /// A directory of per-band PGM images.
    RasterStack {
        dir: PathBuf,
        #[serde(default)]
        clip_outliers: Option<ClipOutliers>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub bernoulli_p: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub snr_db: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    pub wavelengths_nm: Vec<f64>,
    pub focused_wavelengths_nm: Vec<f64>,
    pub smallest_hole_m: f64,
    pub focus_distance_m: f64,
    pub pixel_pitch_m: f64,
    /// `None` picks the smallest side keeping 99.9% of every kernel's energy.
    #[serde(default)]
    pub kernel_side: Option<usize>,
    pub mask: MaskConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Equidistant focus wavelengths (nm) over 410–710 nm for `K ∈ {2, 3, 4}`.
pub fn equidistant_focus_nm(k: usize) -> Option<Vec<f64>> {
    match k {
        2 => Some(vec![500.0, 610.0]),
        3 => Some(vec![430.0, 560.0, 680.0]),
        4 => Some(vec![420.0, 510.0, 600.0, 690.0]),
        _ => None,
    }
}

impl ExperimentConfig {
    /// 31 bands over 410–710 nm, `δ = 8 µm`, `f0 = 2.56 cm`, `Δ = 4 µm`, `K = 3`.
    pub fn full_scale() -> Self {
        Self {
            scene: SceneSource::Synthetic {
                rows: 256,
                cols: 256,
                seed: 11,
            },
            wavelengths_nm: (0..31).map(|i| 410.0 + 10.0 * i as f64).collect(),
            focused_wavelengths_nm: equidistant_focus_nm(3).unwrap(),
            smallest_hole_m: 8e-6,
            focus_distance_m: 0.0256,
            pixel_pitch_m: 4e-6,
            kernel_side: None,
            mask: MaskConfig { bernoulli_p: 0.5, seed: 1 },
            noise: NoiseConfig { snr_db: 28.0, seed: 2 },
            solver: SolverConfig::default(),
            output_dir: default_output_dir(),
        }
    }

    /// Eight bands over 410–710 nm on a 128×128 synthetic scene.
    ///
    /// The hole size is rescaled so that `4δ²/f0` equals the coarser band
    /// spacing, and the pitch stays at `δ/2`.
    pub fn desk_scale(k: usize, snr_db: f64) -> Result<Self> {
        let focus = equidistant_focus_nm(k).ok_or_else(|| Error::config(format!("no focus set for K = {k}")))?;
        let bands = 8;
        let spacing_nm = 300.0 / (bands - 1) as f64;
        let f0 = 0.0256;
        let delta = (spacing_nm * NM * f0 / 4.0).sqrt();
        Ok(Self {
            scene: SceneSource::Synthetic {
                rows: 128,
                cols: 128,
                seed: 11,
            },
            wavelengths_nm: (0..bands).map(|i| 410.0 + spacing_nm * i as f64).collect(),
            focused_wavelengths_nm: focus,
            smallest_hole_m: delta,
            focus_distance_m: f0,
            pixel_pitch_m: delta / 2.0,
            kernel_side: Some(127),
            mask: MaskConfig { bernoulli_p: 0.5, seed: 1 },
            noise: NoiseConfig { snr_db, seed: 2 },
            solver: SolverConfig {
                mu: 30.0,
                max_admm_iters: 500,
                ..SolverConfig::default()
            },
            output_dir: default_output_dir(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive, got {v}")))
            }
        };
        if self.wavelengths_nm.is_empty() || self.focused_wavelengths_nm.is_empty() {
            return Err(Error::config("wavelength lists must be nonempty"));
        }
        for &w in self.wavelengths_nm.iter().chain(&self.focused_wavelengths_nm) {
            positive("wavelength", w)?;
        }
        if self.wavelengths_nm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("wavelengths_nm must be strictly increasing"));
        }
        if self.focused_wavelengths_nm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("focused_wavelengths_nm must be strictly increasing"));
        }
        positive("smallest_hole_m", self.smallest_hole_m)?;
        positive("focus_distance_m", self.focus_distance_m)?;
        positive("pixel_pitch_m", self.pixel_pitch_m)?;
        if let Some(side) = self.kernel_side {
            if side % 2 == 0 {
                return Err(Error::config(format!("kernel_side must be odd, got {side}")));
            }
        }
        if !(0.0..=1.0).contains(&self.mask.bernoulli_p) {
            return Err(Error::config(format!("bernoulli_p must lie in [0, 1], got {}", self.mask.bernoulli_p)));
        }
        if self.noise.snr_db.is_nan() {
            return Err(Error::config("snr_db is NaN"));
        }
        if let SceneSource::Synthetic { rows, cols, .. } = self.scene {
            if rows == 0 || cols == 0 {
                return Err(Error::config("synthetic scene needs nonzero size"));
            }
        }
        if let SceneSource::RasterStack { clip_outliers: Some(c), .. } = &self.scene {
            if !(c.value.is_finite() && c.value >= 0.0) {
                return Err(Error::config("clip_outliers.value must be nonnegative"));
            }
        }
        self.solver.validate()
    }

    pub fn wavelengths_m(&self) -> Vec<f64> {
        self.wavelengths_nm.iter().map(|w| w * NM).collect()
    }

    pub fn designs(&self) -> Result<Vec<LensDesign>> {
        self.focused_wavelengths_nm
            .iter()
            .map(|&w| LensDesign::focused_at(w * NM, self.smallest_hole_m, self.focus_distance_m))
            .collect()
    }

    pub fn build_psfs(&self) -> Result<PsfStack> {
        let designs = self.designs()?;
        let wavelengths = self.wavelengths_m();
        let side = match self.kernel_side {
            Some(side) => side,
            None => default_kernel_side(&designs, &wavelengths, self.pixel_pitch_m)?,
        };
        build_psf_stack(&designs, &wavelengths, self.pixel_pitch_m, side)
    }

    pub fn build_masks(&self, shape: (usize, usize)) -> Result<CodedApertureSet> {
        generate_mask(
            shape,
            self.wavelengths_nm.len(),
            self.mask.bernoulli_p,
            self.mask.seed,
            self.pixel_pitch_m,
        )
    }

    /// Loads or synthesizes the ground-truth cube.
    pub fn load_scene(&self, base_dir: &Path) -> Result<SpectralCube> {
        let wavelengths = self.wavelengths_m();
        match &self.scene {
            SceneSource::Synthetic { rows, cols, seed } => {
                synthetic_scene(*rows, *cols, &wavelengths, self.pixel_pitch_m, *seed)
            }
            SceneSource::File { path } => {
                let cube = read_cube(base_dir.join(path))?;
                let matches = cube.wavelengths_m().len() == wavelengths.len()
                    && cube
                        .wavelengths_m()
                        .iter()
                        .zip(&wavelengths)
                        .all(|(a, b)| (a - b).abs() <= 1e-6 * NM);
                if !matches {
                    return Err(Error::shape(format!(
                        "{}: cube wavelengths do not match wavelengths_nm",
                        path.display()
                    )));
                }
                Ok(cube)
            }
            SceneSource::RasterStack { dir, clip_outliers } => {
                import_raster_stack(base_dir.join(dir), &wavelengths, self.pixel_pitch_m, *clip_outliers)
            }
        }
    }
}

/// Everything needed to simulate and invert one configuration.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub masks: CodedApertureSet,
    pub response: DetectorResponse,
    pub psfs: PsfStack,
    pub operator: SystemOperator,
}

impl Experiment {
    /// Builds masks, kernels and the operator for a `rows × cols` detector.
    pub fn prepare(config: &ExperimentConfig, shape: (usize, usize)) -> Result<Self> {
        config.validate()?;
        let masks = config.build_masks(shape)?;
        let response = DetectorResponse::flat(config.wavelengths_nm.len());
        let psfs = config.build_psfs()?;
        let operator = SystemOperator::new(&masks, &response, &psfs)?;
        Ok(Self {
            config: config.clone(),
            masks,
            response,
            psfs,
            operator,
        })
    }

    pub fn simulate(&self, truth: &SpectralCube) -> Result<MeasurementSet> {
        simulate_with_operator(
            &self.operator,
            truth,
            &self.psfs,
            self.config.noise.snr_db,
            self.config.noise.seed,
        )
    }

    pub fn reconstruct(&self, meas: &MeasurementSet) -> Result<Reconstruction> {
        reconstruct_with_operator(&self.operator, meas, &self.config.wavelengths_m(), &self.config.solver)
    }

    pub fn baseline(&self, meas: &MeasurementSet) -> Result<SpectralCube> {
        let values = adjoint_baseline(&self.operator, &meas.frames)?;
        SpectralCube::new(values, self.config.wavelengths_m(), self.config.pixel_pitch_m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let cfg = ExperimentConfig::desk_scale(3, 28.0).unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);

        let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        v["surprise"] = serde_json::Value::from(1);
        assert!(matches!(ExperimentConfig::from_json(&v.to_string()), Err(Error::Config(_))));

        let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        v["solver"]["momentum"] = serde_json::Value::from(0.9);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());

        let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        v["scene"]["colour"] = serde_json::Value::from("red");
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn desk_scale_resolution_matches_band_spacing() {
        let cfg = ExperimentConfig::desk_scale(2, 28.0).unwrap();
        let spacing = (cfg.wavelengths_nm[1] - cfg.wavelengths_nm[0]) * NM;
        let res = 4.0 * cfg.smallest_hole_m.powi(2) / cfg.focus_distance_m;
        assert!((res - spacing).abs() < 1e-18);
        assert!(ExperimentConfig::desk_scale(5, 28.0).is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = ExperimentConfig::full_scale();
        cfg.kernel_side = Some(64);
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::full_scale();
        cfg.mask.bernoulli_p = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::full_scale();
        cfg.wavelengths_nm.swap(0, 1);
        assert!(cfg.validate().is_err());
    }
}
