//! Diffractive-lens optics: the photon-sieve design rule and wavelength-dependent
//! incoherent PSFs.
//!
//! The sieve is treated as its first-order equivalent thin lens: a circular pupil
//! of diameter `D` with focal length `f(λ) = D·δ/λ`. With the detector fixed at
//! distance `f0`, a band whose focal length differs from `f0` sees the residual
//! quadratic phase `π·(1/f0 − 1/f(λ))·r²/λ` across the pupil. The coherent field
//! on the detector is a single-step discrete Fresnel transform of that pupil and
//! the intensity PSF is its squared magnitude, point-sampled at the detector pitch.
//!
//! All lengths are in meters.

use ndarray::{s, Array2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::Fft2;

/// Energy fraction an explicitly sized kernel must keep, otherwise
/// [`compute_psf`] reports a truncation error.
pub const MIN_CAPTURED_ENERGY: f64 = 0.99;

/// Energy fraction targeted by [`default_kernel_side`].
pub const DEFAULT_CAPTURED_ENERGY: f64 = 0.999;

const MIN_PUPIL_SAMPLES: usize = 256;
const MAX_GRID_PIXELS: usize = 4096;

fn require_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {value}")))
    }
}

/// Focal length `D·δ/λ` of a photon sieve with outer diameter `D` and smallest
/// hole `δ` at wavelength `λ`.
pub fn focal_length(outer_diameter: f64, smallest_hole: f64, wavelength: f64) -> Result<f64> {
    require_positive("outer diameter", outer_diameter)?;
    require_positive("smallest hole diameter", smallest_hole)?;
    require_positive("wavelength", wavelength)?;
    Ok(outer_diameter * smallest_hole / wavelength)
}

/// Spectral bandwidth `4·δ²/f0` of the sieve, i.e. the expected spectral resolution.
pub fn spectral_resolution(smallest_hole: f64, focus_distance: f64) -> Result<f64> {
    require_positive("smallest hole diameter", smallest_hole)?;
    require_positive("lens-to-detector distance", focus_distance)?;
    Ok(4.0 * smallest_hole * smallest_hole / focus_distance)
}

/// One photon-sieve configuration. The four quantities are tied by
/// `λ̃ = D·δ/f0`; each constructor takes three of them and derives the fourth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LensDesign {
    pub outer_diameter_m: f64,
    pub smallest_hole_m: f64,
    pub focus_distance_m: f64,
    pub focused_wavelength_m: f64,
}

impl LensDesign {
    /// Design that focuses `focused_wavelength` at `focus_distance`: `D = λ̃·f0/δ`.
    pub fn focused_at(focused_wavelength: f64, smallest_hole: f64, focus_distance: f64) -> Result<Self> {
        require_positive("focused wavelength", focused_wavelength)?;
        require_positive("smallest hole diameter", smallest_hole)?;
        require_positive("lens-to-detector distance", focus_distance)?;
        Ok(Self {
            outer_diameter_m: focused_wavelength * focus_distance / smallest_hole,
            smallest_hole_m: smallest_hole,
            focus_distance_m: focus_distance,
            focused_wavelength_m: focused_wavelength,
        })
    }

    /// Design with a given outer diameter; the focused wavelength becomes `D·δ/f0`.
    pub fn with_diameter(outer_diameter: f64, smallest_hole: f64, focus_distance: f64) -> Result<Self> {
        require_positive("outer diameter", outer_diameter)?;
        require_positive("smallest hole diameter", smallest_hole)?;
        require_positive("lens-to-detector distance", focus_distance)?;
        Ok(Self {
            outer_diameter_m: outer_diameter,
            smallest_hole_m: smallest_hole,
            focus_distance_m: focus_distance,
            focused_wavelength_m: outer_diameter * smallest_hole / focus_distance,
        })
    }

    /// Places the detector at the focal plane of `focused_wavelength`: `f0 = D·δ/λ̃`.
    pub fn with_detector_at_focus(outer_diameter: f64, smallest_hole: f64, focused_wavelength: f64) -> Result<Self> {
        let focus_distance = focal_length(outer_diameter, smallest_hole, focused_wavelength)?;
        Ok(Self {
            outer_diameter_m: outer_diameter,
            smallest_hole_m: smallest_hole,
            focus_distance_m: focus_distance,
            focused_wavelength_m: focused_wavelength,
        })
    }

    /// Derives the smallest hole from the other three: `δ = λ̃·f0/D`.
    pub fn with_hole_for(outer_diameter: f64, focus_distance: f64, focused_wavelength: f64) -> Result<Self> {
        require_positive("outer diameter", outer_diameter)?;
        require_positive("lens-to-detector distance", focus_distance)?;
        require_positive("focused wavelength", focused_wavelength)?;
        Ok(Self {
            outer_diameter_m: outer_diameter,
            smallest_hole_m: focused_wavelength * focus_distance / outer_diameter,
            focus_distance_m: focus_distance,
            focused_wavelength_m: focused_wavelength,
        })
    }

    pub fn focal_length_at(&self, wavelength: f64) -> Result<f64> {
        focal_length(self.outer_diameter_m, self.smallest_hole_m, wavelength)
    }
}

/// Unit-sum, nonnegative intensity kernel on an odd square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfKernel {
    samples: Array2<f64>,
    pixel_pitch_m: f64,
    wavelength_m: f64,
    measurement_index: usize,
}

impl PsfKernel {
    /// Validates and wraps externally supplied samples (measured or synthetic PSFs).
    pub fn from_samples(
        samples: Array2<f64>,
        pixel_pitch_m: f64,
        wavelength_m: f64,
        measurement_index: usize,
    ) -> Result<Self> {
        Self::with_sum_tolerance(samples, pixel_pitch_m, wavelength_m, measurement_index, 1e-9)
    }

    /// Kernels read back from single-precision storage.
    pub(crate) fn from_stored(
        samples: Array2<f64>,
        pixel_pitch_m: f64,
        wavelength_m: f64,
        measurement_index: usize,
    ) -> Result<Self> {
        Self::with_sum_tolerance(samples, pixel_pitch_m, wavelength_m, measurement_index, 1e-6)
    }

    fn with_sum_tolerance(
        samples: Array2<f64>,
        pixel_pitch_m: f64,
        wavelength_m: f64,
        measurement_index: usize,
        tolerance: f64,
    ) -> Result<Self> {
        require_positive("pixel pitch", pixel_pitch_m)?;
        require_positive("wavelength", wavelength_m)?;
        let (rows, cols) = samples.dim();
        if rows != cols || rows % 2 == 0 {
            return Err(Error::shape(format!(
                "psf grid must be square with odd side, got {rows}x{cols}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain("psf samples must be finite and nonnegative"));
        }
        let total: f64 = samples.sum();
        if (total - 1.0).abs() > tolerance {
            return Err(Error::domain(format!("psf samples must sum to 1, got {total}")));
        }
        Ok(Self {
            samples,
            pixel_pitch_m,
            wavelength_m,
            measurement_index,
        })
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn side(&self) -> usize {
        self.samples.nrows()
    }

    pub fn center(&self) -> usize {
        self.side() / 2
    }

    pub fn pixel_pitch_m(&self) -> f64 {
        self.pixel_pitch_m
    }

    pub fn wavelength_m(&self) -> f64 {
        self.wavelength_m
    }

    pub fn measurement_index(&self) -> usize {
        self.measurement_index
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().copied().fold(0.0, f64::max)
    }

    /// Full width at half maximum of the central lobe along the row through the
    /// center, with linear interpolation between samples.
    pub fn fwhm_m(&self) -> f64 {
        let c = self.center();
        let row = self.samples.row(c);
        let half = row[c] / 2.0;
        let crossing = |step: isize| -> f64 {
            let mut i = c as isize;
            loop {
                let next = i + step;
                if next < 0 || next as usize >= row.len() {
                    return (i - c as isize).unsigned_abs() as f64;
                }
                let (a, b) = (row[i as usize], row[next as usize]);
                if b <= half {
                    let frac = if a > b { (a - half) / (a - b) } else { 0.0 };
                    return (i - c as isize).unsigned_abs() as f64 + frac;
                }
                i = next;
            }
        };
        (crossing(-1) + crossing(1)) * self.pixel_pitch_m
    }
}

/// The `K×S` bank of kernels, one row per lens design.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    kernels: Vec<Vec<PsfKernel>>,
    wavelengths_m: Vec<f64>,
    designs: Vec<LensDesign>,
}

impl PsfStack {
    pub fn new(kernels: Vec<Vec<PsfKernel>>, wavelengths_m: Vec<f64>, designs: Vec<LensDesign>) -> Result<Self> {
        if kernels.is_empty() || wavelengths_m.is_empty() {
            return Err(Error::shape("psf stack needs at least one design and one wavelength"));
        }
        if kernels.len() != designs.len() {
            return Err(Error::shape(format!(
                "{} kernel rows for {} designs",
                kernels.len(),
                designs.len()
            )));
        }
        let pitch = kernels[0][0].pixel_pitch_m;
        for (k, row) in kernels.iter().enumerate() {
            if row.len() != wavelengths_m.len() {
                return Err(Error::shape(format!(
                    "row {k} has {} kernels for {} wavelengths",
                    row.len(),
                    wavelengths_m.len()
                )));
            }
            for (kernel, &w) in row.iter().zip(&wavelengths_m) {
                if kernel.wavelength_m != w {
                    return Err(Error::shape(format!("row {k}: kernel wavelength does not match the grid")));
                }
                if kernel.pixel_pitch_m != pitch {
                    return Err(Error::shape("kernels must share one pixel pitch"));
                }
            }
        }
        Ok(Self {
            kernels,
            wavelengths_m,
            designs,
        })
    }

    pub fn num_measurements(&self) -> usize {
        self.kernels.len()
    }

    pub fn num_bands(&self) -> usize {
        self.wavelengths_m.len()
    }

    pub fn kernel(&self, k: usize, s: usize) -> &PsfKernel {
        &self.kernels[k][s]
    }

    pub fn row(&self, k: usize) -> &[PsfKernel] {
        &self.kernels[k]
    }

    pub fn wavelengths_m(&self) -> &[f64] {
        &self.wavelengths_m
    }

    pub fn designs(&self) -> &[LensDesign] {
        &self.designs
    }

    pub fn pixel_pitch_m(&self) -> f64 {
        self.kernels[0][0].pixel_pitch_m
    }
}

/// Unnormalized detector-plane intensity on a periodic `P×P` pixel grid with the
/// optical axis at index `P/2`. `P ≥ min_pixels`.
fn detector_intensity(design: &LensDesign, wavelength: f64, pitch: f64, min_pixels: usize) -> Result<Array2<f64>> {
    let focal = design.focal_length_at(wavelength)?;
    let z = design.focus_distance_m;
    let diameter = design.outer_diameter_m;
    let defocus = 1.0 / z - 1.0 / focal;

    // Output sampling pitch/q keeps the pupil grid at least twice the aperture.
    let ratio = 2.0 * diameter * pitch / (wavelength * z);
    let q = ((ratio - 1e-9).ceil() as usize).max(1);
    let extent = q as f64 * wavelength * z / pitch;

    // Chirp Nyquist across the aperture, oversampled by two.
    let chirp_samples = 2.0 * extent * diameter * defocus.abs() / wavelength;
    let needed = (chirp_samples / q as f64).ceil() as usize;
    let pixels = needed
        .max(min_pixels)
        .max(MIN_PUPIL_SAMPLES.div_ceil(q))
        .next_power_of_two();
    if pixels > MAX_GRID_PIXELS {
        return Err(Error::domain(format!(
            "defocus at {wavelength:.4e} m needs a {pixels}-pixel Fresnel grid (limit {MAX_GRID_PIXELS})"
        )));
    }
    let m = q * pixels;
    let step = extent / m as f64;
    let radius = diameter / 2.0;
    let k_phase = std::f64::consts::PI * defocus / wavelength;

    let signed = |j: usize| -> f64 {
        if j < m / 2 {
            j as f64
        } else {
            j as f64 - m as f64
        }
    };
    let mut field = Array2::from_shape_fn((m, m), |(i, j)| {
        let (x, y) = (signed(i) * step, signed(j) * step);
        let r = (x * x + y * y).sqrt();
        // fractional edge coverage
        let amplitude = ((radius - r) / step + 0.5).clamp(0.0, 1.0);
        if amplitude == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(amplitude, k_phase * r * r)
        }
    });
    Fft2::new(m, m).forward(&mut field);

    let half = pixels as isize / 2;
    Ok(Array2::from_shape_fn((pixels, pixels), |(r, c)| {
        let idx = |p: usize| ((((p as isize - half) * q as isize) % m as isize + m as isize) % m as isize) as usize;
        field[[idx(r), idx(c)]].norm_sqr()
    }))
}

/// Smallest odd side whose centered window keeps `fraction` of the grid energy.
fn capture_side(grid: &Array2<f64>, fraction: f64) -> usize {
    let n = grid.nrows();
    let c = n / 2;
    let total: f64 = grid.sum();
    let max_half = c.min(n - 1 - c);
    let mut inside = grid[[c, c]];
    for h in 0..=max_half {
        if h > 0 {
            let (lo, hi) = (c - h, c + h);
            let ring = grid.slice(s![lo, lo..=hi]).sum()
                + grid.slice(s![hi, lo..=hi]).sum()
                + grid.slice(s![lo + 1..hi, lo]).sum()
                + grid.slice(s![lo + 1..hi, hi]).sum();
            inside += ring;
        }
        if inside >= fraction * total {
            return 2 * h + 1;
        }
    }
    2 * max_half + 1
}

/// PSF of `design` at `wavelength`, sampled at `pixel_pitch` on a `kernel_side²`
/// window and renormalized to unit sum.
pub fn compute_psf(design: &LensDesign, wavelength: f64, pixel_pitch: f64, kernel_side: usize) -> Result<PsfKernel> {
    require_positive("pixel pitch", pixel_pitch)?;
    if kernel_side % 2 == 0 {
        return Err(Error::domain(format!("kernel side must be odd, got {kernel_side}")));
    }
    let grid = detector_intensity(design, wavelength, pixel_pitch, kernel_side + 1)?;
    let total: f64 = grid.sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Numerical {
            iteration: 0,
            reason: format!("psf at {wavelength:.4e} m has no energy"),
        });
    }
    let c = grid.nrows() / 2;
    let h = kernel_side / 2;
    let window = grid.slice(s![c - h..=c + h, c - h..=c + h]).to_owned();
    let kept: f64 = window.sum();
    let captured = kept / total;
    if captured < MIN_CAPTURED_ENERGY {
        return Err(Error::Truncation {
            side: kernel_side,
            captured,
            required: MIN_CAPTURED_ENERGY,
            wavelength_m: wavelength,
        });
    }
    let samples = window.mapv(|v| v / kept);
    Ok(PsfKernel {
        samples,
        pixel_pitch_m: pixel_pitch,
        wavelength_m: wavelength,
        measurement_index: 0,
    })
}

fn check_grid(designs: &[LensDesign], wavelengths: &[f64]) -> Result<()> {
    if designs.is_empty() {
        return Err(Error::domain("at least one lens design is required"));
    }
    if wavelengths.is_empty() {
        return Err(Error::domain("at least one wavelength is required"));
    }
    if wavelengths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("wavelengths must be strictly increasing"));
    }
    Ok(())
}

/// Smallest odd kernel side keeping [`DEFAULT_CAPTURED_ENERGY`] of every kernel's
/// energy across the `(k, s)` grid.
pub fn default_kernel_side(designs: &[LensDesign], wavelengths: &[f64], pixel_pitch: f64) -> Result<usize> {
    check_grid(designs, wavelengths)?;
    require_positive("pixel pitch", pixel_pitch)?;
    let pairs: Vec<(usize, usize)> = (0..designs.len())
        .flat_map(|k| (0..wavelengths.len()).map(move |s| (k, s)))
        .collect();
    let sides = pairs
        .par_iter()
        .map(|&(k, s)| {
            let mut min_pixels = 0;
            loop {
                let grid = detector_intensity(&designs[k], wavelengths[s], pixel_pitch, min_pixels)
                    .map_err(|e| Error::Kernel { k, s, source: Box::new(e) })?;
                let side = capture_side(&grid, DEFAULT_CAPTURED_ENERGY);
                let pixels = grid.nrows();
                if side <= pixels / 2 || 2 * pixels > MAX_GRID_PIXELS {
                    return Ok(side);
                }
                min_pixels = 2 * pixels;
            }
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(sides.into_iter().max().unwrap_or(1))
}

/// Computes `kernels[k][s] = compute_psf(designs[k], wavelengths[s], ...)`.
pub fn build_psf_stack(
    designs: &[LensDesign],
    wavelengths: &[f64],
    pixel_pitch: f64,
    kernel_side: usize,
) -> Result<PsfStack> {
    check_grid(designs, wavelengths)?;
    let pairs: Vec<(usize, usize)> = (0..designs.len())
        .flat_map(|k| (0..wavelengths.len()).map(move |s| (k, s)))
        .collect();
    let flat = pairs
        .par_iter()
        .map(|&(k, s)| {
            compute_psf(&designs[k], wavelengths[s], pixel_pitch, kernel_side)
                .map(|mut kernel| {
                    kernel.measurement_index = k;
                    kernel
                })
                .map_err(|e| Error::Kernel { k, s, source: Box::new(e) })
        })
        .collect::<Result<Vec<PsfKernel>>>()?;
    let mut rows = Vec::with_capacity(designs.len());
    let mut it = flat.into_iter();
    for _ in 0..designs.len() {
        rows.push(it.by_ref().take(wavelengths.len()).collect());
    }
    PsfStack::new(rows, wavelengths.to_vec(), designs.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const NM: f64 = 1e-9;
    const UM: f64 = 1e-6;

    #[test]
    fn focal_length_matches_design_rule() {
        let f = focal_length(1.792e-3, 8.0 * UM, 560.0 * NM).unwrap();
        assert_relative_eq!(f, 0.0256, max_relative = 1e-12);
        let f2 = focal_length(2e-3, 10.0 * UM, 500.0 * NM).unwrap();
        assert_relative_eq!(f2, 0.04, max_relative = 1e-12);
        let half = focal_length(2e-3, 10.0 * UM, 1000.0 * NM).unwrap();
        assert_relative_eq!(half, f2 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn non_positive_inputs_are_domain_errors() {
        assert!(matches!(focal_length(0.0, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(focal_length(1.0, -1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(spectral_resolution(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(spectral_resolution(f64::NAN, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn spectral_resolution_values() {
        assert_relative_eq!(spectral_resolution(8.0 * UM, 0.0256).unwrap(), 10.0 * NM, max_relative = 1e-12);
        assert_relative_eq!(spectral_resolution(10.0 * UM, 0.04).unwrap(), 10.0 * NM, max_relative = 1e-12);
        assert_relative_eq!(
            spectral_resolution(16.0 * UM, 4.0 * 0.0256).unwrap(),
            spectral_resolution(8.0 * UM, 0.0256).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn constructors_agree() {
        let a = LensDesign::focused_at(560.0 * NM, 8.0 * UM, 0.0256).unwrap();
        assert_relative_eq!(a.outer_diameter_m, 1.792e-3, max_relative = 1e-12);
        let b = LensDesign::with_diameter(a.outer_diameter_m, 8.0 * UM, 0.0256).unwrap();
        assert_relative_eq!(b.focused_wavelength_m, 560.0 * NM, max_relative = 1e-12);
        let c = LensDesign::with_detector_at_focus(a.outer_diameter_m, 8.0 * UM, 560.0 * NM).unwrap();
        assert_relative_eq!(c.focus_distance_m, 0.0256, max_relative = 1e-12);
        let d = LensDesign::with_hole_for(a.outer_diameter_m, 0.0256, 560.0 * NM).unwrap();
        assert_relative_eq!(d.smallest_hole_m, 8.0 * UM, max_relative = 1e-12);
    }

    #[test]
    fn kernel_validation() {
        let mut bad = Array2::zeros((3, 3));
        bad[[1, 1]] = 1.0;
        assert!(PsfKernel::from_samples(bad.clone(), 1e-6, 5e-7, 0).is_ok());
        assert!(PsfKernel::from_samples(Array2::zeros((2, 2)), 1e-6, 5e-7, 0).is_err());
        bad[[0, 0]] = -0.1;
        assert!(PsfKernel::from_samples(bad, 1e-6, 5e-7, 0).is_err());
        assert!(PsfKernel::from_samples(Array2::from_elem((3, 3), 0.2), 1e-6, 5e-7, 0).is_err());
    }

    #[test]
    fn even_side_rejected() {
        let design = LensDesign::focused_at(560.0 * NM, 8.0 * UM, 0.0256).unwrap();
        assert!(matches!(compute_psf(&design, 560.0 * NM, 4.0 * UM, 32), Err(Error::Domain(_))));
    }

    #[test]
    fn tiny_window_reports_truncation() {
        let design = LensDesign::focused_at(430.0 * NM, 8.0 * UM, 0.0256).unwrap();
        match compute_psf(&design, 710.0 * NM, 4.0 * UM, 9) {
            Err(Error::Truncation { side, captured, .. }) => {
                assert_eq!(side, 9);
                assert!(captured < MIN_CAPTURED_ENERGY);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn in_focus_kernel_is_normalized_and_diffraction_limited() {
        let design = LensDesign::focused_at(560.0 * NM, 8.0 * UM, 0.0256).unwrap();
        let kernel = compute_psf(&design, 560.0 * NM, 4.0 * UM, 101).unwrap();
        assert!((kernel.samples().sum() - 1.0).abs() < 1e-9);
        assert!(kernel.samples().iter().all(|v| *v >= 0.0));
        let fwhm = kernel.fwhm_m();
        assert!(fwhm > 0.5 * 8.0 * UM && fwhm < 2.0 * 8.0 * UM, "fwhm {fwhm}");
        // Airy peak for pitch δ/2: (π/4)(Δ/δ)² of the total energy.
        assert_relative_eq!(kernel.peak(), std::f64::consts::PI / 16.0, max_relative = 0.03);
    }

    #[test]
    fn kernels_are_deterministic() {
        let design = LensDesign::focused_at(500.0 * NM, 8.0 * UM, 0.0256).unwrap();
        let a = compute_psf(&design, 520.0 * NM, 4.0 * UM, 63).unwrap();
        let b = compute_psf(&design, 520.0 * NM, 4.0 * UM, 63).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn capture_side_of_delta_is_one() {
        let mut grid = Array2::zeros((8, 8));
        grid[[4, 4]] = 3.0;
        assert_eq!(capture_side(&grid, 0.999), 1);
        grid[[5, 4]] = 3.0;
        assert_eq!(capture_side(&grid, 0.999), 3);
    }
}
