//! Reconstruction quality: PSNR, SSIM, spectral angle (SAM) and NMSE.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2, Array3, Axis, Zip};

use crate::error::{Error, Result};

pub const PEAK: f64 = 1.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Array3<f64>, b: &Array3<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn mse(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut acc = 0.0;
    for (x, y) in a.zip(b) {
        acc += (x - y) * (x - y);
        n += 1;
    }
    acc / n.max(1) as f64
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// `10·log₁₀(peak²/MSE)` over every voxel; `+∞` when the cubes are identical.
pub fn psnr(estimate: &Array3<f64>, truth: &Array3<f64>, peak: f64) -> Result<f64> {
    same_shape(estimate, truth)?;
    if !(peak > 0.0) {
        return Err(Error::domain("psnr peak must be positive"));
    }
    Ok(psnr_from_mse(mse(estimate.iter().copied(), truth.iter().copied()), peak))
}

pub fn per_band_psnr(estimate: &Array3<f64>, truth: &Array3<f64>, peak: f64) -> Result<Vec<f64>> {
    same_shape(estimate, truth)?;
    Ok(estimate
        .axis_iter(Axis(0))
        .zip(truth.axis_iter(Axis(0)))
        .map(|(a, b)| psnr_from_mse(mse(a.iter().copied(), b.iter().copied()), peak))
        .collect())
}

fn gaussian_window() -> Array1<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w = Array1::from_shape_fn(SSIM_WINDOW, |i| {
        let d = i as f64 - c;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let total = w.sum();
    w / total
}

/// Separable "valid" filtering: output is `(rows − 10)×(cols − 10)`.
fn filter_valid(img: &Array2<f64>, w: &Array1<f64>) -> Array2<f64> {
    let (rows, cols) = img.dim();
    let n = w.len();
    let (out_r, out_c) = (rows + 1 - n, cols + 1 - n);
    let mut tmp = Array2::<f64>::zeros((rows, out_c));
    for r in 0..rows {
        for c in 0..out_c {
            tmp[[r, c]] = (0..n).map(|k| w[k] * img[[r, c + k]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((out_r, out_c));
    for r in 0..out_r {
        for c in 0..out_c {
            out[[r, c]] = (0..n).map(|k| w[k] * tmp[[r + k, c]]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM of two images.
pub fn ssim_image(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, peak: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let (rows, cols) = a.dim();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::config(format!(
            "{rows}x{cols} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let w = gaussian_window();
    let (a, b) = (a.to_owned(), b.to_owned());
    let mu_a = filter_valid(&a, &w);
    let mu_b = filter_valid(&b, &w);
    let aa = filter_valid(&(&a * &a), &w);
    let bb = filter_valid(&(&b * &b), &w);
    let ab = filter_valid(&(&a * &b), &w);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut total = 0.0;
    Zip::from(&mu_a)
        .and(&mu_b)
        .and(&aa)
        .and(&bb)
        .and(&ab)
        .for_each(|&ma, &mb, &saa, &sbb, &sab| {
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        });
    Ok(total / mu_a.len() as f64)
}

/// SSIM averaged over bands (11×11 Gaussian window, σ = 1.5, peak 1).
pub fn ssim(estimate: &Array3<f64>, truth: &Array3<f64>) -> Result<f64> {
    same_shape(estimate, truth)?;
    let bands = estimate.len_of(Axis(0));
    let mut total = 0.0;
    for (a, b) in estimate.axis_iter(Axis(0)).zip(truth.axis_iter(Axis(0))) {
        total += ssim_image(a, b, PEAK)?;
    }
    Ok(total / bands as f64)
}

/// Mean spectral angle in degrees over pixels where both spectra are nonzero.
pub fn sam(estimate: &Array3<f64>, truth: &Array3<f64>) -> Result<f64> {
    same_shape(estimate, truth)?;
    let (bands, rows, cols) = estimate.dim();
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..rows {
        for c in 0..cols {
            let (mut na, mut nb) = (0.0, 0.0);
            for s in 0..bands {
                na += estimate[[s, r, c]].powi(2);
                nb += truth[[s, r, c]].powi(2);
            }
            if na > 0.0 && nb > 0.0 {
                let (na, nb) = (na.sqrt(), nb.sqrt());
                let (mut diff, mut sum) = (0.0, 0.0);
                for s in 0..bands {
                    let (a, b) = (estimate[[s, r, c]] / na, truth[[s, r, c]] / nb);
                    diff += (a - b) * (a - b);
                    sum += (a + b) * (a + b);
                }
                // half-angle form stays accurate near 0 and π
                total += (2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::domain("spectral angle undefined: every pixel has a zero spectrum"));
    }
    Ok(total / count as f64)
}

/// `100·‖x̂ − x‖²/‖x‖²`.
pub fn nmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::shape(format!("{} vs {} samples", estimate.len(), truth.len())));
    }
    let reference: f64 = truth.iter().map(|v| v * v).sum();
    if reference == 0.0 {
        return Err(Error::domain("nmse reference spectrum is zero"));
    }
    let err: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(100.0 * err / reference)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub sam_deg: f64,
    pub nmse_percent: f64,
    pub per_band_psnr: Vec<f64>,
}

impl EvaluationReport {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["psnr_db".to_string(), "ssim".into(), "sam_deg".into(), "nmse_percent".into()];
        cols.extend((0..self.per_band_psnr.len()).map(|s| format!("psnr_band_{s}")));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut vals = vec![
            self.psnr_db.to_string(),
            self.ssim.to_string(),
            self.sam_deg.to_string(),
            self.nmse_percent.to_string(),
        ];
        vals.extend(self.per_band_psnr.iter().map(|v| v.to_string()));
        vals.join(",")
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", self.csv_header(), self.csv_row())
    }
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "PSNR  {:>8.2} dB", self.psnr_db)?;
        writeln!(f, "SSIM  {:>8.4}", self.ssim)?;
        writeln!(f, "SAM   {:>8.2} deg", self.sam_deg)?;
        writeln!(f, "NMSE  {:>8.3} %", self.nmse_percent)?;
        let bands: Vec<String> = self.per_band_psnr.iter().map(|v| format!("{v:.2}")).collect();
        write!(f, "band PSNR (dB): {}", bands.join(" "))
    }
}

pub fn evaluate(estimate: &Array3<f64>, truth: &Array3<f64>) -> Result<EvaluationReport> {
    same_shape(estimate, truth)?;
    let flat_estimate: Vec<f64> = estimate.iter().copied().collect();
    let flat_truth: Vec<f64> = truth.iter().copied().collect();
    Ok(EvaluationReport {
        psnr_db: psnr(estimate, truth, PEAK)?,
        ssim: ssim(estimate, truth)?,
        sam_deg: sam(estimate, truth)?,
        nmse_percent: nmse(&flat_estimate, &flat_truth)?,
        per_band_psnr: per_band_psnr(estimate, truth, PEAK)?,
    })
}
