//! Kronecker sparsifying basis: a periodic 2D Symmlet-8 wavelet transform of every
//! band followed by an orthonormal DCT-II along the spectral axis, plus the
//! soft-thresholding prox of the ℓ₁ norm.

use ndarray::{Array, Array2, Array3, ArrayViewMut1, ArrayViewMut2, Axis, Dimension, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::SpectralCube;

/// Symmlet-8 orthonormal scaling (lowpass reconstruction) filter, 16 taps.
/// Values follow the PyWavelets `sym8` table (`rec_lo`).
pub const SYM8_LOWPASS: [f64; 16] = [
    0.0018899503327594609,
    -0.0003029205147213668,
    -0.01495225833704823,
    0.003808752013890615,
    0.049137179673607506,
    -0.027219029917056003,
    -0.05194583810770904,
    0.3644418948353314,
    0.7771857517005235,
    0.4813596512583722,
    -0.061273359067658524,
    -0.1432942383508097,
    0.007607487324917605,
    0.03169508781149298,
    -0.0005421323317911481,
    -0.0033824159510061256,
];

pub const BASIS_ID: &str = "sym8-periodic+dct2";

/// Quadrature-mirror highpass `g[k] = (−1)^k·h[L−1−k]`.
pub fn sym8_highpass() -> [f64; 16] {
    let mut g = [0.0; 16];
    for (k, v) in g.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *v = sign * SYM8_LOWPASS[15 - k];
    }
    g
}

/// `log₂(min(N_x, N_y)) − 2`, reduced until both sides are divisible by
/// `2^levels`, and at least 1.
pub fn default_levels(rows: usize, cols: usize) -> usize {
    let min = rows.min(cols).max(1);
    let mut levels = (usize::BITS - 1 - min.leading_zeros()) as usize;
    levels = levels.saturating_sub(2).max(1);
    while levels > 1 && (rows % (1 << levels) != 0 || cols % (1 << levels) != 0) {
        levels -= 1;
    }
    levels
}

fn check_levels(rows: usize, cols: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::config("wavelet levels must be at least 1"));
    }
    let block = 1usize.checked_shl(levels as u32).unwrap_or(0);
    if block == 0 || rows % block != 0 || cols % block != 0 {
        return Err(Error::config(format!(
            "{rows}x{cols} grid is not divisible by 2^{levels}"
        )));
    }
    Ok(())
}

fn analyze_line(mut line: ArrayViewMut1<'_, f64>, scratch: &mut Vec<f64>, high: &[f64; 16]) {
    let n = line.len();
    scratch.clear();
    scratch.extend(line.iter().copied());
    let half = n / 2;
    for i in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for k in 0..16 {
            let v = scratch[(2 * i + k) % n];
            a += SYM8_LOWPASS[k] * v;
            d += high[k] * v;
        }
        line[i] = a;
        line[half + i] = d;
    }
}

fn synthesize_line(mut line: ArrayViewMut1<'_, f64>, scratch: &mut Vec<f64>, high: &[f64; 16]) {
    let n = line.len();
    scratch.clear();
    scratch.extend(line.iter().copied());
    line.fill(0.0);
    let half = n / 2;
    for i in 0..half {
        let (a, d) = (scratch[i], scratch[half + i]);
        for k in 0..16 {
            line[(2 * i + k) % n] += SYM8_LOWPASS[k] * a + high[k] * d;
        }
    }
}

fn for_each_line(mut block: ArrayViewMut2<'_, f64>, axis: Axis, f: impl Fn(ArrayViewMut1<'_, f64>, &mut Vec<f64>)) {
    let mut scratch = Vec::new();
    for line in block.lanes_mut(axis) {
        f(line, &mut scratch);
    }
}

/// In-place multilevel periodic 2D DWT (Mallat layout: coarsest approximation
/// in the top-left corner).
pub fn dwt2_forward(image: &mut Array2<f64>, levels: usize) -> Result<()> {
    let (rows, cols) = image.dim();
    check_levels(rows, cols, levels)?;
    let high = sym8_highpass();
    let (mut r, mut c) = (rows, cols);
    for _ in 0..levels {
        let mut block = image.slice_mut(ndarray::s![..r, ..c]);
        for_each_line(block.view_mut(), Axis(1), |l, s| analyze_line(l, s, &high));
        for_each_line(block, Axis(0), |l, s| analyze_line(l, s, &high));
        r /= 2;
        c /= 2;
    }
    Ok(())
}

pub fn dwt2_inverse(coeffs: &mut Array2<f64>, levels: usize) -> Result<()> {
    let (rows, cols) = coeffs.dim();
    check_levels(rows, cols, levels)?;
    let high = sym8_highpass();
    for level in (0..levels).rev() {
        let (r, c) = (rows >> level, cols >> level);
        let mut block = coeffs.slice_mut(ndarray::s![..r, ..c]);
        for_each_line(block.view_mut(), Axis(0), |l, s| synthesize_line(l, s, &high));
        for_each_line(block, Axis(1), |l, s| synthesize_line(l, s, &high));
    }
    Ok(())
}

/// Orthonormal DCT-II matrix, `D[k][n] = α_k·cos(π(2n+1)k / 2S)`.
pub fn dct_matrix(size: usize) -> Array2<f64> {
    let n = size as f64;
    Array2::from_shape_fn((size, size), |(k, i)| {
        let alpha = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos()
    })
}

/// Applies `matrix` to the spectral vector of every pixel.
fn mix_bands(values: &Array3<f64>, matrix: &Array2<f64>) -> Array3<f64> {
    let (bands, rows, cols) = values.dim();
    let flat = values
        .view()
        .into_shape_with_order((bands, rows * cols))
        .expect("contiguous cube");
    matrix
        .dot(&flat)
        .into_shape_with_order((bands, rows, cols))
        .expect("same element count")
}

/// DCT-II along the spectral axis.
pub fn dct_bands(values: &Array3<f64>) -> Array3<f64> {
    mix_bands(&values.as_standard_layout().to_owned(), &dct_matrix(values.len_of(Axis(0))))
}

pub fn idct_bands(values: &Array3<f64>) -> Array3<f64> {
    mix_bands(&values.as_standard_layout().to_owned(), &dct_matrix(values.len_of(Axis(0))).reversed_axes())
}

/// Per-band 2D wavelet analysis of a cube.
pub fn wavelet_bands(values: &Array3<f64>, levels: usize) -> Result<Array3<f64>> {
    let (_, rows, cols) = values.dim();
    check_levels(rows, cols, levels)?;
    let mut out = values.to_owned();
    out.axis_iter_mut(Axis(0)).into_par_iter().try_for_each(|mut band| {
        let mut img = band.to_owned();
        dwt2_forward(&mut img, levels)?;
        band.assign(&img);
        Ok::<_, Error>(())
    })?;
    Ok(out)
}

pub fn inverse_wavelet_bands(values: &Array3<f64>, levels: usize) -> Result<Array3<f64>> {
    let (_, rows, cols) = values.dim();
    check_levels(rows, cols, levels)?;
    let mut out = values.to_owned();
    out.axis_iter_mut(Axis(0)).into_par_iter().try_for_each(|mut band| {
        let mut img = band.to_owned();
        dwt2_inverse(&mut img, levels)?;
        band.assign(&img);
        Ok::<_, Error>(())
    })?;
    Ok(out)
}

/// The transform `Φ` for one cube geometry, with the DCT matrix cached.
#[derive(Debug, Clone)]
pub struct KroneckerBasis {
    levels: usize,
    dims: (usize, usize, usize),
    dct: Array2<f64>,
    idct: Array2<f64>,
}

impl KroneckerBasis {
    pub fn new(dims: (usize, usize, usize), levels: usize) -> Result<Self> {
        check_levels(dims.1, dims.2, levels)?;
        if dims.0 == 0 {
            return Err(Error::config("cube needs at least one band"));
        }
        let dct = dct_matrix(dims.0);
        let idct = dct.t().to_owned();
        Ok(Self { levels, dims, dct, idct })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    fn check(&self, dim: (usize, usize, usize)) -> Result<()> {
        if dim != self.dims {
            return Err(Error::shape(format!("basis built for {:?}, got {dim:?}", self.dims)));
        }
        Ok(())
    }

    pub fn forward(&self, values: &Array3<f64>) -> Result<Array3<f64>> {
        self.check(values.dim())?;
        Ok(mix_bands(&wavelet_bands(values, self.levels)?, &self.dct))
    }

    pub fn inverse(&self, coeffs: &Array3<f64>) -> Result<Array3<f64>> {
        self.check(coeffs.dim())?;
        inverse_wavelet_bands(&mix_bands(&coeffs.as_standard_layout().to_owned(), &self.idct), self.levels)
    }
}

/// Transform-domain representation of a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientCube {
    pub coeffs: Array3<f64>,
    pub wavelet_levels: usize,
    pub basis_id: String,
    wavelengths_m: Vec<f64>,
    pixel_pitch_m: f64,
}

impl CoefficientCube {
    /// Coefficients for a cube on the given wavelength grid.
    pub fn new(coeffs: Array3<f64>, wavelet_levels: usize, wavelengths_m: Vec<f64>, pixel_pitch_m: f64) -> Self {
        Self {
            coeffs,
            wavelet_levels,
            basis_id: BASIS_ID.to_string(),
            wavelengths_m,
            pixel_pitch_m,
        }
    }
}

pub fn analysis(cube: &SpectralCube, levels: usize) -> Result<CoefficientCube> {
    let basis = KroneckerBasis::new(cube.dims(), levels)?;
    Ok(CoefficientCube::new(
        basis.forward(cube.values())?,
        levels,
        cube.wavelengths_m().to_vec(),
        cube.pixel_pitch_m(),
    ))
}

pub fn synthesis(coeffs: &CoefficientCube) -> Result<SpectralCube> {
    if coeffs.basis_id != BASIS_ID {
        return Err(Error::config(format!("unknown basis {}", coeffs.basis_id)));
    }
    let basis = KroneckerBasis::new(coeffs.coeffs.dim(), coeffs.wavelet_levels)?;
    SpectralCube::new(
        basis.inverse(&coeffs.coeffs)?,
        coeffs.wavelengths_m.clone(),
        coeffs.pixel_pitch_m,
    )
}

/// `sign(w)·max(|w| − τ, 0)` with `sign(w) = 1` for `w > 0` and `−1` otherwise.
#[inline]
pub fn shrink(w: f64, tau: f64) -> f64 {
    let sign = if w > 0.0 { 1.0 } else { -1.0 };
    sign * (w.abs() - tau).max(0.0)
}

pub fn soft_threshold<D: Dimension>(w: &Array<f64, D>, tau: f64) -> Result<Array<f64, D>> {
    let mut out = w.clone();
    soft_threshold_inplace(&mut out, tau)?;
    Ok(out)
}

pub fn soft_threshold_inplace<D: Dimension>(w: &mut Array<f64, D>, tau: f64) -> Result<()> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::domain(format!("threshold must be nonnegative, got {tau}")));
    }
    Zip::from(w).for_each(|v| *v = shrink(*v, tau));
    Ok(())
}
