#![allow(dead_code)]

use csid::model::{generate_mask, CodedApertureSet, DetectorResponse, SystemOperator};
use csid::optics::{build_psf_stack, LensDesign, PsfStack};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NM: f64 = 1e-9;
pub const F0: f64 = 0.0256;

/// Hole size giving 300/7 nm resolution at `F0`, the eight-band desk grid.
pub fn desk_hole() -> f64 {
    (300.0 / 7.0 * NM * F0 / 4.0).sqrt()
}

pub fn desk_pitch() -> f64 {
    desk_hole() / 2.0
}

pub fn fresnel_psfs(wavelengths_nm: &[f64], focus_nm: &[f64], side: usize) -> PsfStack {
    let designs: Vec<LensDesign> = focus_nm
        .iter()
        .map(|&w| LensDesign::focused_at(w * NM, desk_hole(), F0).unwrap())
        .collect();
    let wl: Vec<f64> = wavelengths_nm.iter().map(|w| w * NM).collect();
    build_psf_stack(&designs, &wl, desk_pitch(), side).unwrap()
}

pub struct Instance {
    pub op: SystemOperator,
    pub masks: CodedApertureSet,
    pub response: DetectorResponse,
    pub psfs: PsfStack,
}

/// Fresnel kernels, Bernoulli(1/2) mask and random detector gains.
pub fn fresnel_instance(n: usize, wavelengths_nm: &[f64], focus_nm: &[f64], seed: u64) -> Instance {
    let psfs = fresnel_psfs(wavelengths_nm, focus_nm, 127);
    let masks = generate_mask((n, n), wavelengths_nm.len(), 0.5, seed, desk_pitch()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let response = DetectorResponse::new((0..wavelengths_nm.len()).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap();
    let op = SystemOperator::new(&masks, &response, &psfs).unwrap();
    Instance {
        op,
        masks,
        response,
        psfs,
    }
}

pub fn random_array3(dim: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
}

pub fn dot(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &Array3<f64>) -> f64 {
    dot(a, a).sqrt()
}

pub fn delta(side: usize) -> Array2<f64> {
    let mut h = Array2::zeros((side, side));
    h[[side / 2, side / 2]] = 1.0;
    h
}

/// `HC` assembled column by column with explicit index arithmetic: voxel
/// `(s, i, j)` spreads `b_s c_s[i,j] h_{k,s}[p,q]` to pixel
/// `(i + p − c, j + q − c) mod N` of frame `k`.
pub fn dense_system(kernels: &[Vec<Array2<f64>>], masks: &Array3<f64>, gains: &[f64]) -> DMatrix<f64> {
    let (bands, rows, cols) = masks.dim();
    let k_count = kernels.len();
    let mut a = DMatrix::zeros(k_count * rows * cols, bands * rows * cols);
    for s in 0..bands {
        for i in 0..rows {
            for j in 0..cols {
                let col = (s * rows + i) * cols + j;
                let weight = gains[s] * masks[[s, i, j]];
                for (k, row) in kernels.iter().enumerate() {
                    let h = &row[s];
                    let c = (h.nrows() / 2) as isize;
                    for ((p, q), &v) in h.indexed_iter() {
                        let m = (i as isize + p as isize - c).rem_euclid(rows as isize) as usize;
                        let n = (j as isize + q as isize - c).rem_euclid(cols as isize) as usize;
                        a[((k * rows + m) * cols + n, col)] += weight * v;
                    }
                }
            }
        }
    }
    a
}

pub fn flat(x: &Array3<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().copied())
}

pub fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Row-major kernels of each measurement row.
pub fn kernel_arrays(psfs: &PsfStack) -> Vec<Vec<Array2<f64>>> {
    (0..psfs.num_measurements())
        .map(|k| psfs.row(k).iter().map(|h| h.samples().clone()).collect())
        .collect()
}
