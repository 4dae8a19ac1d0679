//! Planned 2D complex FFTs over row-major `Array2` grids.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            // a row has `cols` entries
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn forward(&self, grid: &mut Array2<Complex64>) {
        self.run(grid, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform including the `1/(rows·cols)` normalization.
    pub fn inverse(&self, grid: &mut Array2<Complex64>) {
        self.run(grid, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        grid.mapv_inplace(|v| v * scale);
    }

    pub fn forward_real(&self, grid: ArrayView2<'_, f64>) -> Array2<Complex64> {
        let mut out = grid.mapv(|v| Complex64::new(v, 0.0));
        self.forward(&mut out);
        out
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, mut spectrum: Array2<Complex64>) -> Array2<f64> {
        self.inverse(&mut spectrum);
        spectrum.mapv(|v| v.re)
    }

    fn run(&self, grid: &mut Array2<Complex64>, row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(grid.dim(), (self.rows, self.cols), "fft grid shape");
        if !grid.is_standard_layout() {
            *grid = grid.as_standard_layout().to_owned();
        }
        let data = grid.as_slice_mut().expect("standard layout");
        row.process(data);

        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = data[r * self.cols + c];
            }
            col.process(&mut column);
            for r in 0..self.rows {
                data[r * self.cols + c] = column[r];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_round_trip() {
        let fft = Fft2::new(6, 10);
        let grid = Array2::from_shape_fn((6, 10), |(r, c)| ((r * 7 + c * 3) % 5) as f64 - 1.5);
        let back = fft.inverse_real(fft.forward_real(grid.view()));
        for (a, b) in grid.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dc_bin_is_sum() {
        let fft = Fft2::new(4, 8);
        let grid = Array2::from_elem((4, 8), 0.25);
        let spec = fft.forward_real(grid.view());
        assert!((spec[[0, 0]].re - 8.0).abs() < 1e-12);
        assert!(spec.iter().skip(1).all(|v| v.norm() < 1e-12));
    }
}
