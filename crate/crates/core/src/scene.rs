//! Synthetic piecewise-smooth hyperspectral scenes for demos and tests.
//!
//! A scene is a shaded background plus a stack of occluding objects (ellipses
//! and rectangles). Each object gets a smooth reflectance-like spectrum built
//! from a baseline and one or two Gaussian bumps, and a linear shading ramp.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::SpectralCube;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, angle: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y <= y1 && x >= x0 && x <= x1,
        }
    }
}

struct Object {
    shape: Shape,
    spectrum: Vec<f64>,
    shade: (f64, f64, f64),
}

fn random_spectrum(rng: &mut ChaCha8Rng, wavelengths_nm: &[f64]) -> Vec<f64> {
    let base = rng.random_range(0.05..0.3);
    let bumps: Vec<(f64, f64, f64)> = (0..rng.random_range(1..=2))
        .map(|_| {
            (
                rng.random_range(380.0..740.0),
                rng.random_range(40.0..130.0),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    wavelengths_nm
        .iter()
        .map(|&w| {
            base + bumps
                .iter()
                .map(|&(c, width, amp)| amp * (-((w - c) / width).powi(2) / 2.0).exp())
                .sum::<f64>()
        })
        .collect()
}

/// Deterministic synthetic scene normalized to `[0, 1]`.
pub fn synthetic_scene(rows: usize, cols: usize, wavelengths_m: &[f64], pixel_pitch_m: f64, seed: u64) -> Result<SpectralCube> {
    if rows == 0 || cols == 0 || wavelengths_m.is_empty() {
        return Err(Error::domain("scene needs nonzero size and at least one band"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nm: Vec<f64> = wavelengths_m.iter().map(|w| w * 1e9).collect();
    let (h, w) = (rows as f64, cols as f64);

    let background = random_spectrum(&mut rng, &nm);
    let count = rng.random_range(10..16);
    let objects: Vec<Object> = (0..count)
        .map(|_| {
            let shape = if rng.random_bool(0.6) {
                Shape::Ellipse {
                    cy: rng.random_range(0.0..h),
                    cx: rng.random_range(0.0..w),
                    ry: rng.random_range(0.06..0.25) * h,
                    rx: rng.random_range(0.06..0.25) * w,
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                }
            } else {
                let (y0, x0) = (rng.random_range(0.0..h * 0.85), rng.random_range(0.0..w * 0.85));
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + rng.random_range(0.08..0.35) * h,
                    x1: x0 + rng.random_range(0.08..0.35) * w,
                }
            };
            Object {
                shape,
                spectrum: random_spectrum(&mut rng, &nm),
                shade: (
                    rng.random_range(0.55..1.0),
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.4..0.4),
                ),
            }
        })
        .collect();

    let mut values = Array3::zeros((wavelengths_m.len(), rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let (yn, xn) = (y / h - 0.5, x / w - 0.5);
            let (spectrum, gain) = match objects.iter().rev().find(|o| o.shape.contains(y, x)) {
                Some(o) => (&o.spectrum, (o.shade.0 + o.shade.1 * yn + o.shade.2 * xn).max(0.05)),
                None => (&background, 0.6 + 0.3 * xn - 0.2 * yn),
            };
            for (s, &v) in spectrum.iter().enumerate() {
                values[[s, r, c]] = v * gain;
            }
        }
    }
    Ok(SpectralCube::new(values, wavelengths_m.to_vec(), pixel_pitch_m)?.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_normalized_and_deterministic() {
        let wl: Vec<f64> = (0..5).map(|i| (420.0 + 60.0 * i as f64) * 1e-9).collect();
        let a = synthetic_scene(32, 24, &wl, 8e-6, 3).unwrap();
        let b = synthetic_scene(32, 24, &wl, 8e-6, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), (5, 32, 24));
        let max = a.values().iter().copied().fold(0.0, f64::max);
        let min = a.values().iter().copied().fold(1.0, f64::min);
        assert!((max - 1.0).abs() < 1e-12);
        assert!(min >= 0.0);
        let c = synthetic_scene(32, 24, &wl, 8e-6, 4).unwrap();
        assert_ne!(a, c);
    }
}
