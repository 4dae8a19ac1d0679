//! ADMM reconstruction for
//!
//! ```text
//! min ‖Φx‖₁  subject to  ‖y − HCx‖₂ ≤ ε
//! ```
//!
//! split as `z1 = x`, `z2 = HCx`. Each sweep solves
//! `(I + CᴴHᴴHC)x = z1 + d1 + CᴴHᴴ(z2 + d2)` by conjugate gradients, shrinks
//! `x − d1` in the transform domain with threshold `1/μ`, projects
//! `HCx − d2` onto the ε-ball around `y`, and updates the duals by subtracting
//! the constraint residuals.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CodedApertureSet, DetectorResponse, MeasurementSet, SpectralCube, SystemOperator};
use crate::optics::PsfStack;
use crate::transforms::{default_levels, soft_threshold_inplace, KroneckerBasis};

/// Relative slack allowed on the data constraint of the returned iterate.
pub const FEASIBILITY_TOL: f64 = 1e-2;
const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub mu: f64,
    /// Data-fidelity radius; `None` uses `σ·√(K·N_x·N_y)`.
    pub epsilon: Option<f64>,
    pub max_admm_iters: usize,
    pub admm_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// `None` uses [`default_levels`].
    pub wavelet_levels: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            epsilon: None,
            max_admm_iters: 100,
            admm_tol: 1e-4,
            cg_tol: 1e-6,
            cg_max_iters: 50,
            wavelet_levels: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::config(format!("mu must be positive, got {}", self.mu)));
        }
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps >= 0.0) {
                return Err(Error::config(format!("epsilon must be nonnegative, got {eps}")));
            }
        }
        if !(self.admm_tol > 0.0) || !(self.cg_tol > 0.0) {
            return Err(Error::config("tolerances must be positive"));
        }
        if self.max_admm_iters == 0 || self.cg_max_iters == 0 {
            return Err(Error::config("iteration limits must be at least 1"));
        }
        if self.wavelet_levels == Some(0) {
            return Err(Error::config("wavelet levels must be at least 1"));
        }
        Ok(())
    }
}

fn dot(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &Array3<f64>) -> f64 {
    dot(a, a).sqrt()
}

fn all_finite(a: &Array3<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Array3<f64>,
    pub iterations: usize,
    /// `‖(I + CᴴHᴴHC)x − rhs‖₂ / ‖rhs‖₂` at exit.
    pub relative_residual: f64,
}

/// `(I + CᴴHᴴHC)·x`.
pub fn normal_apply(op: &SystemOperator, x: &Array3<f64>) -> Result<Array3<f64>> {
    Ok(op.gram(x)? + x)
}

/// Conjugate gradients on `(I + CᴴHᴴHC)x = rhs`, optionally warm-started.
pub fn cg_solve_normal(
    op: &SystemOperator,
    rhs: &Array3<f64>,
    start: Option<&Array3<f64>>,
    cg_tol: f64,
    cg_max_iters: usize,
) -> Result<CgOutcome> {
    if !all_finite(rhs) {
        return Err(Error::Numerical {
            iteration: 0,
            reason: "conjugate gradient right-hand side is not finite".into(),
        });
    }
    let rhs_norm = norm(rhs);
    if rhs_norm == 0.0 {
        return Ok(CgOutcome {
            x: Array3::zeros(rhs.dim()),
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut x = match start {
        Some(x0) => x0.clone(),
        None => Array3::zeros(rhs.dim()),
    };
    let mut r = rhs - &normal_apply(op, &x)?;
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = cg_tol * rhs_norm;
    let mut iterations = 0;
    while rr.sqrt() > target && iterations < cg_max_iters {
        let ap = normal_apply(op, &p)?;
        let pap = dot(&p, &ap);
        if !(pap.is_finite() && pap > 0.0) {
            return Err(Error::Numerical {
                iteration: iterations,
                reason: format!("conjugate gradient curvature {pap}"),
            });
        }
        let alpha = rr / pap;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() {
            return Err(Error::Numerical {
                iteration: iterations,
                reason: "conjugate gradient residual is not finite".into(),
            });
        }
        let beta = rr_next / rr;
        p = &r + &(p * beta);
        rr = rr_next;
        iterations += 1;
    }
    Ok(CgOutcome {
        x,
        iterations,
        relative_residual: rr.sqrt() / rhs_norm,
    })
}

/// `Φ⁻¹(soft(Φ(x − d1), 1/μ))` with a prepared basis.
pub fn shrink_in_basis(basis: &KroneckerBasis, x: &Array3<f64>, d1: &Array3<f64>, mu: f64) -> Result<Array3<f64>> {
    if !(mu > 0.0) {
        return Err(Error::domain(format!("mu must be positive, got {mu}")));
    }
    let mut coeffs = basis.forward(&(x - d1))?;
    soft_threshold_inplace(&mut coeffs, 1.0 / mu)?;
    basis.inverse(&coeffs)
}

pub fn update_z1(x: &Array3<f64>, d1: &Array3<f64>, mu: f64, levels: usize) -> Result<Array3<f64>> {
    let basis = KroneckerBasis::new(x.dim(), levels)?;
    shrink_in_basis(&basis, x, d1, mu)
}

/// Euclidean projection of `s` onto `{z : ‖z − y‖₂ ≤ ε}`.
pub fn update_z2(s: &Array3<f64>, y: &Array3<f64>, epsilon: f64) -> Array3<f64> {
    let diff = s - y;
    let dist = norm(&diff);
    if dist <= epsilon {
        s.clone()
    } else {
        y + &(diff * (epsilon / dist))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `‖y − HCx‖₂` of the new iterate.
    pub misfit: f64,
    /// `‖Φx‖₁`.
    pub l1_norm: f64,
    pub rel_change: f64,
    pub cg_iters: usize,
}

pub fn history_csv(history: &[IterationRecord]) -> String {
    let mut out = String::from("iter,misfit,l1_norm,rel_change,cg_iters\n");
    for r in history {
        out.push_str(&format!("{},{},{},{},{}\n", r.iter, r.misfit, r.l1_norm, r.rel_change, r.cg_iters));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: Array3<f64>,
    pub z1: Array3<f64>,
    pub z2: Array3<f64>,
    pub d1: Array3<f64>,
    pub d2: Array3<f64>,
    pub iter: usize,
    pub history: Vec<IterationRecord>,
}

/// One reconstruction problem: operator, data, radius and parameters.
pub struct Admm<'a> {
    op: &'a SystemOperator,
    basis: KroneckerBasis,
    y: &'a Array3<f64>,
    epsilon: f64,
    config: SolverConfig,
}

impl<'a> Admm<'a> {
    pub fn new(op: &'a SystemOperator, y: &'a Array3<f64>, epsilon: f64, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::config(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        if y.dim() != op.frame_dim() {
            return Err(Error::shape(format!(
                "measurements {:?}, operator expects {:?}",
                y.dim(),
                op.frame_dim()
            )));
        }
        let dims = op.cube_dim();
        let levels = config.wavelet_levels.unwrap_or_else(|| default_levels(dims.1, dims.2));
        Ok(Self {
            op,
            basis: KroneckerBasis::new(dims, levels)?,
            y,
            epsilon,
            config: config.clone(),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Matched-filter start: `x = CᴴHᴴy / K`, `z1 = x`, `z2 = HCx`, zero duals.
    pub fn initial_state(&self) -> Result<SolverState> {
        let x = self.op.adjoint(self.y)? / self.op.num_measurements() as f64;
        self.state_from(x)
    }

    /// State at `x` with `z1 = x`, `z2 = HCx` and zero duals.
    pub fn state_from(&self, x: Array3<f64>) -> Result<SolverState> {
        let z2 = self.op.forward(&x)?;
        Ok(SolverState {
            z1: x.clone(),
            d1: Array3::zeros(x.dim()),
            d2: Array3::zeros(z2.dim()),
            x,
            z2,
            iter: 0,
            history: Vec::new(),
        })
    }

    /// One sweep of the x, z1, z2 and dual updates.
    pub fn step(&self, state: &mut SolverState) -> Result<IterationRecord> {
        let iteration = state.iter + 1;
        let rhs = &state.z1 + &state.d1 + self.op.adjoint(&(&state.z2 + &state.d2))?;
        let cg = cg_solve_normal(self.op, &rhs, Some(&state.x), self.config.cg_tol, self.config.cg_max_iters)
            .map_err(|e| match e {
                Error::Numerical { reason, .. } => Error::Numerical {
                    iteration,
                    reason: format!("x-update: {reason}"),
                },
                other => other,
            })?;
        let x = cg.x;
        let hx = self.op.forward(&x)?;

        state.z1 = shrink_in_basis(&self.basis, &x, &state.d1, self.config.mu)?;
        state.z2 = update_z2(&(&hx - &state.d2), self.y, self.epsilon);
        state.d1 = &state.d1 - &(&x - &state.z1);
        state.d2 = &state.d2 - &(&hx - &state.z2);

        let misfit = norm(&(self.y - &hx));
        let l1_norm = self.basis.forward(&x)?.iter().map(|v| v.abs()).sum();
        let prev = norm(&state.x);
        let change = norm(&(&x - &state.x));
        let rel_change = if prev > 0.0 {
            change / prev
        } else if change == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if !(misfit.is_finite() && all_finite(&x)) {
            return Err(Error::Numerical {
                iteration,
                reason: "iterate is not finite".into(),
            });
        }
        state.x = x;
        state.iter = iteration;
        let record = IterationRecord {
            iter: iteration,
            misfit,
            l1_norm,
            rel_change,
            cg_iters: cg.iterations,
        };
        state.history.push(record);
        Ok(record)
    }

    /// Iterates until the relative change drops below `admm_tol` or the
    /// iteration limit is reached.
    pub fn run(&self, mut state: SolverState) -> Result<SolverState> {
        let initial_misfit = norm(&(self.y - &self.op.forward(&state.x)?));
        let limit = DIVERGENCE_FACTOR * initial_misfit.max(self.epsilon).max(f64::MIN_POSITIVE);
        for _ in 0..self.config.max_admm_iters {
            let record = self.step(&mut state)?;
            if record.misfit > limit {
                return Err(Error::Numerical {
                    iteration: record.iter,
                    reason: format!(
                        "diverging: misfit {:.4e} exceeds {DIVERGENCE_FACTOR}x the initial {:.4e}",
                        record.misfit, initial_misfit
                    ),
                });
            }
            // z1 = x, z2 = HCx, d = 0 makes the first x-update a fixed point, so
            // its zero change says nothing about convergence.
            if record.iter > 1 && record.rel_change < self.config.admm_tol {
                break;
            }
        }
        Ok(state)
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Final iterate clamped to `[0, 1]`.
    pub cube: SpectralCube,
    pub state: SolverState,
    pub epsilon: f64,
}

impl Reconstruction {
    pub fn history(&self) -> &[IterationRecord] {
        &self.state.history
    }

    pub fn final_misfit(&self) -> Option<f64> {
        self.state.history.last().map(|r| r.misfit)
    }
}

/// Runs the full reconstruction against a prebuilt operator.
pub fn reconstruct_with_operator(
    op: &SystemOperator,
    measurements: &MeasurementSet,
    wavelengths_m: &[f64],
    config: &SolverConfig,
) -> Result<Reconstruction> {
    let epsilon = config.epsilon.unwrap_or_else(|| measurements.expected_noise_norm());
    let admm = Admm::new(op, &measurements.frames, epsilon, config)?;
    let state = admm.run(admm.initial_state()?)?;
    let cube = SpectralCube::new(
        state.x.mapv(|v| v.clamp(0.0, 1.0)),
        wavelengths_m.to_vec(),
        measurements.pixel_pitch_m,
    )?;
    Ok(Reconstruction { cube, state, epsilon })
}

pub fn admm_reconstruct(
    measurements: &MeasurementSet,
    masks: &CodedApertureSet,
    response: &DetectorResponse,
    psfs: &PsfStack,
    config: &SolverConfig,
) -> Result<Reconstruction> {
    let op = SystemOperator::new(masks, response, psfs)?;
    reconstruct_with_operator(&op, measurements, psfs.wavelengths_m(), config)
}
