//! Symplectic transfer matrix of `q' = p, p' = −λ φ(t) q` and the optical
//! constants it carries at spectral λ.
//!
//! At an eigenvalue the matrix over `[a, b]` is lower triangular,
//!
//! ```text
//! u(b, a) = | σ    0  |
//!           | η  1/σ  |
//! ```
//!
//! so every fan of orbits leaving a common `q0` meets again at `σ q0`.
//!
//! # Conventions
//!
//! `η` is always reported as the matrix entry `u21`. The Prüfer quadrature
//!
//! ```text
//! η_int = ∫ₐᵇ (1 − λφ) (ρ(a)/ρ(t))² cos 2α dt
//! ```
//!
//! is the coefficient of the second basis solution along the spectral orbit
//! in the co-rotating Prüfer frame. Writing that solution as
//! `A e₁ + B e₂` with `e₁ = (sin α, cos α)`, `e₂ = (cos α, −sin α)` gives
//! `B = 1/ρ` and `(A/ρ)' = (1 − λφ) cos 2α / ρ²`, hence at `α(b) = nπ`
//!
//! ```text
//! u21 = (−1)ⁿ ρ(b) η_int = η_int / σ.
//! ```
//!
//! The three-factor propagator acts on phase space, right factor first, as
//!
//! ```text
//! u = Pⁿ · D(ρ(a)/ρ(b)) · K(η_int)
//! ```
//!
//! with the thin-lens kick `K(η): (q, p) ↦ (q, p + η q)`, the dilation
//! `D(d): (q, p) ↦ (d q, p/d)` and parity `P = −1`. This is the order and
//! scale direction that [`factor_check`] verifies against the directly
//! integrated matrix; the reciprocal dilation or the reversed order both
//! disagree with it whenever `σ ≠ ±1`.

use std::f64::consts::PI;
use std::ops::Mul;

use thiserror::Error;

use crate::ode_core::{integrate_fixed, refine_until, steps_for_length, OdeError, OdeSystem, RefineOptions, DEFAULT_MAX_STEPS, DEFAULT_STEPS_PER_UNIT};
use crate::potential_expr::Coefficient;
use crate::prufer_spectral::{prufer_trajectory, SpectralResult};

/// Default triangularity tolerance, relative to the diagonal.
pub const TRIANGULAR_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransferError {
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("lambda is not spectral: |u12| = {u12:e} exceeds {bound:e}")]
    NotSpectral { u12: f64, bound: f64 },
    #[error("u22 = {u22} is not 1/u11 = {inverse} within {tol:e}; tighten the integration tolerance")]
    SigmaReciprocalMismatch { u22: f64, inverse: f64, tol: f64 },
}

/// Evolution matrix acting on columns `(q, p)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TransferMatrix {
    pub u11: f64,
    pub u12: f64,
    pub u21: f64,
    pub u22: f64,
    pub lambda: f64,
    pub det_residual: f64,
}

impl TransferMatrix {
    pub fn from_entries(u11: f64, u12: f64, u21: f64, u22: f64, lambda: f64) -> Self {
        Self { u11, u12, u21, u22, lambda, det_residual: (u11 * u22 - u12 * u21 - 1.0).abs() }
    }

    pub fn identity(lambda: f64) -> Self {
        Self::from_entries(1.0, 0.0, 0.0, 1.0, lambda)
    }

    pub fn det(&self) -> f64 {
        self.u11 * self.u22 - self.u12 * self.u21
    }

    pub fn apply(&self, q: f64, p: f64) -> (f64, f64) {
        (self.u11 * q + self.u12 * p, self.u21 * q + self.u22 * p)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.u11.abs().max(self.u12.abs()).max(self.u21.abs()).max(self.u22.abs())
    }

    pub fn max_abs_diff(&self, other: &TransferMatrix) -> f64 {
        (self.u11 - other.u11)
            .abs()
            .max((self.u12 - other.u12).abs())
            .max((self.u21 - other.u21).abs())
            .max((self.u22 - other.u22).abs())
    }
}

/// `a * b` applies `b` first.
impl Mul for TransferMatrix {
    type Output = TransferMatrix;

    fn mul(self, b: TransferMatrix) -> TransferMatrix {
        let a = self;
        TransferMatrix::from_entries(
            a.u11 * b.u11 + a.u12 * b.u21,
            a.u11 * b.u12 + a.u12 * b.u22,
            a.u21 * b.u11 + a.u22 * b.u21,
            a.u21 * b.u12 + a.u22 * b.u22,
            a.lambda,
        )
    }
}

/// Both basis solutions at once: `[q_a, p_a, q_b, p_b]` from `(1,0)` and `(0,1)`.
pub struct BasisSystem<C> {
    pub coef: C,
    pub lambda: f64,
}

impl<C: Coefficient> OdeSystem for BasisSystem<C> {
    fn dim(&self) -> usize {
        4
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let k = self.lambda * self.coef.value(t).unwrap_or(f64::NAN);
        dy[0] = y[1];
        dy[1] = -k * y[0];
        dy[2] = y[3];
        dy[3] = -k * y[2];
    }
}

pub(crate) const BASIS_START: [f64; 4] = [1.0, 0.0, 0.0, 1.0];

pub(crate) fn matrix_from_state(y: &[f64], lambda: f64) -> TransferMatrix {
    TransferMatrix::from_entries(y[0], y[2], y[1], y[3], lambda)
}

/// `u(b, a)` converged by step doubling to `tol` (max-norm on the entries).
pub fn evolution_matrix<C: Coefficient>(coef: &C, lambda: f64, tol: f64) -> Result<TransferMatrix, OdeError> {
    let (a, b) = coef.interval();
    let sys = BasisSystem { coef, lambda };
    let opts = RefineOptions { initial_steps: steps_for_length(b - a, DEFAULT_STEPS_PER_UNIT), max_steps: DEFAULT_MAX_STEPS };
    let r = refine_until(&sys, &BASIS_START, (a, b), tol, opts)?;
    Ok(matrix_from_state(&r.final_state, lambda))
}

/// `u(b, a)` from a single fixed-step pass.
pub fn evolution_matrix_fixed<C: Coefficient>(coef: &C, lambda: f64, steps: usize) -> Result<TransferMatrix, OdeError> {
    let (a, b) = coef.interval();
    let sys = BasisSystem { coef, lambda };
    let r = integrate_fixed(&sys, &BASIS_START, (a, b), steps, false)?;
    Ok(matrix_from_state(&r.final_state, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OpticalConstants {
    pub sigma: f64,
    pub eta: f64,
}

/// Reads `σ = u11`, `η = u21` from a matrix that must be triangular within `tol`.
pub fn optical_constants(u: &TransferMatrix, tol: f64) -> Result<OpticalConstants, TransferError> {
    let bound = tol * u.u11.abs().max(u.u22.abs()).max(1.0);
    if u.u12.abs() > bound {
        return Err(TransferError::NotSpectral { u12: u.u12, bound });
    }
    let inverse = 1.0 / u.u11;
    if (u.u22 * u.u11 - 1.0).abs() > tol {
        return Err(TransferError::SigmaReciprocalMismatch { u22: u.u22, inverse, tol });
    }
    Ok(OpticalConstants { sigma: u.u11, eta: u.u21 })
}

/// Result of the Prüfer quadrature for `η`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EtaIntegral {
    /// The quadrature value `η_int`.
    pub integral: f64,
    /// `(−1)ⁿ ρ(a)/ρ(b)` with `n = round(α(b)/π)`.
    pub sigma: f64,
    /// `η_int / σ`, comparable with `u21`.
    pub matrix: f64,
    pub steps: usize,
}

fn simpson_eta<C: Coefficient>(coef: &C, lambda: f64, steps: usize) -> Result<(f64, f64, f64), OdeError> {
    let tr = prufer_trajectory(coef, lambda, steps)?;
    let (a, b) = coef.interval();
    let h = (b - a) / steps as f64;
    let mut sum = 0.0;
    for (i, s) in tr.iter().enumerate() {
        let phi = coef.value(s.t).map_err(|_| OdeError::NonFinite { step: i, t: s.t })?;
        let f = (1.0 - lambda * phi) * (-2.0 * s.log_rho).exp() * (2.0 * s.alpha).cos();
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * f;
    }
    let last = tr.last().expect("non-empty trajectory");
    Ok((sum * h / 3.0, last.alpha, last.log_rho))
}

/// Composite Simpson evaluation of `η_int` on dense Prüfer samples, doubled
/// until two passes agree to `tol` (relative to `max(1, |η|)`).
pub fn eta_integral<C: Coefficient>(coef: &C, lambda: f64, tol: f64) -> Result<EtaIntegral, OdeError> {
    let (a, b) = coef.interval();
    let mut steps = steps_for_length(b - a, DEFAULT_STEPS_PER_UNIT);
    steps += steps % 2;
    let (mut prev, _, _) = simpson_eta(coef, lambda, steps)?;
    loop {
        if steps * 2 > DEFAULT_MAX_STEPS {
            return Err(OdeError::NoConvergence { tol, max_steps: DEFAULT_MAX_STEPS, last_change: f64::NAN });
        }
        steps *= 2;
        let (next, alpha, log_rho) = simpson_eta(coef, lambda, steps)?;
        let change = (next - prev).abs();
        prev = next;
        if change < tol * next.abs().max(1.0) {
            let n = (alpha / PI).round() as i64;
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let sigma = sign * (-log_rho).exp();
            return Ok(EtaIntegral { integral: next, sigma, matrix: next / sigma, steps });
        }
    }
}

/// Phase-space matrix of `Pⁿ · D(d) · K(η_int)`.
pub fn factored_matrix(n: usize, dilation: f64, eta_int: f64, lambda: f64) -> TransferMatrix {
    let parity = if n % 2 == 0 { 1.0 } else { -1.0 };
    let kick = TransferMatrix::from_entries(1.0, 0.0, eta_int, 1.0, lambda);
    let dil = TransferMatrix::from_entries(dilation, 0.0, 0.0, 1.0 / dilation, lambda);
    let par = TransferMatrix::from_entries(parity, 0.0, 0.0, parity, lambda);
    par * (dil * kick)
}

/// Max-norm distance between the three-factor propagator's classical map
/// and the integrated transfer matrix at `result.lambda`.
pub fn factor_check<C: Coefficient>(coef: &C, result: &SpectralResult, tol: f64) -> Result<f64, TransferError> {
    if result.alpha_residual > 1e-6 {
        return Err(TransferError::NotSpectral { u12: f64::NAN, bound: 1e-6 });
    }
    let eta = eta_integral(coef, result.lambda, tol)?;
    let dilation = (-result.log_rho).exp();
    let composed = factored_matrix(result.n, dilation, eta.integral, result.lambda);
    let u = evolution_matrix(coef, result.lambda, tol)?;
    Ok(composed.max_abs_diff(&u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential_expr::parse_potential;
    use crate::prufer_spectral::{find_eigenvalue, SpectralOptions};

    #[test]
    fn free_particle() {
        let s = parse_potential("(1+sin(2*pi*t))^2", 0.0, 2.5).unwrap();
        let u = evolution_matrix(&s, 0.0, 1e-12).unwrap();
        assert!((u.u11 - 1.0).abs() < 1e-12);
        assert!((u.u12 - 2.5).abs() < 1e-12);
        assert!(u.u21.abs() < 1e-12);
        assert!((u.u22 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_rotation() {
        let s = parse_potential("1", 0.0, PI).unwrap();
        let u = evolution_matrix(&s, 1.0, 1e-12).unwrap();
        let want = TransferMatrix::from_entries(-1.0, 0.0, 0.0, -1.0, 1.0);
        assert!(u.max_abs_diff(&want) < 1e-10);
        let oc = optical_constants(&u, TRIANGULAR_TOL).unwrap();
        assert!((oc.sigma + 1.0).abs() < 1e-10);
        assert!(oc.eta.abs() < 1e-10);
    }

    #[test]
    fn optical_constants_errors() {
        let u = TransferMatrix::from_entries(-1.0, 0.0, 0.0, -1.0, 1.0);
        assert_eq!(optical_constants(&u, 1e-9).unwrap(), OpticalConstants { sigma: -1.0, eta: 0.0 });
        let u = TransferMatrix::from_entries(1.0, 0.3, 0.0, 1.0, 1.0);
        assert!(matches!(optical_constants(&u, 1e-6), Err(TransferError::NotSpectral { .. })));
        let u = TransferMatrix::from_entries(2.0, 0.0, 0.0, 0.6, 1.0);
        assert!(matches!(optical_constants(&u, 1e-6), Err(TransferError::SigmaReciprocalMismatch { .. })));
    }

    #[test]
    fn zero_length_interval_is_identity() {
        let s = parse_potential("(t+pi)^4", 0.0, 1e-12).unwrap();
        let u = evolution_matrix(&s, 3.0, 1e-14).unwrap();
        // first-order terms: u12 ≈ L, u21 ≈ −λ φ(0) L ≈ −3e-10
        assert!(u.max_abs_diff(&TransferMatrix::identity(3.0)) < 1e-9);
        assert!(u.det_residual < 1e-15);
    }

    #[test]
    fn eta_integral_vanishes_for_unit_coefficient() {
        let s = parse_potential("1", 0.0, PI).unwrap();
        let e = eta_integral(&s, 1.0, 1e-10).unwrap();
        assert!(e.integral.abs() < 1e-12);
        assert!((e.sigma + 1.0).abs() < 1e-9);
    }

    #[test]
    fn pure_parity_factorisation() {
        let s = parse_potential("1", 0.0, PI).unwrap();
        let r = find_eigenvalue(&s, 1, &SpectralOptions::default()).unwrap();
        assert!(factor_check(&s, &r, 1e-10).unwrap() < 1e-9);
    }

    #[test]
    fn wrong_conventions_are_rejected() {
        // the calibration must be able to tell the alternatives apart
        let s = parse_potential("(1+sin(2*pi*t))^2", 0.0, 1.0).unwrap();
        let r = find_eigenvalue(&s, 1, &SpectralOptions::default()).unwrap();
        let u = evolution_matrix(&s, r.lambda, 1e-10).unwrap();
        let eta = eta_integral(&s, r.lambda, 1e-10).unwrap().integral;
        let d = (-r.log_rho).exp();
        assert!(factored_matrix(1, d, eta, r.lambda).max_abs_diff(&u) < 1e-6);
        assert!(factored_matrix(1, 1.0 / d, eta, r.lambda).max_abs_diff(&u) > 0.1);
        let kick_last = {
            let kick = TransferMatrix::from_entries(1.0, 0.0, eta, 1.0, r.lambda);
            let dil = TransferMatrix::from_entries(-d, 0.0, 0.0, -1.0 / d, r.lambda);
            kick * dil
        };
        assert!(kick_last.max_abs_diff(&u) > 0.1);
    }
}
