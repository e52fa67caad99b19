//! The angular (Prüfer) algorithm for the Helmholtz problem
//! `ψ'' + λ φ(t) ψ = 0`, `ψ(a) = ψ(b) = 0`.
//!
//! With `q = ψ = ρ sin α`, `p = ψ' = ρ cos α` the phase-plane motion separates into
//!
//! ```text
//! α'     = cos²α + λ φ(t) sin²α
//! (ln ρ)' = ½ (1 − λ φ(t)) sin 2α
//! ```
//!
//! started from `α(a) = 0`, `ln ρ(a) = 0`. `λ` is the n-th eigenvalue exactly
//! when `α(b) = nπ`. Since `α(b; λ)` is strictly increasing in `λ` for `φ ≥ 0`,
//! each eigenvalue is the unique root of `α(b; λ) − nπ`.
//!
//! The amplification constant of the spectral orbit is
//! `σ = (−1)ⁿ ρ(a)/ρ(b)`: the orbit starting at `(0, 1)` ends at
//! `(0, (−1)ⁿ ρ(b))`, and the transfer matrix is triangular with unit
//! determinant, so its diagonal is `(σ, 1/σ)`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::ode_core::{
    brackets_from_values, integrate_fixed, refine_until, solve_root_detailed, steps_for_length,
    Bracket, OdeError, OdeSystem, RefineOptions, DEFAULT_MAX_STEPS, DEFAULT_STEPS_PER_UNIT,
};
use crate::potential_expr::{require_nonneg, Coefficient, ValidationError};
use crate::transfer_optics::evolution_matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("coefficient rejected: {0}")]
    Invalid(#[from] ValidationError),
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("eigenvalue index must be at least 1")]
    BadIndex,
    #[error("eigenvalue {n} lies above lambda_max = {lambda_max} (alpha(b)/pi reaches only {achieved:.6})")]
    AboveMax { n: usize, lambda_max: f64, achieved: f64 },
    #[error("could not bracket eigenvalue {n}")]
    NoBracket { n: usize },
}

/// Prüfer variables at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruferState {
    pub t: f64,
    pub alpha: f64,
    pub log_rho: f64,
}

/// One eigenvalue with its optical constants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SpectralResult {
    pub n: usize,
    pub lambda: f64,
    /// Amplification constant `(−1)ⁿ ρ(a)/ρ(b)`.
    pub sigma: f64,
    /// Lower-left transfer-matrix entry `u21` at `lambda`.
    pub eta: f64,
    /// Terminal `log ρ(b)` of the spectral orbit.
    pub log_rho: f64,
    pub alpha_residual: f64,
    pub lambda_bracket_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    /// Initial step density for converged integrations.
    pub steps_per_unit: f64,
    /// Max-norm tolerance for step-doubling refinement.
    pub tol: f64,
    /// Root tolerance in λ, relative to the bracket's upper end.
    pub root_tol: f64,
    pub scan_points: usize,
    /// Step density for the coarse λ-net scan.
    pub scan_steps_per_unit: f64,
    pub lambda_max: Option<f64>,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            steps_per_unit: DEFAULT_STEPS_PER_UNIT,
            tol: 1e-10,
            root_tol: 1e-10,
            scan_points: 400,
            scan_steps_per_unit: 2_000.0,
            lambda_max: None,
        }
    }
}

impl SpectralOptions {
    pub(crate) fn refine(&self, len: f64) -> RefineOptions {
        RefineOptions {
            initial_steps: steps_for_length(len, self.steps_per_unit),
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

/// The Prüfer system `[α, ln ρ]` for a fixed λ.
pub struct PruferSystem<C> {
    pub coef: C,
    pub lambda: f64,
}

impl<C: Coefficient> OdeSystem for PruferSystem<C> {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        // evaluation failures become NaN and are reported by the integrator
        let k = self.lambda * self.coef.value(t).unwrap_or(f64::NAN);
        let (s, c) = y[0].sin_cos();
        dy[0] = c * c + k * s * s;
        dy[1] = (1.0 - k) * s * c;
    }
}

/// Terminal Prüfer state at `t = b`, converged by step doubling to `tol`.
pub fn delta_alpha<C: Coefficient>(coef: &C, lambda: f64, tol: f64) -> Result<PruferState, OdeError> {
    delta_alpha_with(coef, lambda, tol, &SpectralOptions::default())
}

pub fn delta_alpha_with<C: Coefficient>(
    coef: &C,
    lambda: f64,
    tol: f64,
    opts: &SpectralOptions,
) -> Result<PruferState, OdeError> {
    let (a, b) = coef.interval();
    let sys = PruferSystem { coef, lambda };
    let r = refine_until(&sys, &[0.0, 0.0], (a, b), tol, opts.refine(b - a))?;
    Ok(PruferState { t: b, alpha: r.final_state[0], log_rho: r.final_state[1] })
}

/// Terminal state with a fixed step count.
pub fn alpha_at_end<C: Coefficient>(coef: &C, lambda: f64, steps: usize) -> Result<PruferState, OdeError> {
    let (a, b) = coef.interval();
    let sys = PruferSystem { coef, lambda };
    let r = integrate_fixed(&sys, &[0.0, 0.0], (a, b), steps, false)?;
    Ok(PruferState { t: b, alpha: r.final_state[0], log_rho: r.final_state[1] })
}

/// Prüfer variables on the uniform `steps`-step grid over `[a, b]`.
pub fn prufer_trajectory<C: Coefficient>(
    coef: &C,
    lambda: f64,
    steps: usize,
) -> Result<Vec<PruferState>, OdeError> {
    let (a, b) = coef.interval();
    let sys = PruferSystem { coef, lambda };
    let r = integrate_fixed(&sys, &[0.0, 0.0], (a, b), steps, true)?;
    let dense = r.dense.expect("dense output requested");
    Ok(dense.iter().map(|(t, y)| PruferState { t, alpha: y[0], log_rho: y[1] }).collect())
}

/// Times in `(a, b)` where `α` passes a positive multiple of π, i.e. the
/// interior zeros of `q`.
pub fn interior_zero_count(states: &[PruferState]) -> usize {
    let Some(last) = states.last() else { return 0 };
    let end_k = (last.alpha / PI).round();
    states
        .windows(2)
        .filter(|w| {
            let k0 = (w[0].alpha / PI).floor();
            let k1 = (w[1].alpha / PI).floor();
            // a crossing of the final multiple at the endpoint is not interior
            k1 > k0 && !(k1 >= end_k && (last.alpha - end_k * PI).abs() < 1e-6)
        })
        .count()
}

/// α(b)/π on a logarithmic λ-net, shared between eigenvalue searches.
#[derive(Debug, Clone)]
pub struct LambdaNet {
    pub grid: Vec<f64>,
    pub alpha_over_pi: Vec<f64>,
}

impl LambdaNet {
    pub fn build<C: Coefficient>(coef: &C, n_max: usize, opts: &SpectralOptions) -> Result<Self, SpectralError> {
        let report = require_nonneg(coef)?;
        let (a, b) = coef.interval();
        let len = b - a;
        let steps = steps_for_length(len, opts.scan_steps_per_unit).max(64);
        let scan = |lambda: f64| -> Result<f64, OdeError> { Ok(alpha_at_end(coef, lambda, steps)?.alpha / PI) };

        let mut lo = 0.5 / (report.mean.max(report.max * 1e-6) * len * len);
        let mut guard = 0;
        while scan(lo)? >= 1.0 {
            lo *= 0.25;
            guard += 1;
            if guard > 200 {
                return Err(SpectralError::NoBracket { n: 1 });
            }
        }
        let hi = match opts.lambda_max {
            Some(max) => {
                let achieved = scan(max)?;
                if achieved < n_max as f64 {
                    return Err(SpectralError::AboveMax { n: n_max, lambda_max: max, achieved });
                }
                if lo >= max {
                    lo = max * 1e-6;
                }
                max
            }
            None => {
                let mut hi = lo;
                let target = n_max as f64 + 0.5;
                let mut guard = 0;
                while scan(hi)? < target {
                    hi *= 2.0;
                    guard += 1;
                    if guard > 400 {
                        return Err(SpectralError::NoBracket { n: n_max });
                    }
                }
                hi
            }
        };
        let m = opts.scan_points.max(2);
        let (llo, lhi) = (lo.ln(), hi.ln());
        let grid: Vec<f64> = (0..m)
            .map(|i| {
                if i + 1 == m {
                    hi
                } else {
                    (llo + (lhi - llo) * i as f64 / (m - 1) as f64).exp()
                }
            })
            .collect();
        let alpha_over_pi = grid.iter().map(|&l| scan(l)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { grid, alpha_over_pi })
    }

    /// Index `i` such that `[grid[i], grid[i+1]]` brackets α(b) = nπ.
    fn cell(&self, n: usize) -> Option<usize> {
        let shifted: Vec<f64> = self.alpha_over_pi.iter().map(|v| v - n as f64).collect();
        let br = brackets_from_values(&self.grid, &shifted).into_iter().next()?;
        let i = self.grid.iter().position(|&x| x == br.lo)?;
        Some(i.min(self.grid.len() - 2))
    }

    /// Solves for the n-th eigenvalue and fills in the optical constants.
    pub fn eigenvalue<C: Coefficient>(
        &self,
        coef: &C,
        n: usize,
        opts: &SpectralOptions,
    ) -> Result<SpectralResult, SpectralError> {
        if n == 0 {
            return Err(SpectralError::BadIndex);
        }
        let last = *self.alpha_over_pi.last().expect("non-empty net");
        let Some(mut i) = self.cell(n) else {
            return Err(SpectralError::AboveMax { n, lambda_max: *self.grid.last().unwrap(), achieved: last });
        };
        let (a, b) = coef.interval();
        let target = n as f64 * PI;

        // fix one converged step count for the whole root solve so g is smooth in λ
        let probe = PruferSystem { coef, lambda: self.grid[i + 1] };
        let steps = refine_until(&probe, &[0.0, 0.0], (a, b), opts.tol, opts.refine(b - a))?.steps;
        let g = |lambda: f64| -> Result<f64, OdeError> { Ok(alpha_at_end(coef, lambda, steps)?.alpha - target) };

        // the coarse scan may misplace a root sitting right at a net point
        let mut g_lo = g(self.grid[i])?;
        let mut g_hi = g(self.grid[i + 1])?;
        let mut moves = 0;
        while g_lo * g_hi > 0.0 {
            moves += 1;
            if moves > 4 {
                return Err(SpectralError::NoBracket { n });
            }
            if g_lo > 0.0 && i > 0 {
                i -= 1;
            } else if g_hi < 0.0 && i + 2 < self.grid.len() {
                i += 1;
            } else {
                return Err(SpectralError::NoBracket { n });
            }
            g_lo = g(self.grid[i])?;
            g_hi = g(self.grid[i + 1])?;
        }
        let bracket = Bracket::new(self.grid[i], self.grid[i + 1], g_lo, g_hi).ok_or(SpectralError::NoBracket { n })?;

        let mut failure = None;
        let sol = solve_root_detailed(
            |l| match g(l) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            bracket,
            opts.root_tol * bracket.hi,
        );
        if let Some(e) = failure {
            return Err(e.into());
        }
        let lambda = sol.root;
        let end = delta_alpha_with(coef, lambda, opts.tol, opts)?;
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        let u = evolution_matrix(coef, lambda, opts.tol)?;
        Ok(SpectralResult {
            n,
            lambda,
            sigma: sign * (-end.log_rho).exp(),
            eta: u.u21,
            log_rho: end.log_rho,
            alpha_residual: (end.alpha - target).abs(),
            lambda_bracket_width: sol.width,
        })
    }
}

pub fn find_eigenvalue<C: Coefficient>(
    coef: &C,
    n: usize,
    opts: &SpectralOptions,
) -> Result<SpectralResult, SpectralError> {
    if n == 0 {
        return Err(SpectralError::BadIndex);
    }
    LambdaNet::build(coef, n, opts)?.eigenvalue(coef, n, opts)
}

/// Prüfer data at a given λ, packaged like an eigenvalue with `n` the
/// nearest multiple of π reached by `α(b)`. `alpha_residual` tells whether λ
/// actually is spectral.
pub fn result_at<C: Coefficient>(coef: &C, lambda: f64, opts: &SpectralOptions) -> Result<SpectralResult, SpectralError> {
    require_nonneg(coef)?;
    let end = delta_alpha_with(coef, lambda, opts.tol, opts)?;
    let n = (end.alpha / PI).round().max(0.0) as usize;
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let u = evolution_matrix(coef, lambda, opts.tol)?;
    Ok(SpectralResult {
        n,
        lambda,
        sigma: sign * (-end.log_rho).exp(),
        eta: u.u21,
        log_rho: end.log_rho,
        alpha_residual: (end.alpha - n as f64 * PI).abs(),
        lambda_bracket_width: 0.0,
    })
}

/// Eigenvalues `1..=n_max` from a single λ-net scan.
pub fn spectrum<C: Coefficient>(
    coef: &C,
    n_max: usize,
    opts: &SpectralOptions,
) -> Result<Vec<SpectralResult>, SpectralError> {
    if n_max == 0 {
        return Err(SpectralError::BadIndex);
    }
    let net = LambdaNet::build(coef, n_max, opts)?;
    (1..=n_max).map(|n| net.eigenvalue(coef, n, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential_expr::parse_potential;


    #[test]
    fn result_at_reports_spectrality() {
        let phi = parse_potential("1", 0.0, PI).unwrap();
        let opts = SpectralOptions::default();
        let on = result_at(&phi, 4.0, &opts).unwrap();
        assert_eq!(on.n, 2);
        assert!(on.alpha_residual < 1e-9);
        assert!((on.sigma - 1.0).abs() < 1e-9);
        let off = result_at(&phi, 2.5, &opts).unwrap();
        assert!(off.alpha_residual > 0.1);
    }
    #[test]
    fn constant_coefficient_unit_lambda() {
        let s = parse_potential("1", 0.0, PI).unwrap();
        let st = delta_alpha(&s, 1.0, 1e-12).unwrap();
        assert!((st.alpha - PI).abs() < 1e-9);
        assert!(st.log_rho.abs() < 1e-9);
    }

    #[test]
    fn zero_lambda_gives_arctan() {
        for src in ["(1+sin(2*pi*t))^2", "1.1*exp(t)-1", "t"] {
            let s = parse_potential(src, 0.0, 1.0).unwrap();
            let st = delta_alpha(&s, 0.0, 1e-12).unwrap();
            assert!((st.alpha - PI / 4.0).abs() < 1e-10, "{src}");
        }
    }

    #[test]
    fn bad_index_and_invalid_coefficient() {
        let s = parse_potential("1", 0.0, PI).unwrap();
        assert_eq!(find_eigenvalue(&s, 0, &SpectralOptions::default()), Err(SpectralError::BadIndex));
        let z = parse_potential("0", 0.0, 1.0).unwrap();
        assert!(matches!(
            find_eigenvalue(&z, 1, &SpectralOptions::default()),
            Err(SpectralError::Invalid(ValidationError::IdenticallyZero))
        ));
        let neg = parse_potential("t-0.5", 0.0, 1.0).unwrap();
        assert!(matches!(find_eigenvalue(&neg, 1, &SpectralOptions::default()), Err(SpectralError::Invalid(_))));
    }

    #[test]
    fn lambda_max_too_small() {
        let s = parse_potential("1", 0.0, PI).unwrap();
        let opts = SpectralOptions { lambda_max: Some(5.0), ..Default::default() };
        match find_eigenvalue(&s, 3, &opts) {
            Err(SpectralError::AboveMax { n: 3, achieved, .. }) => {
                // ωπ with ω = √5 ≈ 2.24: past the second zero, before the third
                assert!(achieved > 2.0 && achieved < 2.5);
            }
            other => panic!("unexpected {other:?}"),
        }
        let r = find_eigenvalue(&s, 2, &opts).unwrap();
        assert!((r.lambda - 4.0).abs() < 1e-9);
    }

    #[test]
    fn constant_coefficient_ladder() {
        let s = parse_potential("1", 0.0, PI).unwrap();
        let sp = spectrum(&s, 4, &SpectralOptions::default()).unwrap();
        for (k, r) in sp.iter().enumerate() {
            let n = k + 1;
            assert_eq!(r.n, n);
            assert!((r.lambda - (n * n) as f64).abs() < 1e-9 * (n * n) as f64);
            assert!((r.sigma - if n % 2 == 0 { 1.0 } else { -1.0 }).abs() < 1e-9);
            assert!(r.eta.abs() < 1e-9);
            assert!(r.alpha_residual < 1e-8);
        }
    }

    #[test]
    fn interior_zeros_match_index() {
        let s = parse_potential("(1+sin(2*pi*t))^2", 0.0, 1.0).unwrap();
        let sp = spectrum(&s, 3, &SpectralOptions::default()).unwrap();
        for r in &sp {
            let tr = prufer_trajectory(&s, r.lambda, 20_000).unwrap();
            assert_eq!(interior_zero_count(&tr), r.n - 1);
            assert!(tr.windows(2).all(|w| w[1].alpha >= w[0].alpha));
        }
    }
}
