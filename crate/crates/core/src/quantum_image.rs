//! Wave-packet images produced by the quadratic Hamiltonian
//! `H(t) = p²/2 + λ φ(t) q²/2` (units with ħ = 1).
//!
//! At spectral λ the propagator factorises into a quadratic phase, a
//! dilation and a parity (see [`crate::transfer_optics`] for the convention):
//!
//! ```text
//! ψ_U(x) = |σ|^{-1/2} exp(i η_int x² / (2σ²)) ψ(x/σ)
//! ```
//!
//! so the density is mapped onto `|σ|⁻¹ ρ(x/σ)` without distortion. The
//! closed form is checked against an independent Strang split-step
//! propagation on a periodic FFT grid. Global phases are never compared.

use std::f64::consts::PI;
use std::io::{self, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::ode_core::DEFAULT_STEPS_PER_UNIT;
use crate::potential_expr::{Coefficient, EvalError};
use crate::prufer_spectral::SpectralResult;

pub const DEFAULT_GRID_POINTS: usize = 4096;
/// Half-width of the default grid in packet widths.
pub const DEFAULT_HALF_SPAN_WIDTHS: f64 = 12.0;
/// Maximum admissible `|ψ|` at the grid ends relative to the peak.
pub const BOUNDARY_RATIO: f64 = 1e-10;
/// Maximum admissible spectral amplitude in the outer tenth of the momentum band.
pub const ALIASING_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantumError {
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("wave function does not decay at the grid ends (|psi| ratio {ratio:e})")]
    Boundary { ratio: f64 },
    #[error("aliasing: momentum-band edge amplitude ratio {ratio:e}")]
    Aliasing { ratio: f64 },
    #[error("x = {x} lies outside the grid [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("result is not spectral (alpha residual {0:e})")]
    NotSpectral(f64),
    #[error("amplification constant is zero")]
    DegenerateSigma,
    #[error("coefficient evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// Uniform grid `x0 + k dx`, `k = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
}

impl GridSpec {
    /// `n` points spanning `[center − half_span, center + half_span)`.
    pub fn centered(center: f64, half_span: f64, n: usize) -> Self {
        let dx = 2.0 * half_span / n as f64;
        Self { x0: center - half_span, dx, n }
    }

    pub fn x(&self, k: usize) -> f64 {
        self.x0 + k as f64 * self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.n - 1)
    }
}

/// Complex samples of `ψ` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveGrid {
    pub x0: f64,
    pub dx: f64,
    values: Vec<Complex64>,
}

impl WaveGrid {
    /// Checked constructor: finite samples, positive spacing, decayed ends.
    pub fn new(x0: f64, dx: f64, values: Vec<Complex64>) -> Result<Self, QuantumError> {
        if !(dx > 0.0 && dx.is_finite() && x0.is_finite()) {
            return Err(QuantumError::BadGrid(format!("x0 = {x0}, dx = {dx}")));
        }
        if values.len() < 4 {
            return Err(QuantumError::BadGrid("need at least 4 points".into()));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(QuantumError::BadGrid("non-finite sample".into()));
        }
        let g = Self { x0, dx, values };
        let ratio = g.boundary_ratio();
        if !(ratio < BOUNDARY_RATIO) {
            return Err(QuantumError::Boundary { ratio });
        }
        Ok(g)
    }

    fn raw(x0: f64, dx: f64, values: Vec<Complex64>) -> Self {
        Self { x0, dx, values }
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { x0: self.x0, dx: self.dx, n: self.values.len() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn x(&self, k: usize) -> f64 {
        self.x0 + k as f64 * self.dx
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.dx
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Larger of `|ψ|` at the two ends over the peak `|ψ|`.
    pub fn boundary_ratio(&self) -> f64 {
        let peak = self.max_abs();
        if peak == 0.0 {
            return f64::INFINITY;
        }
        let first = self.values[0].norm();
        let last = self.values[self.values.len() - 1].norm();
        first.max(last) / peak
    }

    /// Mean position and variance of the density.
    pub fn moments(&self) -> (f64, f64) {
        let norm = self.norm();
        let mean = self.values.iter().enumerate().map(|(k, v)| self.x(k) * v.norm_sqr()).sum::<f64>() * self.dx / norm;
        let var = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| (self.x(k) - mean).powi(2) * v.norm_sqr())
            .sum::<f64>()
            * self.dx
            / norm;
        (mean, var)
    }

    /// Four-point cubic interpolation; samples outside the grid count as zero.
    fn interpolate(&self, x: f64) -> Complex64 {
        let u = (x - self.x0) / self.dx;
        let i = u.floor();
        let f = u - i;
        let i = i as i64;
        let n = self.values.len() as i64;
        let at = |k: i64| if (0..n).contains(&k) { self.values[k as usize] } else { Complex64::new(0.0, 0.0) };
        if f == 0.0 {
            return at(i);
        }
        let w_m1 = -f * (f - 1.0) * (f - 2.0) / 6.0;
        let w_0 = (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0;
        let w_1 = -(f + 1.0) * f * (f - 2.0) / 2.0;
        let w_2 = (f + 1.0) * f * (f - 1.0) / 6.0;
        at(i - 1) * w_m1 + at(i) * w_0 + at(i + 1) * w_1 + at(i + 2) * w_2
    }

    /// Interpolated value; errors outside `[x0, x_max]`.
    pub fn value_at(&self, x: f64) -> Result<Complex64, QuantumError> {
        let hi = self.x(self.values.len() - 1);
        if !(x >= self.x0 && x <= hi) {
            return Err(QuantumError::OutOfRange { x, lo: self.x0, hi });
        }
        Ok(self.interpolate(x))
    }

    /// Cubic resampling onto `target`; the wave is taken as zero off-grid.
    pub fn resample(&self, target: &GridSpec) -> WaveGrid {
        let values = (0..target.n).map(|k| self.interpolate(target.x(k))).collect();
        WaveGrid::raw(target.x0, target.dx, values)
    }

    /// CSV rows `x,re,im,density` with a single header line.
    pub fn write_csv<W: Write>(&self, mut w: W, fmt: impl Fn(f64) -> String) -> io::Result<()> {
        writeln!(w, "x,re,im,density")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{},{},{}", fmt(self.x(k)), fmt(v.re), fmt(v.im), fmt(v.norm_sqr()))?;
        }
        Ok(())
    }
}

/// Gaussian packet `(2π w²)^{-1/4} exp(−(x−c)²/(4w²) + i k x)`, where `w` is
/// the position standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GaussianPacket {
    pub center: f64,
    pub width: f64,
    pub momentum: f64,
}

impl GaussianPacket {
    /// Ground state of `(p² + q²)/2`.
    pub fn standard() -> Self {
        Self { center: 0.0, width: std::f64::consts::FRAC_1_SQRT_2, momentum: 0.0 }
    }

    pub fn amplitude(&self, x: f64) -> Complex64 {
        let norm = (2.0 * PI * self.width * self.width).powf(-0.25);
        let d = x - self.center;
        Complex64::from_polar(norm * (-d * d / (4.0 * self.width * self.width)).exp(), self.momentum * x)
    }

    pub fn on_grid(&self, grid: &GridSpec) -> Result<WaveGrid, QuantumError> {
        let values = (0..grid.n).map(|k| self.amplitude(grid.x(k))).collect();
        WaveGrid::new(grid.x0, grid.dx, values)
    }

    /// Default grid: 4096 points over `±12` widths, widened by `max(1, |σ|)`.
    pub fn default_grid(&self, sigma: f64) -> GridSpec {
        let half = DEFAULT_HALF_SPAN_WIDTHS * self.width * sigma.abs().max(1.0);
        GridSpec::centered(0.0, half + self.center.abs() * sigma.abs().max(1.0), DEFAULT_GRID_POINTS)
    }
}

/// Multiplies by `exp(i k x²/2)`: the thin-lens kick `p ↦ p + k q`.
pub fn quadratic_phase(psi: &WaveGrid, k: f64) -> WaveGrid {
    let values = psi
        .values
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let x = psi.x(j);
            v * Complex64::from_polar(1.0, 0.5 * k * x * x)
        })
        .collect();
    WaveGrid::raw(psi.x0, psi.dx, values)
}

/// `ψ(x) ↦ d^{-1/2} ψ(x/d)` for `d > 0`, realised by stretching the grid.
pub fn dilate(psi: &WaveGrid, d: f64) -> WaveGrid {
    let scale = d.powf(-0.5);
    WaveGrid::raw(psi.x0 * d, psi.dx * d, psi.values.iter().map(|v| v * scale).collect())
}

/// `ψ(x) ↦ ψ(−x)`, realised by mirroring the grid.
pub fn parity(psi: &WaveGrid) -> WaveGrid {
    let x_max = psi.x(psi.len() - 1);
    WaveGrid::raw(-x_max, psi.dx, psi.values.iter().rev().copied().collect())
}

/// Three-factor propagator at a spectral result: quadratic phase
/// `η_int = σ·u21`, dilation by `|σ|`, then parity `Pⁿ`. The output lives on
/// the input grid stretched by `|σ|`, so no interpolation is involved.
pub fn apply_factorized_propagator(psi: &WaveGrid, result: &SpectralResult) -> Result<WaveGrid, QuantumError> {
    if result.alpha_residual > 1e-6 {
        return Err(QuantumError::NotSpectral(result.alpha_residual));
    }
    if result.sigma == 0.0 || !result.sigma.is_finite() {
        return Err(QuantumError::DegenerateSigma);
    }
    let eta_int = result.sigma * result.eta;
    let kicked = quadratic_phase(psi, eta_int);
    let scaled = dilate(&kicked, result.sigma.abs());
    Ok(if result.n % 2 == 1 { parity(&scaled) } else { scaled })
}

/// Closed-form image `|σ|^{-1/2} exp(i η_int x²/(2σ²)) ψ(x/σ)` sampled on
/// `target` by cubic interpolation of the input.
pub fn factorized_on_grid(psi: &WaveGrid, result: &SpectralResult, target: &GridSpec) -> Result<WaveGrid, QuantumError> {
    if result.alpha_residual > 1e-6 {
        return Err(QuantumError::NotSpectral(result.alpha_residual));
    }
    let sigma = result.sigma;
    if sigma == 0.0 || !sigma.is_finite() {
        return Err(QuantumError::DegenerateSigma);
    }
    let eta_int = sigma * result.eta;
    let scale = sigma.abs().powf(-0.5);
    let values = (0..target.n)
        .map(|k| {
            let x = target.x(k);
            psi.interpolate(x / sigma) * Complex64::from_polar(scale, eta_int * x * x / (2.0 * sigma * sigma))
        })
        .collect();
    Ok(WaveGrid::raw(target.x0, target.dx, values))
}

fn momenta(n: usize, dx: f64) -> Vec<f64> {
    let dk = 2.0 * PI / (n as f64 * dx);
    (0..n).map(|j| if j < n / 2 { j as f64 * dk } else { (j as f64 - n as f64) * dk }).collect()
}

/// Strang split-step propagation of `i ψ_t = (p²/2 + λ φ(t) x²/2) ψ` over the
/// coefficient's interval on the periodic grid of `psi`.
pub fn split_step_evolve<C: Coefficient>(
    psi: &WaveGrid,
    coef: &C,
    lambda: f64,
    steps: usize,
) -> Result<WaveGrid, QuantumError> {
    if steps == 0 {
        return Err(QuantumError::BadGrid("steps must be positive".into()));
    }
    let n = psi.len();
    let (a, b) = coef.interval();
    let dt = (b - a) / steps as f64;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];

    let ks = momenta(n, psi.dx);
    let inv_n = 1.0 / n as f64;
    // 1/n normalisation of the inverse transform is folded into the kinetic factor
    let kinetic: Vec<Complex64> = ks.iter().map(|k| Complex64::from_polar(inv_n, -0.5 * k * k * dt)).collect();
    let x2: Vec<f64> = (0..n).map(|j| psi.x(j).powi(2)).collect();

    let mut v = psi.values.clone();
    let potential = |v: &mut [Complex64], t: f64, tau: f64| -> Result<(), QuantumError> {
        let c = -0.5 * lambda * coef.value(t)? * tau;
        for (z, &xx) in v.iter_mut().zip(&x2) {
            let (s, co) = (c * xx).sin_cos();
            *z *= Complex64::new(co, s);
        }
        Ok(())
    };

    potential(&mut v, a, 0.5 * dt)?;
    for j in 0..steps {
        fwd.process_with_scratch(&mut v, &mut scratch);
        for (z, k) in v.iter_mut().zip(&kinetic) {
            *z *= k;
        }
        inv.process_with_scratch(&mut v, &mut scratch);
        let t = if j + 1 == steps { b } else { a + (j + 1) as f64 * dt };
        let tau = if j + 1 == steps { 0.5 * dt } else { dt };
        potential(&mut v, t, tau)?;
    }

    let mut spectrum = v.clone();
    fwd.process_with_scratch(&mut spectrum, &mut scratch);
    let k_max = ks.iter().fold(0.0f64, |m, k| m.max(k.abs()));
    let peak = spectrum.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let edge = spectrum
        .iter()
        .zip(&ks)
        .filter(|(_, k)| k.abs() > 0.9 * k_max)
        .map(|(z, _)| z.norm())
        .fold(0.0, f64::max);
    if edge > ALIASING_RATIO * peak {
        return Err(QuantumError::Aliasing { ratio: edge / peak });
    }
    WaveGrid::new(psi.x0, psi.dx, v)
}

/// Split-step with the default 20 000 steps per unit interval.
pub fn split_step_default<C: Coefficient>(psi: &WaveGrid, coef: &C, lambda: f64) -> Result<WaveGrid, QuantumError> {
    let (a, b) = coef.interval();
    let steps = ((b - a) * DEFAULT_STEPS_PER_UNIT).ceil() as usize;
    split_step_evolve(psi, coef, lambda, steps.max(1))
}

/// `sup_x | |ψ_out(x)|² − |σ|⁻¹ |ψ_in(x/σ)|² |` over the output grid, relative
/// to the peak output density.
pub fn density_image_residual(psi_in: &WaveGrid, psi_out: &WaveGrid, sigma: f64) -> f64 {
    let inv = 1.0 / sigma.abs();
    let mut worst = 0.0f64;
    let mut peak = 0.0f64;
    for (k, v) in psi_out.values.iter().enumerate() {
        let rho = v.norm_sqr();
        let want = inv * psi_in.interpolate(psi_out.x(k) / sigma).norm_sqr();
        worst = worst.max((rho - want).abs());
        peak = peak.max(rho);
    }
    worst / peak
}

/// `∫ |ρ_a − ρ_b| dx` on the grid of `a`, resampling `b` onto it.
pub fn density_l1(a: &WaveGrid, b: &WaveGrid) -> f64 {
    let b = b.resample(&a.spec());
    a.values.iter().zip(&b.values).map(|(x, y)| (x.norm_sqr() - y.norm_sqr()).abs()).sum::<f64>() * a.dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential_expr::parse_potential;

    fn result(n: usize, sigma: f64, eta: f64) -> SpectralResult {
        SpectralResult {
            n,
            lambda: 1.0,
            sigma,
            eta,
            log_rho: -sigma.abs().ln(),
            alpha_residual: 0.0,
            lambda_bracket_width: 0.0,
        }
    }

    fn packet_grid(p: GaussianPacket) -> WaveGrid {
        p.on_grid(&GridSpec::centered(0.0, 12.0, 1024)).unwrap()
    }

    #[test]
    fn gaussian_is_normalised() {
        let g = packet_grid(GaussianPacket::standard());
        assert!((g.norm() - 1.0).abs() < 1e-12);
        let (m, v) = g.moments();
        assert!(m.abs() < 1e-12);
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grid_must_decay() {
        let vals = vec![Complex64::new(1.0, 0.0); 8];
        assert!(matches!(WaveGrid::new(0.0, 0.1, vals), Err(QuantumError::Boundary { .. })));
        assert!(matches!(WaveGrid::new(0.0, 0.0, vec![Complex64::new(0.0, 0.0); 8]), Err(QuantumError::BadGrid(_))));
    }

    #[test]
    fn identity_when_sigma_one_even_n() {
        let g = packet_grid(GaussianPacket { center: 0.7, width: 0.8, momentum: 0.3 });
        let out = apply_factorized_propagator(&g, &result(2, 1.0, 0.0)).unwrap();
        assert_eq!(out.x0, g.x0);
        for (a, b) in out.values().iter().zip(g.values()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn parity_when_sigma_minus_one() {
        let p = GaussianPacket { center: 0.7, width: 0.8, momentum: 0.3 };
        let g = packet_grid(p);
        let out = apply_factorized_propagator(&g, &result(1, -1.0, 0.0)).unwrap();
        for k in (0..out.len()).step_by(7) {
            let x = out.x(k);
            assert!((out.values()[k] - p.amplitude(-x)).norm() < 1e-12);
        }
    }

    #[test]
    fn image_is_stretched_density() {
        let g = packet_grid(GaussianPacket::standard());
        let r = result(1, -2.35707, 0.8);
        let out = apply_factorized_propagator(&g, &r).unwrap();
        assert!((out.dx - 2.35707 * g.dx).abs() < 1e-15);
        assert!((out.norm() - g.norm()).abs() < 1e-12);
        assert!(density_image_residual(&g, &out, r.sigma) < 1e-10);
        let (_, var) = out.moments();
        assert!((var - 0.5 * 2.35707f64.powi(2)).abs() < 1e-9);
    }

    #[test]
    fn factorized_forms_agree() {
        let g = packet_grid(GaussianPacket { center: 0.4, width: 0.6, momentum: -0.5 });
        let r = result(3, -1.7, 0.9);
        let stretched = apply_factorized_propagator(&g, &r).unwrap();
        let target = GridSpec::centered(0.0, 20.0, 2048);
        let direct = factorized_on_grid(&g, &r, &target).unwrap();
        let resampled = stretched.resample(&target);
        let worst = direct.values().iter().zip(resampled.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn rejects_non_spectral_and_degenerate() {
        let g = packet_grid(GaussianPacket::standard());
        let mut r = result(1, -1.0, 0.0);
        r.alpha_residual = 1e-3;
        assert!(matches!(apply_factorized_propagator(&g, &r), Err(QuantumError::NotSpectral(_))));
        assert!(matches!(apply_factorized_propagator(&g, &result(1, 0.0, 0.0)), Err(QuantumError::DegenerateSigma)));
    }

    #[test]
    fn value_at_out_of_range() {
        let g = packet_grid(GaussianPacket::standard());
        assert!(matches!(g.value_at(100.0), Err(QuantumError::OutOfRange { .. })));
        let v = g.value_at(0.013).unwrap();
        assert!((v - GaussianPacket::standard().amplitude(0.013)).norm() < 1e-6);
    }

    #[test]
    fn free_spreading() {
        let p = GaussianPacket { center: 0.0, width: 0.5, momentum: 0.0 };
        let g = p.on_grid(&GridSpec::centered(0.0, 30.0, 2048)).unwrap();
        let coef = parse_potential("1", 0.0, 2.0).unwrap();
        let out = split_step_evolve(&g, &coef, 0.0, 200).unwrap();
        let (_, var) = out.moments();
        let want = 0.25 + 4.0 / (4.0 * 0.25);
        assert!((var - want).abs() < 1e-6, "{var} vs {want}");
        assert!((out.norm() - g.norm()).abs() < 1e-12);
    }

    #[test]
    fn coherent_state_mirrors_after_half_period() {
        let p = GaussianPacket { center: 2.0, width: std::f64::consts::FRAC_1_SQRT_2, momentum: 0.0 };
        let g = p.on_grid(&GridSpec::centered(0.0, 14.0, 1024)).unwrap();
        let coef = parse_potential("1", 0.0, PI).unwrap();
        let out = split_step_evolve(&g, &coef, 1.0, 4000).unwrap();
        let (m, v) = out.moments();
        assert!((m + 2.0).abs() < 1e-6);
        assert!((v - 0.5).abs() < 1e-6);
        let mirror = GaussianPacket { center: -2.0, ..p }.on_grid(&g.spec()).unwrap();
        assert!(density_l1(&mirror, &out) < 1e-6);
    }

    #[test]
    fn aliasing_is_detected() {
        // a strong kick pushes momentum content past the band edge
        let g = GaussianPacket::standard().on_grid(&GridSpec::centered(0.0, 12.0, 256)).unwrap();
        let coef = parse_potential("1", 0.0, 0.05).unwrap();
        let r = split_step_evolve(&g, &coef, 20_000.0, 50);
        assert!(matches!(r, Err(QuantumError::Aliasing { .. })), "{r:?}");
    }
}
