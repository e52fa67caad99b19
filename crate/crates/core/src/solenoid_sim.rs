//! Charged particle in a homogeneous, time-dependent axial magnetic field
//! `B(t) = B γ(t/T)`, in dimensionless form:
//!
//! ```text
//! q1' = p1 + βγ q2        p1' =  βγ p2 − β²γ² q1
//! q2' = p2 − βγ q1        p2' = −βγ p1 − β²γ² q2
//! q3' = p3                p3' = 0
//! ```
//!
//! In the frame rotating by `θ(τ) = β∫γ` the transverse motion is a pair of
//! identical oscillators `q'' + β²γ² q = 0`, so the flow is the rotation
//! `R(θ) = [[cos θ, sin θ], [−sin θ, cos θ]]` applied after the 1D transfer
//! matrix for `λ = β²`, `φ = γ²`. That factored form is the primary
//! propagator; the direct 6D integration is kept as a cross-check.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::ode_core::{advance, integrate_fixed, steps_for_length, FnSystem, OdeError, DEFAULT_STEPS_PER_UNIT};
use crate::potential_expr::{Coefficient, PotentialSpec};
use crate::transfer_optics::BASIS_START;

/// Image threshold: fan RMS spread below this fraction of
/// `momentum spread × interval length`.
pub const IMAGE_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolenoidError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("need at least 2 samples")]
    TooFewSamples,
    #[error("fan needs at least two states with distinct transverse momenta")]
    DegenerateFan,
    #[error("fan states must share q and p3")]
    MixedFan,
    #[error("no final image: spread {final_spread:e} exceeds threshold {threshold:e} (minimum over the pulse {min_spread:e})")]
    NotSpectral { final_spread: f64, threshold: f64, min_spread: f64 },
}

/// `β = eBT/(2mc)` in Gaussian units.
pub fn reduce_to_dimensionless(e: f64, b: f64, t: f64, m: f64, c: f64) -> Result<f64, SolenoidError> {
    for (name, value) in [("e", e), ("B", b), ("T", t), ("m", m), ("c", c)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(SolenoidError::NonPositive { name, value });
        }
    }
    Ok(e * b * t / (2.0 * m * c))
}

#[derive(Debug, Clone)]
pub struct SolenoidConfig<C = PotentialSpec> {
    pub beta: f64,
    /// Pulse shape `γ(τ)`; its interval is the pulse in units of `T`.
    pub gamma: C,
    /// Pulse duration in seconds; bookkeeping only.
    pub duration: f64,
}

impl<C: Coefficient> SolenoidConfig<C> {
    pub fn new(beta: f64, gamma: C) -> Result<Self, SolenoidError> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(SolenoidError::NonPositive { name: "beta", value: beta });
        }
        Ok(Self { beta, gamma, duration: 1.0 })
    }

    pub fn lambda(&self) -> f64 {
        self.beta * self.beta
    }

    fn steps(&self) -> usize {
        let (a, b) = self.gamma.interval();
        steps_for_length(b - a, DEFAULT_STEPS_PER_UNIT)
    }

    fn gamma_at(&self, t: f64) -> f64 {
        self.gamma.value(t).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParticleState {
    pub tau: f64,
    pub q: [f64; 3],
    pub p: [f64; 3],
}

impl ParticleState {
    pub fn new(tau: f64, q: [f64; 3], p: [f64; 3]) -> Self {
        Self { tau, q, p }
    }

    pub fn max_abs_diff(&self, other: &ParticleState) -> f64 {
        self.q.iter().chain(&self.p).zip(other.q.iter().chain(&other.p)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

// State: basis solutions [q_a, p_a, q_b, p_b] of q'' + β²γ² q = 0, then θ.
fn factored_system<C: Coefficient>(cfg: &SolenoidConfig<C>) -> FnSystem<impl Fn(f64, &[f64], &mut [f64]) + '_> {
    let beta = cfg.beta;
    FnSystem::new(5, move |t, y: &[f64], dy: &mut [f64]| {
        let g = cfg.gamma_at(t);
        let k = beta * beta * g * g;
        dy[0] = y[1];
        dy[1] = -k * y[0];
        dy[2] = y[3];
        dy[3] = -k * y[2];
        dy[4] = beta * g;
    })
}

fn factored_start() -> [f64; 5] {
    [BASIS_START[0], BASIS_START[1], BASIS_START[2], BASIS_START[3], 0.0]
}

/// Maps an initial state through the factored flow described by `y`.
fn apply_factored(y: &[f64], tau: f64, s: &ParticleState) -> ParticleState {
    let (u11, u21, u12, u22) = (y[0], y[1], y[2], y[3]);
    let (sin, cos) = y[4].sin_cos();
    let dt = tau - s.tau;
    let mut q = [0.0; 3];
    let mut p = [0.0; 3];
    let rq = [u11 * s.q[0] + u12 * s.p[0], u11 * s.q[1] + u12 * s.p[1]];
    let rp = [u21 * s.q[0] + u22 * s.p[0], u21 * s.q[1] + u22 * s.p[1]];
    q[0] = cos * rq[0] + sin * rq[1];
    q[1] = -sin * rq[0] + cos * rq[1];
    p[0] = cos * rp[0] + sin * rp[1];
    p[1] = -sin * rp[0] + cos * rp[1];
    q[2] = s.q[2] + s.p[2] * dt;
    p[2] = s.p[2];
    ParticleState { tau, q, p }
}

fn check_start<C: Coefficient>(cfg: &SolenoidConfig<C>, initial: &ParticleState) -> ParticleState {
    let (a, _) = cfg.gamma.interval();
    ParticleState { tau: a, ..*initial }
}

/// `samples` evenly spaced states over the pulse, both ends included, via
/// rotation ∘ twin transfer matrices. The initial `tau` is taken as the
/// start of the pulse.
pub fn propagate_particle<C: Coefficient>(
    cfg: &SolenoidConfig<C>,
    initial: &ParticleState,
    samples: usize,
) -> Result<Vec<ParticleState>, SolenoidError> {
    let start = check_start(cfg, initial);
    sampled(cfg, samples, 5, &factored_start(), |tau, y| apply_factored(y, tau, &start))
}

fn direct_system<C: Coefficient>(cfg: &SolenoidConfig<C>) -> FnSystem<impl Fn(f64, &[f64], &mut [f64]) + '_> {
    let beta = cfg.beta;
    FnSystem::new(6, move |t, y: &[f64], dy: &mut [f64]| {
        let bg = beta * cfg.gamma_at(t);
        dy[0] = y[3] + bg * y[1];
        dy[1] = y[4] - bg * y[0];
        dy[2] = y[5];
        dy[3] = bg * y[4] - bg * bg * y[0];
        dy[4] = -bg * y[3] - bg * bg * y[1];
        dy[5] = 0.0;
    })
}

/// Same as [`propagate_particle`] by RK4 on the full 6D canonical equations.
pub fn propagate_particle_direct<C: Coefficient>(
    cfg: &SolenoidConfig<C>,
    initial: &ParticleState,
    samples: usize,
) -> Result<Vec<ParticleState>, SolenoidError> {
    let s = check_start(cfg, initial);
    let y0 = [s.q[0], s.q[1], s.q[2], s.p[0], s.p[1], s.p[2]];
    sampled(cfg, samples, 6, &y0, |tau, y| ParticleState { tau, q: [y[0], y[1], y[2]], p: [y[3], y[4], y[5]] })
}

fn sampled<C: Coefficient>(
    cfg: &SolenoidConfig<C>,
    samples: usize,
    dim: usize,
    y0: &[f64],
    map: impl Fn(f64, &[f64]) -> ParticleState,
) -> Result<Vec<ParticleState>, SolenoidError> {
    if samples < 2 {
        return Err(SolenoidError::TooFewSamples);
    }
    let interval = cfg.gamma.interval();
    let per = cfg.steps().div_ceil(samples - 1);
    let steps = per * (samples - 1);
    let run = if dim == 5 {
        integrate_fixed(&factored_system(cfg), y0, interval, steps, true)?
    } else {
        integrate_fixed(&direct_system(cfg), y0, interval, steps, true)?
    };
    let dense = run.dense.expect("dense output requested");
    Ok((0..samples)
        .map(|i| {
            let j = i * per;
            map(dense.time(j), dense.state(j))
        })
        .collect())
}

/// Fan of `2·count` states at transverse position `(q1, q2)`: momenta on
/// two rings of radius 0.5 and 1 at `count` equally spaced angles.
pub fn ring_fan(q: [f64; 3], p3: f64, count: usize) -> Vec<ParticleState> {
    let mut fan = Vec::with_capacity(2 * count);
    for r in [0.5, 1.0] {
        for k in 0..count {
            let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            fan.push(ParticleState::new(0.0, q, [r * a.cos(), r * a.sin(), p3]));
        }
    }
    fan
}

fn rms_spread(points: impl Iterator<Item = [f64; 2]> + Clone) -> f64 {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    let (mx, my) = (sx / n, sy / n);
    (points.map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Image {
    pub tau: f64,
    /// Signed ratio of image to object position after undoing the rotation.
    pub magnification: f64,
    /// Accumulated Larmor-frame angle `θ(τ)`.
    pub rotation: f64,
    /// Transverse RMS spread of the fan at `tau`.
    pub spread: f64,
    pub interior: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScan {
    pub beta: f64,
    pub lambda: f64,
    pub threshold: f64,
    pub momentum_spread: f64,
    /// Interior images followed by the final one when present.
    pub images: Vec<Image>,
    pub final_spread: f64,
    pub min_spread: f64,
    pub total_rotation: f64,
}

impl ImageScan {
    pub fn interior_count(&self) -> usize {
        self.images.iter().filter(|i| i.interior).count()
    }

    pub fn final_image(&self) -> Option<&Image> {
        self.images.iter().find(|i| !i.interior)
    }
}

struct FanGeometry {
    q0: [f64; 2],
    momenta: Vec<[f64; 2]>,
}

impl FanGeometry {
    fn new(fan: &[ParticleState]) -> Result<Self, SolenoidError> {
        let first = fan.first().ok_or(SolenoidError::DegenerateFan)?;
        if fan.iter().any(|s| s.q != first.q || s.p[2] != first.p[2]) {
            return Err(SolenoidError::MixedFan);
        }
        let momenta: Vec<[f64; 2]> = fan.iter().map(|s| [s.p[0], s.p[1]]).collect();
        if rms_spread(momenta.iter().copied()) == 0.0 {
            return Err(SolenoidError::DegenerateFan);
        }
        Ok(Self { q0: [first.q[0], first.q[1]], momenta })
    }

    // Rotation is rigid, so the spread is taken in the rotating frame.
    fn spread(&self, y: &[f64]) -> f64 {
        let (u11, u12) = (y[0], y[2]);
        rms_spread(self.momenta.iter().map(|p| [u11 * self.q0[0] + u12 * p[0], u11 * self.q0[1] + u12 * p[1]]))
    }

    fn image(&self, tau: f64, y: &[f64], interior: bool) -> Image {
        let (u11, u12) = (y[0], y[2]);
        let r2 = self.q0[0].powi(2) + self.q0[1].powi(2);
        let magnification = if r2 > 0.0 {
            let n = self.momenta.len() as f64;
            let c = self.momenta.iter().fold([0.0, 0.0], |acc, p| {
                [acc[0] + (u11 * self.q0[0] + u12 * p[0]) / n, acc[1] + (u11 * self.q0[1] + u12 * p[1]) / n]
            });
            (c[0] * self.q0[0] + c[1] * self.q0[1]) / r2
        } else {
            u11
        };
        Image { tau, magnification, rotation: y[4], spread: self.spread(y), interior }
    }
}

fn golden_min(mut lo: f64, mut hi: f64, mut f: impl FnMut(f64) -> Result<f64, SolenoidError>) -> Result<f64, SolenoidError> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > 1e-13 * hi.abs().max(1.0) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { x1 } else { x2 })
}

/// Locates every collapse of the fan's transverse spread on `(a, b]`
/// without judging whether the final image exists.
pub fn scan_images<C: Coefficient>(cfg: &SolenoidConfig<C>, fan: &[ParticleState]) -> Result<ImageScan, SolenoidError> {
    let geo = FanGeometry::new(fan)?;
    let (a, b) = cfg.gamma.interval();
    let len = b - a;
    let sys = factored_system(cfg);
    let steps = cfg.steps();
    let h = len / steps as f64;
    let dense = integrate_fixed(&sys, &factored_start(), (a, b), steps, true)?.dense.expect("dense output requested");
    let spreads: Vec<f64> = dense.iter().map(|(_, y)| geo.spread(y)).collect();
    let momentum_spread = rms_spread(geo.momenta.iter().copied());
    let threshold = IMAGE_THRESHOLD * momentum_spread * len;
    let edge = 1e-9 * len;

    let mut images = Vec::new();
    let mut min_spread = f64::INFINITY;
    for i in 1..spreads.len() - 1 {
        if !(spreads[i] <= spreads[i - 1] && spreads[i] <= spreads[i + 1]) {
            continue;
        }
        let t0 = dense.time(i - 1);
        let y0 = dense.state(i - 1).to_vec();
        let t2 = (t0 + 2.0 * h).min(b);
        let at = |t: f64| -> Result<Vec<f64>, SolenoidError> { Ok(advance(&sys, &y0, t0, t, h)?) };
        let tau = golden_min(t0, t2, |t| Ok(geo.spread(&at(t)?)))?;
        let y = at(tau)?;
        let img = geo.image(tau, &y, true);
        min_spread = min_spread.min(img.spread);
        if img.spread < threshold && tau > a + edge && tau < b - edge {
            images.push(img);
        }
    }
    // the same collapse can be reached from neighbouring grid minima
    images.dedup_by(|x, y| (x.tau - y.tau).abs() < 2.0 * h);

    let last = dense.state(dense.len() - 1);
    let final_spread = geo.spread(last);
    min_spread = min_spread.min(final_spread);
    if final_spread < threshold {
        images.push(geo.image(b, last, false));
    }
    Ok(ImageScan {
        beta: cfg.beta,
        lambda: cfg.lambda(),
        threshold,
        momentum_spread,
        images,
        final_spread,
        min_spread,
        total_rotation: last[4],
    })
}

/// Image report for a fan; errors when the fan does not refocus at the end
/// of the pulse, i.e. `β²` is not an eigenvalue of `γ²`.
pub fn image_report<C: Coefficient>(cfg: &SolenoidConfig<C>, fan: &[ParticleState]) -> Result<ImageScan, SolenoidError> {
    let scan = scan_images(cfg, fan)?;
    if scan.final_image().is_none() {
        return Err(SolenoidError::NotSpectral {
            final_spread: scan.final_spread,
            threshold: scan.threshold,
            min_spread: scan.min_spread,
        });
    }
    Ok(scan)
}

/// CSV rows `tau,q1,q2,q3,p1,p2,p3` with a single header line.
pub fn write_trajectory_csv<W: Write>(states: &[ParticleState], mut w: W, fmt: impl Fn(f64) -> String) -> io::Result<()> {
    writeln!(w, "tau,q1,q2,q3,p1,p2,p3")?;
    for s in states {
        let row: Vec<String> = std::iter::once(s.tau).chain(s.q).chain(s.p).map(&fmt).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential_expr::parse_potential;
    use std::f64::consts::PI;

    fn cfg(beta: f64, gamma: &str, b: f64) -> SolenoidConfig {
        SolenoidConfig::new(beta, parse_potential(gamma, 0.0, b).unwrap()).unwrap()
    }

    #[test]
    fn dimensionless_amplitude() {
        assert_eq!(reduce_to_dimensionless(2.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        let b1 = reduce_to_dimensionless(1.3, 0.7, 2.0, 1.1, 3.0).unwrap();
        let b2 = reduce_to_dimensionless(1.3, 1.4, 2.0, 1.1, 3.0).unwrap();
        assert!((b2 - 2.0 * b1).abs() < 1e-15);
        assert!(matches!(reduce_to_dimensionless(1.0, 0.0, 1.0, 1.0, 1.0), Err(SolenoidError::NonPositive { name: "B", .. })));
        assert!(SolenoidConfig::new(-1.0, parse_potential("1", 0.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn on_axis_stays_on_axis() {
        let c = cfg(2.0, "1+sin(2*pi*t)", 1.0);
        let traj = propagate_particle(&c, &ParticleState::new(0.0, [0.0, 0.0, 0.3], [0.0, 0.0, 0.7]), 11).unwrap();
        for s in &traj {
            assert_eq!(s.q[0], 0.0);
            assert_eq!(s.q[1], 0.0);
            assert!((s.q[2] - 0.3 - 0.7 * s.tau).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_field_is_free_flight() {
        let c = cfg(1.5, "0", 1.0);
        let s0 = ParticleState::new(0.0, [0.1, -0.2, 0.0], [0.4, 0.5, 1.0]);
        for traj in [propagate_particle(&c, &s0, 5).unwrap(), propagate_particle_direct(&c, &s0, 5).unwrap()] {
            for s in traj {
                for k in 0..3 {
                    assert!((s.q[k] - (s0.q[k] + s0.p[k] * s.tau)).abs() < 1e-13);
                    assert!((s.p[k] - s0.p[k]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn factored_matches_direct() {
        let c = cfg(2.3097, "1+sin(2*pi*t)", 1.0);
        let s0 = ParticleState::new(0.0, [0.3, -0.1, 0.0], [0.2, 0.7, 0.5]);
        let f = propagate_particle(&c, &s0, 21).unwrap();
        let d = propagate_particle_direct(&c, &s0, 21).unwrap();
        for (x, y) in f.iter().zip(&d) {
            assert_eq!(x.tau, y.tau);
            assert!(x.max_abs_diff(y) < 1e-10, "{}", x.max_abs_diff(y));
            assert!((y.p[2] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_field_half_turn() {
        let c = cfg(1.0, "1", PI);
        let fan = ring_fan([0.4, 0.0, 0.0], 1.0, 8);
        let scan = image_report(&c, &fan).unwrap();
        assert_eq!(scan.interior_count(), 0);
        let img = scan.final_image().unwrap();
        assert_eq!(img.tau, PI);
        assert!((img.magnification + 1.0).abs() < 1e-9);
        assert!((img.rotation - PI).abs() < 1e-12);
    }

    #[test]
    fn longer_constant_field_has_interior_images() {
        let c = cfg(1.0, "1", 3.0 * PI);
        let scan = image_report(&c, &ring_fan([0.4, 0.2, 0.0], 0.0, 6)).unwrap();
        assert_eq!(scan.interior_count(), 2);
        for (k, img) in scan.images.iter().enumerate() {
            let want = (k + 1) as f64 * PI;
            assert!((img.tau - want).abs() < 1e-9, "{} vs {want}", img.tau);
            assert!((img.magnification - if k % 2 == 0 { -1.0 } else { 1.0 }).abs() < 1e-8);
        }
    }

    #[test]
    fn off_spectrum_is_reported() {
        let c = cfg(1.2, "1", PI);
        let err = image_report(&c, &ring_fan([0.4, 0.0, 0.0], 0.0, 4)).unwrap_err();
        assert!(matches!(err, SolenoidError::NotSpectral { .. }), "{err}");
    }

    #[test]
    fn fan_validation() {
        let c = cfg(1.0, "1", PI);
        let same = vec![ParticleState::new(0.0, [0.0; 3], [1.0, 0.0, 0.0]); 3];
        assert!(matches!(scan_images(&c, &same), Err(SolenoidError::DegenerateFan)));
        let mixed = vec![
            ParticleState::new(0.0, [0.0; 3], [1.0, 0.0, 0.0]),
            ParticleState::new(0.0, [0.1, 0.0, 0.0], [0.0, 1.0, 0.0]),
        ];
        assert!(matches!(scan_images(&c, &mixed), Err(SolenoidError::MixedFan)));
    }

    #[test]
    fn csv_layout() {
        let mut out = Vec::new();
        write_trajectory_csv(&[ParticleState::new(0.5, [1.0, 2.0, 3.0], [4.0, 5.0, 6.0])], &mut out, |v| format!("{v}")).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "tau,q1,q2,q3,p1,p2,p3\n0.5,1,2,3,4,5,6\n");
    }
}
