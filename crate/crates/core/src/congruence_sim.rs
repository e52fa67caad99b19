//! Fans of phase-plane trajectories ("congruences"), the focus they form at
//! spectral λ, and p-axis crossing scans on growing intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ode_core::{advance, integrate_fixed, steps_for_length, FnSystem, OdeError, DEFAULT_STEPS_PER_UNIT};
use crate::potential_expr::{require_nonneg, Coefficient, EvalError, ValidationError};
use crate::transfer_optics::{evolution_matrix, matrix_from_state, BasisSystem, BASIS_START};

/// Event location tolerance in t.
pub const CROSSING_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CongruenceError {
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("coefficient rejected: {0}")]
    Invalid(#[from] ValidationError),
    #[error("a fan needs at least two distinct momenta")]
    TooFewMomenta,
    #[error("need at least 2 samples")]
    TooFewSamples,
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PhasePoint {
    pub t: f64,
    pub q: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrajectory {
    pub lambda: f64,
    pub source: (f64, f64),
    pub samples: Vec<PhasePoint>,
}

fn oscillator<C: Coefficient>(coef: &C, lambda: f64) -> FnSystem<impl Fn(f64, &[f64], &mut [f64]) + '_> {
    FnSystem::new(2, move |t, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = -lambda * coef.value(t).unwrap_or(f64::NAN) * y[0];
    })
}

/// Integrates one orbit from `(q0, p0)` at `t = a` and returns `samples`
/// evenly spaced points including both ends.
pub fn propagate_phase_point<C: Coefficient>(
    coef: &C,
    lambda: f64,
    q0: f64,
    p0: f64,
    samples: usize,
) -> Result<PhaseTrajectory, CongruenceError> {
    if samples < 2 {
        return Err(CongruenceError::TooFewSamples);
    }
    let (a, b) = coef.interval();
    let intervals = samples - 1;
    let per_sample = steps_for_length(b - a, DEFAULT_STEPS_PER_UNIT).div_ceil(intervals).max(1);
    let steps = per_sample * intervals;
    let sys = oscillator(coef, lambda);
    let r = integrate_fixed(&sys, &[q0, p0], (a, b), steps, true)?;
    let dense = r.dense.expect("dense output requested");
    let samples = (0..=intervals)
        .map(|k| {
            let i = k * per_sample;
            let y = dense.state(i);
            PhasePoint { t: dense.times[i], q: y[0], p: y[1] }
        })
        .collect();
    Ok(PhaseTrajectory { lambda, source: (q0, p0), samples })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FocusReport {
    pub t_image: f64,
    /// Mean terminal position of the fan.
    pub q_image: f64,
    /// `max |q_i(b) − σ q0|` with `σ = u11`.
    pub spread: f64,
    /// `q_image / q0`, or `u11` when `q0 = 0`.
    pub magnification: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fan {
    pub report: FocusReport,
    pub trajectories: Vec<PhaseTrajectory>,
}

/// Evenly spaced momenta in `[lo, hi]`.
pub fn default_momenta(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

/// The default fan: 11 momenta in `[−2, 2]`.
pub fn standard_momenta() -> Vec<f64> {
    default_momenta(11, -2.0, 2.0)
}

pub fn simulate_fan<C: Coefficient>(
    coef: &C,
    lambda: f64,
    q0: f64,
    momenta: &[f64],
    samples: usize,
) -> Result<Fan, CongruenceError> {
    let mut distinct = momenta.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(CongruenceError::TooFewMomenta);
    }
    let trajectories = momenta
        .iter()
        .map(|&p| propagate_phase_point(coef, lambda, q0, p, samples))
        .collect::<Result<Vec<_>, _>>()?;
    let u = evolution_matrix(coef, lambda, 1e-10)?;
    let ends: Vec<f64> = trajectories.iter().map(|tr| tr.samples.last().expect("samples").q).collect();
    let q_image = ends.iter().sum::<f64>() / ends.len() as f64;
    let predicted = u.u11 * q0;
    let spread = ends.iter().map(|q| (q - predicted).abs()).fold(0.0, f64::max);
    let magnification = if q0 != 0.0 { q_image / q0 } else { u.u11 };
    let (_, b) = coef.interval();
    Ok(Fan { report: FocusReport { t_image: b, q_image, spread, magnification }, trajectories })
}

/// A p-axis crossing of the orbit leaving `(0, 1)`, with `σ_k = u11(t_k)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Crossing {
    pub t: f64,
    pub sigma: f64,
}

/// Records every `t_k` in `(a, b]` at which the orbit started at `(0, 1)`
/// returns to `q = 0`, together with the amplification `u11(t_k, a)`.
///
/// The dense step is chosen so the Prüfer angle advances by less than π/4 per
/// step, which rules out two zeros inside one step.
pub fn crossing_scan<C: Coefficient>(coef: &C, lambda: f64) -> Result<Vec<Crossing>, CongruenceError> {
    if !(lambda > 0.0) {
        return Err(CongruenceError::NonPositiveLambda(lambda));
    }
    let report = require_nonneg(coef)?;
    let (a, b) = coef.interval();
    let rate = 1.0f64.max(lambda * report.max);
    let mut steps = steps_for_length(b - a, DEFAULT_STEPS_PER_UNIT);
    let max_h = 0.25 * std::f64::consts::PI / rate;
    if (b - a) / steps as f64 > max_h {
        steps = ((b - a) / max_h).ceil() as usize;
    }
    let h = (b - a) / steps as f64;
    let sys = BasisSystem { coef, lambda };
    let r = integrate_fixed(&sys, &BASIS_START, (a, b), steps, true)?;
    let dense = r.dense.expect("dense output requested");

    let mut out = Vec::new();
    for i in 1..dense.len() {
        let (t0, y0) = (dense.times[i - 1], dense.state(i - 1));
        let (t1, y1) = (dense.times[i], dense.state(i));
        let (q0, q1) = (y0[2], y1[2]);
        if q1 == 0.0 {
            out.push(Crossing { t: t1, sigma: y1[0] });
            continue;
        }
        if i == 1 || q0 == 0.0 || q0.signum() == q1.signum() {
            continue;
        }
        // bisection on q between dense samples
        let (mut lo, mut hi) = (t0, t1);
        let mut q_lo = q0;
        let mut at = y0.to_vec();
        while hi - lo > CROSSING_TOL {
            let mid = 0.5 * (lo + hi);
            let y = advance(&sys, y0, t0, mid, h)?;
            if y[2].signum() == q_lo.signum() {
                lo = mid;
                q_lo = y[2];
            } else {
                hi = mid;
            }
            at = y;
        }
        let t = 0.5 * (lo + hi);
        let y = if t == t0 { at } else { advance(&sys, y0, t0, t, h)? };
        out.push(Crossing { t, sigma: y[0] });
    }
    // a zero sitting just past b (spectral λ, rounding) still counts as a crossing at b
    let last = dense.state(dense.len() - 1);
    let (q_end, p_end) = (last[2], last[3]);
    let already = out.last().is_some_and(|c| b - c.t <= h);
    if !already && q_end != 0.0 && p_end != 0.0 {
        let dt = -q_end / p_end;
        if (0.0..=1e-9).contains(&dt) {
            out.push(Crossing { t: b, sigma: matrix_from_state(last, lambda).u11 });
        }
    }
    Ok(out)
}

/// Seeded piecewise-constant positive coefficient, standing in for an
/// erratically fluctuating `φ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomStaircase {
    a: f64,
    b: f64,
    levels: Vec<f64>,
    ramp: f64,
}

impl RandomStaircase {
    /// `pieces` equal-width steps on `[a, b]` with levels uniform in `[lo, hi]`, `0 < lo < hi`.
    pub fn new(seed: u64, a: f64, b: f64, pieces: usize, lo: f64, hi: f64) -> Self {
        assert!(a < b && pieces > 0 && 0.0 < lo && lo < hi, "invalid staircase parameters");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = (0..pieces).map(|_| rng.gen_range(lo..hi)).collect();
        Self { a, b, levels, ramp: 0.0 }
    }

    /// Replaces each jump by a quintic (C²) riser over the last `ramp`
    /// fraction of the piece. Sharp jumps cap RK4 at first order, so step
    /// doubling only converges to tight tolerances with a riser.
    pub fn with_ramp(mut self, ramp: f64) -> Self {
        assert!((0.0..=1.0).contains(&ramp), "ramp fraction must lie in [0, 1]");
        self.ramp = ramp;
        self
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

impl Coefficient for RandomStaircase {
    fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    fn value(&self, t: f64) -> Result<f64, EvalError> {
        if !t.is_finite() {
            return Err(EvalError::BadPoint(t));
        }
        let n = self.levels.len();
        let u = ((t - self.a) / (self.b - self.a)) * n as f64;
        let k = (u.floor().max(0.0) as usize).min(n - 1);
        let f = u - k as f64;
        if self.ramp > 0.0 && k + 1 < n && f > 1.0 - self.ramp {
            let s = (f - (1.0 - self.ramp)) / self.ramp;
            let blend = s * s * s * (10.0 + s * (6.0 * s - 15.0));
            return Ok(self.levels[k] + (self.levels[k + 1] - self.levels[k]) * blend);
        }
        Ok(self.levels[k])
    }
}
