//! Fixed-step RK4 integration, whole-trajectory step doubling, and
//! bracketing root finding for scalar functions.

use thiserror::Error;

/// Step density used for spectral work when the caller does not choose one.
pub const DEFAULT_STEPS_PER_UNIT: f64 = 20_000.0;

/// Ceiling for [`refine_until`].
pub const DEFAULT_MAX_STEPS: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("need t0 < t1, got [{t0}, {t1}]")]
    InvalidInterval { t0: f64, t1: f64 },
    #[error("step count must be positive")]
    ZeroSteps,
    #[error("initial state has {got} components, system expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite state at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },
    #[error("no convergence to {tol:e} within {max_steps} steps (last change {last_change:e})")]
    NoConvergence { tol: f64, max_steps: usize, last_change: f64 },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

/// A first-order system `y' = f(t, y)` of fixed dimension.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

impl<S: OdeSystem + ?Sized> OdeSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (**self).rhs(t, y, dy)
    }
}

/// Adapts a closure into an [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnSystem<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}

/// States on the uniform integration grid, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutput {
    pub dim: usize,
    pub times: Vec<f64>,
    states: Vec<f64>,
}

impl DenseOutput {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.times.iter().copied().zip(self.states.chunks_exact(self.dim))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    pub final_state: Vec<f64>,
    pub steps: usize,
    pub dense: Option<DenseOutput>,
}

/// Scratch buffers for RK4 steps plus the Kahan compensation of the state.
struct Rk4 {
    comp: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(dim: usize) -> Self {
        Self {
            comp: vec![0.0; dim],
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    fn step<S: OdeSystem + ?Sized>(&mut self, sys: &S, t: f64, h: f64, y: &mut [f64]) {
        let n = y.len();
        sys.rhs(t, y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        sys.rhs(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        sys.rhs(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        sys.rhs(t + h, &self.tmp, &mut self.k4);
        for i in 0..n {
            let inc = h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]) - self.comp[i];
            let sum = y[i] + inc;
            self.comp[i] = (sum - y[i]) - inc;
            y[i] = sum;
        }
    }
}

/// Classical RK4 with `steps` uniform steps over `[t0, t1]`.
///
/// Step times are computed as `t0 + i*h` (not accumulated), so runs with the
/// same inputs are bit-identical.
pub fn integrate_fixed<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    (t0, t1): (f64, f64),
    steps: usize,
    dense: bool,
) -> Result<Integration, OdeError> {
    if !(t0 < t1) {
        return Err(OdeError::InvalidInterval { t0, t1 });
    }
    if steps == 0 {
        return Err(OdeError::ZeroSteps);
    }
    let dim = sys.dim();
    if y0.len() != dim {
        return Err(OdeError::DimensionMismatch { expected: dim, got: y0.len() });
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFinite { step: 0, t: t0 });
    }
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    let mut rk = Rk4::new(dim);
    let mut out = dense.then(|| DenseOutput {
        dim,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity((steps + 1) * dim),
    });
    if let Some(d) = out.as_mut() {
        d.times.push(t0);
        d.states.extend_from_slice(&y);
    }
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        rk.step(sys, t, h, &mut y);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite { step: i + 1, t: t + h });
        }
        if let Some(d) = out.as_mut() {
            d.times.push(if i + 1 == steps { t1 } else { t0 + (i + 1) as f64 * h });
            d.states.extend_from_slice(&y);
        }
    }
    Ok(Integration { final_state: y, steps, dense: out })
}

/// Single RK4 pass from `(t0, y0)` to `t1` using at most `max_h` per step.
/// `t1 == t0` returns `y0` unchanged.
pub fn advance<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    t0: f64,
    t1: f64,
    max_h: f64,
) -> Result<Vec<f64>, OdeError> {
    if t1 == t0 {
        return Ok(y0.to_vec());
    }
    let steps = ((t1 - t0) / max_h).abs().ceil().max(1.0) as usize;
    Ok(integrate_fixed(sys, y0, (t0, t1), steps, false)?.final_state)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub initial_steps: usize,
    pub max_steps: usize,
}

impl RefineOptions {
    /// Initial step count from [`DEFAULT_STEPS_PER_UNIT`] over an interval of length `len`.
    pub fn for_length(len: f64) -> Self {
        Self {
            initial_steps: steps_for_length(len, DEFAULT_STEPS_PER_UNIT),
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

pub fn steps_for_length(len: f64, per_unit: f64) -> usize {
    ((len * per_unit).ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub final_state: Vec<f64>,
    pub steps: usize,
    /// Max-norm difference between the last two passes.
    pub change: f64,
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Repeats [`integrate_fixed`] with doubled step counts until two successive
/// final states agree to `tol` in max-norm.
pub fn refine_until<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    interval: (f64, f64),
    tol: f64,
    opts: RefineOptions,
) -> Result<Refined, OdeError> {
    if !(tol > 0.0) {
        return Err(OdeError::BadTolerance(tol));
    }
    let mut steps = opts.initial_steps.max(1);
    let mut prev = integrate_fixed(sys, y0, interval, steps, false)?.final_state;
    let mut change = f64::INFINITY;
    while steps * 2 <= opts.max_steps {
        steps *= 2;
        let next = integrate_fixed(sys, y0, interval, steps, false)?.final_state;
        change = max_diff(&prev, &next);
        prev = next;
        if change < tol {
            return Ok(Refined { final_state: prev, steps, change });
        }
    }
    Err(OdeError::NoConvergence { tol, max_steps: opts.max_steps, last_change: change })
}

/// A sign-change interval for a scalar function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Bracket {
    pub fn new(lo: f64, hi: f64, f_lo: f64, f_hi: f64) -> Option<Self> {
        (lo <= hi && f_lo * f_hi <= 0.0).then_some(Self { lo, hi, f_lo, f_hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }
}

/// Brackets from already evaluated `(grid, values)` pairs. An exact zero at
/// a grid point yields the degenerate bracket `[x, x]`.
pub fn brackets_from_values(grid: &[f64], values: &[f64]) -> Vec<Bracket> {
    let mut out = Vec::new();
    for (i, (&x, &v)) in grid.iter().zip(values).enumerate() {
        if v == 0.0 {
            out.push(Bracket { lo: x, hi: x, f_lo: 0.0, f_hi: 0.0 });
            continue;
        }
        if let (Some(&x1), Some(&v1)) = (grid.get(i + 1), values.get(i + 1)) {
            if v1 != 0.0 && v.signum() != v1.signum() {
                out.push(Bracket { lo: x, hi: x1, f_lo: v, f_hi: v1 });
            }
        }
    }
    out
}

/// Every adjacent grid pair on which `f` changes sign, in grid order.
pub fn bracket_root<F: FnMut(f64) -> f64>(mut f: F, grid: &[f64]) -> Vec<Bracket> {
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    brackets_from_values(grid, &values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootSolution {
    pub root: f64,
    /// Width of the final bracket.
    pub width: f64,
    pub evaluations: usize,
}

/// Hybrid Illinois-secant / bisection root solve inside `bracket`.
///
/// Returns the evaluated point with the smallest `|f|`; it always lies inside
/// the bracket. Stops when the bracket is narrower than `tol` or can no
/// longer shrink in floating point.
pub fn solve_root<F: FnMut(f64) -> f64>(f: F, bracket: Bracket, tol: f64) -> f64 {
    solve_root_detailed(f, bracket, tol).root
}

pub fn solve_root_detailed<F: FnMut(f64) -> f64>(mut f: F, bracket: Bracket, tol: f64) -> RootSolution {
    let Bracket { mut lo, mut hi, mut f_lo, mut f_hi } = bracket;
    if f_lo == 0.0 {
        return RootSolution { root: lo, width: hi - lo, evaluations: 0 };
    }
    if f_hi == 0.0 {
        return RootSolution { root: hi, width: hi - lo, evaluations: 0 };
    }
    let (mut best, mut best_f) = if f_lo.abs() <= f_hi.abs() { (lo, f_lo.abs()) } else { (hi, f_hi.abs()) };
    // side retained on the previous step: -1 lo, +1 hi
    let mut retained = 0i8;
    let mut force_bisect = false;
    let mut evaluations = 0;
    for _ in 0..400 {
        let width = hi - lo;
        if width < tol {
            break;
        }
        let mut x = if force_bisect {
            0.5 * (lo + hi)
        } else {
            (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        };
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        if x <= lo || x >= hi {
            // lo and hi are adjacent floats
            break;
        }
        let fx = f(x);
        evaluations += 1;
        if fx.is_nan() {
            if force_bisect {
                break;
            }
            force_bisect = true;
            continue;
        }
        if fx.abs() < best_f {
            best = x;
            best_f = fx.abs();
        }
        if fx == 0.0 {
            return RootSolution { root: x, width: 0.0, evaluations };
        }
        if fx.signum() == f_lo.signum() {
            lo = x;
            f_lo = fx;
            if retained == 1 {
                f_hi *= 0.5;
            }
            retained = 1;
        } else {
            hi = x;
            f_hi = fx;
            if retained == -1 {
                f_lo *= 0.5;
            }
            retained = -1;
        }
        force_bisect = hi - lo > 0.5 * width;
    }
    RootSolution { root: best, width: hi - lo, evaluations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    fn exp_growth() -> FnSystem<impl Fn(f64, &[f64], &mut [f64])> {
        FnSystem::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = y[0])
    }

    fn oscillator() -> FnSystem<impl Fn(f64, &[f64], &mut [f64])> {
        FnSystem::new(2, |_t, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        })
    }

    #[test]
    fn exponential() {
        let r = integrate_fixed(&exp_growth(), &[1.0], (0.0, 1.0), 1000, false).unwrap();
        assert!((r.final_state[0] - E).abs() < 1e-10);
    }

    #[test]
    fn oscillator_half_period() {
        let r = integrate_fixed(&oscillator(), &[1.0, 0.0], (0.0, PI), 2000, true).unwrap();
        assert!((r.final_state[0] + 1.0).abs() < 1e-9);
        assert!(r.final_state[1].abs() < 1e-9);
        let d = r.dense.unwrap();
        assert_eq!(d.len(), 2001);
        assert_eq!(d.times[0], 0.0);
        assert_eq!(*d.times.last().unwrap(), PI);
        assert_eq!(d.state(2000), &r.final_state[..]);
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |n| {
            let r = integrate_fixed(&oscillator(), &[1.0, 0.0], (0.0, PI), n, false).unwrap();
            (r.final_state[0] + 1.0).abs().max(r.final_state[1].abs())
        };
        let ratio = err(50) / err(100);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn bit_reproducible() {
        let a = integrate_fixed(&oscillator(), &[0.3, 0.7], (0.0, 2.0), 777, true).unwrap();
        let b = integrate_fixed(&oscillator(), &[0.3, 0.7], (0.0, 2.0), 777, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn integration_errors() {
        let sys = exp_growth();
        assert_eq!(integrate_fixed(&sys, &[1.0], (1.0, 0.0), 10, false), Err(OdeError::InvalidInterval { t0: 1.0, t1: 0.0 }));
        assert_eq!(integrate_fixed(&sys, &[1.0], (0.0, 1.0), 0, false), Err(OdeError::ZeroSteps));
        assert!(matches!(integrate_fixed(&sys, &[1.0, 2.0], (0.0, 1.0), 3, false), Err(OdeError::DimensionMismatch { .. })));
        let blowup = FnSystem::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0]);
        match integrate_fixed(&blowup, &[1.0], (0.0, 2.0), 100, false) {
            Err(OdeError::NonFinite { step, .. }) => assert!(step > 40 && step <= 100),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn refine_exponential() {
        let r = refine_until(&exp_growth(), &[1.0], (0.0, 1.0), 1e-12, RefineOptions { initial_steps: 8, max_steps: DEFAULT_MAX_STEPS }).unwrap();
        assert!((r.final_state[0] - E).abs() < 1e-12);
        assert!(r.change < 1e-12);
    }

    #[test]
    fn refine_trivial_converges_at_first_doubling() {
        let zero = FnSystem::new(1, |_t, _y: &[f64], dy: &mut [f64]| dy[0] = 0.0);
        let r = refine_until(&zero, &[3.0], (0.0, 1.0), 1e-12, RefineOptions { initial_steps: 4, max_steps: 1 << 10 }).unwrap();
        assert_eq!(r.steps, 8);
        assert_eq!(r.final_state, vec![3.0]);
    }

    #[test]
    fn refine_gives_up_at_ceiling() {
        let r = refine_until(&exp_growth(), &[1.0], (0.0, 1.0), 1e-30, RefineOptions { initial_steps: 4, max_steps: 64 });
        assert!(matches!(r, Err(OdeError::NoConvergence { .. })));
        assert!(matches!(
            refine_until(&exp_growth(), &[1.0], (0.0, 1.0), 0.0, RefineOptions::for_length(1.0)),
            Err(OdeError::BadTolerance(_))
        ));
    }

    #[test]
    fn brackets() {
        let b = bracket_root(|x| x * x - 2.0, &[0.0, 1.0, 2.0]);
        assert_eq!(b.len(), 1);
        assert_eq!((b[0].lo, b[0].hi), (1.0, 2.0));

        let grid: Vec<f64> = (1..=7).map(f64::from).collect();
        let b = bracket_root(f64::sin, &grid);
        assert_eq!(b.iter().map(|b| (b.lo, b.hi)).collect::<Vec<_>>(), vec![(3.0, 4.0), (6.0, 7.0)]);

        assert!(bracket_root(f64::exp, &grid).is_empty());

        let b = bracket_root(|x| x - 1.0, &[0.0, 1.0, 2.0]);
        assert_eq!(b.len(), 1);
        assert!(b[0].is_degenerate());
        assert_eq!(b[0].lo, 1.0);
    }

    #[test]
    fn roots() {
        let br = Bracket::new(1.0, 2.0, -1.0, 2.0).unwrap();
        let r = solve_root(|x| x * x - 2.0, br, 1e-9);
        assert!((r - 2f64.sqrt()).abs() < 1e-9);

        let br = Bracket::new(1.0, 2.0, 1f64.cos(), 2f64.cos()).unwrap();
        let r = solve_root(f64::cos, br, 1e-9);
        assert!((r - PI / 2.0).abs() < 1e-9);

        let br = Bracket::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(solve_root(|x| x - 1.0, br, 1e-9), 1.0);
        assert!(Bracket::new(0.0, 1.0, 1.0, 1.0).is_none());
    }

    #[test]
    fn root_of_steep_function_stays_in_bracket() {
        let f = |x: f64| (x - 0.3).powi(3) * 1e6 + (x - 0.3);
        let br = Bracket::new(0.0, 10.0, f(0.0), f(10.0)).unwrap();
        let r = solve_root(f, br, 1e-12);
        assert!((0.0..=10.0).contains(&r));
        assert!((r - 0.3).abs() < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn root_inside_bracket_and_accurate(c in -5.0f64..5.0, k in 0.1f64..10.0, lo in -20.0f64..-6.0, hi in 6.0f64..20.0) {
                let f = |x: f64| (k * (x - c)).tanh() + 0.1 * (x - c);
                let br = Bracket::new(lo, hi, f(lo), f(hi)).unwrap();
                let r = solve_root(f, br, 1e-11);
                prop_assert!(r >= lo && r <= hi);
                prop_assert!((r - c).abs() < 1e-9);
            }

            #[test]
            fn accepted_iterates_improve(c in 0.1f64..0.9) {
                let mut best = f64::INFINITY;
                let mut trace = Vec::new();
                let f = |x: f64| x.powi(3) - c.powi(3);
                let br = Bracket::new(0.0, 1.0, f(0.0), f(1.0)).unwrap();
                let r = solve_root(|x| { let v = f(x); if v.abs() < best { best = v.abs(); trace.push(best); } v }, br, 1e-12);
                prop_assert!(trace.windows(2).all(|w| w[1] < w[0]));
                prop_assert!((r - c).abs() < 1e-10);
            }
        }
    }
}
