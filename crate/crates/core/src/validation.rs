//! Built-in acceptance checks. Each criterion runs its numerical experiment
//! and reports every sub-check with the measured value, the target and the
//! tolerance, so failures show by how much they miss.

use std::f64::consts::PI;
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::congruence_sim::crossing_scan;
use crate::ode_core::{integrate_fixed, FnSystem};
use crate::potential_expr::{parse_potential, PotentialSpec, Squared};
use crate::prufer_spectral::{delta_alpha, prufer_trajectory, spectrum, SpectralOptions, SpectralResult};
use crate::quantum_image::{apply_factorized_propagator, density_l1, split_step_default, GaussianPacket};
use crate::solenoid_sim::{
    propagate_particle, propagate_particle_direct, ring_fan, scan_images, ParticleState, SolenoidConfig,
};
use crate::transfer_optics::{eta_integral, evolution_matrix};

/// Reference potentials with published spectra.
pub struct ReferenceCase {
    pub phi: &'static str,
    pub interval: (f64, f64),
    pub lambdas: [f64; 3],
    pub lambda_tols: [f64; 3],
    pub sigmas: [f64; 3],
}

pub const QUARTIC: ReferenceCase = ReferenceCase {
    phi: "(t+pi)^4",
    interval: (0.0, PI),
    lambdas: [0.00174401, 0.00734843, 0.0167517],
    lambda_tols: [5e-7; 3],
    sigmas: [-0.543046, 0.51828, -0.510087],
};

pub const EXPONENTIAL: ReferenceCase = ReferenceCase {
    phi: "1.1*exp(t)-1",
    interval: (0.0, 1.0),
    lambdas: [11.145735, 47.301484, 108.42863],
    lambda_tols: [1e-6, 1e-5, 1e-6],
    sigmas: [-0.591942, 0.54752, -0.52727],
};

pub const SQUARED_SINE: ReferenceCase = ReferenceCase {
    phi: "(1+sin(2*pi*t))^2",
    interval: (0.0, 1.0),
    lambdas: [5.3347146, 34.1068933, 86.8947093],
    lambda_tols: [1e-6; 3],
    sigmas: [-2.35707, 3.1455, -3.42553],
};

pub const REFERENCE_CASES: [&ReferenceCase; 3] = [&QUARTIC, &EXPONENTIAL, &SQUARED_SINE];

const SIGMA_TOL: f64 = 2e-4;

impl ReferenceCase {
    pub fn potential(&self) -> PotentialSpec {
        parse_potential(self.phi, self.interval.0, self.interval.1).expect("reference potential parses")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    /// How `value` is judged against `target`: `relative`, `absolute`,
    /// `below` (value < target) or `equal`.
    pub rule: &'static str,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn relative(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        let err = ((value - target) / target).abs();
        Self { name: name.into(), value, target, rule: "relative", tolerance: tol, passed: err <= tol }
    }

    pub fn absolute(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        let err = (value - target).abs();
        Self { name: name.into(), value, target, rule: "absolute", tolerance: tol, passed: err <= tol }
    }

    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, target: bound, rule: "below", tolerance: 0.0, passed: value < bound }
    }

    pub fn equal(name: impl Into<String>, value: usize, target: usize) -> Self {
        Self {
            name: name.into(),
            value: value as f64,
            target: target as f64,
            rule: "equal",
            tolerance: 0.0,
            passed: value == target,
        }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: ok as u8 as f64,
            target: 1.0,
            rule: "equal",
            tolerance: 0.0,
            passed: ok,
        }
    }

    fn failed(name: impl Into<String>) -> Self {
        Self::holds(name, false)
    }

    /// Measured error in the units of `tolerance`.
    pub fn error(&self) -> f64 {
        match self.rule {
            "relative" => ((self.value - self.target) / self.target).abs(),
            "absolute" => (self.value - self.target).abs(),
            _ => f64::NAN,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "ok  " } else { "FAIL" };
        match self.rule {
            "relative" | "absolute" => write!(
                f,
                "[{mark}] {}: {:.9} vs {:.9} ({} err {:.2e}, tol {:.0e})",
                self.name,
                self.value,
                self.target,
                if self.rule == "relative" { "rel" } else { "abs" },
                self.error(),
                self.tolerance
            ),
            "below" => write!(f, "[{mark}] {}: {:.3e} < {:.0e}", self.name, self.value, self.target),
            _ => write!(f, "[{mark}] {}: {} (want {})", self.name, self.value, self.target),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub checks: Vec<Check>,
    pub elapsed_s: f64,
    pub error: Option<String>,
    pub passed: bool,
}

impl CriterionReport {
    /// One-line verdict.
    pub fn summary(&self) -> String {
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        format!(
            "criterion {:>2} {}: {} ({}/{} checks, {:.2} s){}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.checks.len() - failed,
            self.checks.len(),
            self.elapsed_s,
            self.error.as_ref().map(|e| format!(" error: {e}")).unwrap_or_default()
        )
    }
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.summary())?;
        for c in &self.checks {
            writeln!(f, "    {c}")?;
        }
        Ok(())
    }
}

pub const CRITERIA: [(u8, &str); 10] = [
    (1, "spectrum of (t+pi)^4 on [0,pi]"),
    (2, "spectrum of 1.1e^t-1 on [0,1]"),
    (3, "spectrum of (1+sin 2pi t)^2 on [0,1]"),
    (4, "p-axis crossings for sin^2 t, lambda = 10"),
    (5, "constant coefficient analytic oracle"),
    (6, "symplecticity and triangular spectral matrices"),
    (7, "eta quadrature against transfer matrix"),
    (8, "Gaussian image: factorized vs split-step"),
    (9, "solenoid images"),
    (10, "property suite"),
];

type Body = fn(&mut Vec<Check>) -> Result<(), String>;

fn body(id: u8) -> Option<Body> {
    Some(match id {
        1 => criterion_quartic,
        2 => criterion_exponential,
        3 => criterion_squared_sine,
        4 => criterion_crossings,
        5 => criterion_constant,
        6 => criterion_symplectic,
        7 => criterion_eta,
        8 => criterion_quantum,
        9 => criterion_solenoid,
        10 => criterion_properties,
        _ => return None,
    })
}

/// Runs criterion `id` (1 to 10); `None` for an unknown id.
pub fn run(id: u8) -> Option<CriterionReport> {
    let (_, title) = *CRITERIA.iter().find(|(i, _)| *i == id)?;
    let f = body(id)?;
    let start = Instant::now();
    let mut checks = Vec::new();
    let error = f(&mut checks).err();
    let elapsed_s = start.elapsed().as_secs_f64();
    let limit = match id {
        1 => Some(5.0),
        8 => Some(60.0),
        _ => None,
    };
    if let Some(limit) = limit {
        checks.push(Check::below("runtime [s]", elapsed_s, limit));
    }
    let passed = error.is_none() && !checks.is_empty() && checks.iter().all(|c| c.passed);
    Some(CriterionReport { id, title, checks, elapsed_s, error, passed })
}

pub fn run_all() -> Vec<CriterionReport> {
    CRITERIA.iter().filter_map(|(id, _)| run(*id)).collect()
}

fn err<E: fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Eigenvalues 1..=3 of a reference case with default options.
pub fn reference_spectrum(case: &ReferenceCase) -> Result<Vec<SpectralResult>, String> {
    spectrum(&case.potential(), 3, &SpectralOptions::default()).map_err(err)
}

fn table_checks(case: &ReferenceCase, checks: &mut Vec<Check>) -> Result<(), String> {
    let res = reference_spectrum(case)?;
    for (k, r) in res.iter().enumerate() {
        checks.push(Check::relative(format!("lambda_{}", k + 1), r.lambda, case.lambdas[k], case.lambda_tols[k]));
    }
    for (k, r) in res.iter().enumerate() {
        checks.push(Check::relative(format!("sigma_{}", k + 1), r.sigma, case.sigmas[k], SIGMA_TOL));
    }
    Ok(())
}

fn criterion_quartic(checks: &mut Vec<Check>) -> Result<(), String> {
    table_checks(&QUARTIC, checks)
}

fn criterion_exponential(checks: &mut Vec<Check>) -> Result<(), String> {
    table_checks(&EXPONENTIAL, checks)
}

fn criterion_squared_sine(checks: &mut Vec<Check>) -> Result<(), String> {
    table_checks(&SQUARED_SINE, checks)
}

pub const CROSSING_TIMES: [f64; 4] = [1.43610, 2.53311, 4.46714, 5.51549];
pub const CROSSING_SIGMAS: [f64; 4] = [-0.52322, 0.65528, -0.23823, 0.27464];

fn criterion_crossings(checks: &mut Vec<Check>) -> Result<(), String> {
    let phi = parse_potential("sin(t)^2", 0.0, 6.0).map_err(err)?;
    let found = crossing_scan(&phi, 10.0).map_err(err)?;
    checks.push(Check::equal("crossing count", found.len(), 4));
    for (k, c) in found.iter().take(4).enumerate() {
        checks.push(Check::absolute(format!("t_{}", k + 1), c.t, CROSSING_TIMES[k], 1e-4));
        checks.push(Check::absolute(format!("sigma_{}", k + 1), c.sigma, CROSSING_SIGMAS[k], 1e-4));
    }
    Ok(())
}

fn criterion_constant(checks: &mut Vec<Check>) -> Result<(), String> {
    let phi = parse_potential("1", 0.0, PI).map_err(err)?;
    let res = spectrum(&phi, 6, &SpectralOptions::default()).map_err(err)?;
    for r in &res {
        let n = r.n as f64;
        let sign = if r.n % 2 == 0 { 1.0 } else { -1.0 };
        checks.push(Check::relative(format!("lambda_{}", r.n), r.lambda, n * n, 1e-9));
        checks.push(Check::absolute(format!("sigma_{}", r.n), r.sigma, sign, 1e-9));
        checks.push(Check::absolute(format!("eta_{}", r.n), r.eta, 0.0, 1e-9));
    }
    Ok(())
}

/// Spectra of the three reference cases, computed once per call.
fn all_spectra() -> Result<Vec<(PotentialSpec, Vec<SpectralResult>)>, String> {
    REFERENCE_CASES.iter().map(|c| Ok((c.potential(), reference_spectrum(c)?))).collect()
}

fn criterion_symplectic(checks: &mut Vec<Check>) -> Result<(), String> {
    let potentials: Vec<PotentialSpec> = REFERENCE_CASES.iter().map(|c| c.potential()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let phi = &potentials[rng.gen_range(0..potentials.len())];
        let lambda = rng.gen_range(0.0..=120.0);
        let u = evolution_matrix(phi, lambda, 1e-10).map_err(err)?;
        worst = worst.max((u.det() - 1.0).abs());
    }
    checks.push(Check::below("max |det u - 1| over 100 samples", worst, 1e-9));
    for (case, (phi, res)) in REFERENCE_CASES.iter().zip(all_spectra()?) {
        for r in res {
            let u = evolution_matrix(&phi, r.lambda, 1e-10).map_err(err)?;
            let frob = (u.u11 * u.u11 + u.u12 * u.u12 + u.u21 * u.u21 + u.u22 * u.u22).sqrt();
            checks.push(Check::below(format!("|u12|/|u| at {} n={}", case.phi, r.n), u.u12.abs() / frob, 1e-6));
        }
    }
    Ok(())
}

fn criterion_eta(checks: &mut Vec<Check>) -> Result<(), String> {
    for (case, (phi, res)) in REFERENCE_CASES.iter().zip(all_spectra()?) {
        for r in res {
            let q = eta_integral(&phi, r.lambda, 1e-10).map_err(err)?;
            checks.push(Check::relative(format!("eta at {} n={}", case.phi, r.n), q.matrix, r.eta, 1e-5));
        }
    }
    Ok(())
}

/// Split-step and factorized images of the standard Gaussian at one
/// spectral result: `(L1 distance, split-step norm drift, factorized norm drift)`.
pub fn quantum_image_comparison(phi: &PotentialSpec, r: &SpectralResult) -> Result<(f64, f64, f64), String> {
    let packet = GaussianPacket::standard();
    let psi = packet.on_grid(&packet.default_grid(r.sigma)).map_err(err)?;
    let norm = psi.norm();
    let split = split_step_default(&psi, phi, r.lambda).map_err(err)?;
    let fact = apply_factorized_propagator(&psi, r).map_err(err)?;
    Ok((density_l1(&split, &fact), (split.norm() - norm).abs() / norm, (fact.norm() - norm).abs() / norm))
}

fn criterion_quantum(checks: &mut Vec<Check>) -> Result<(), String> {
    for case in REFERENCE_CASES {
        let phi = case.potential();
        let r = crate::prufer_spectral::find_eigenvalue(&phi, 1, &SpectralOptions::default()).map_err(err)?;
        let (l1, drift_split, drift_fact) = quantum_image_comparison(&phi, &r)?;
        checks.push(Check::below(format!("L1 density distance, {}", case.phi), l1, 1e-3));
        checks.push(Check::below(format!("split-step norm drift, {}", case.phi), drift_split, 1e-8));
        checks.push(Check::below(format!("factorized norm drift, {}", case.phi), drift_fact, 1e-8));
    }
    Ok(())
}

pub const SOLENOID_GAMMA: &str = "1+sin(2*pi*t)";

/// Fan used by the solenoid checks: 16 momenta at transverse offset (0.3, 0.2).
pub fn solenoid_fan() -> Vec<ParticleState> {
    ring_fan([0.3, 0.2, 0.0], 1.0, 8)
}

fn criterion_solenoid(checks: &mut Vec<Check>) -> Result<(), String> {
    let gamma = parse_potential(SOLENOID_GAMMA, 0.0, 1.0).map_err(err)?;
    let fan = solenoid_fan();

    let first = SolenoidConfig::new(SQUARED_SINE.lambdas[0].sqrt(), gamma.clone()).map_err(err)?;
    let scan = scan_images(&first, &fan).map_err(err)?;
    checks.push(Check::equal("images for beta^2 = 5.3347146", scan.images.len(), 1));
    match scan.final_image() {
        Some(img) => {
            checks.push(Check::absolute("image time", img.tau, 1.0, 1e-12));
            checks.push(Check::relative("magnification", img.magnification, -2.35707, 1e-3));
        }
        None => checks.push(Check::failed(format!("final image (spread {:.3e}, threshold {:.3e})", scan.final_spread, scan.threshold))),
    }

    let third = SolenoidConfig::new(SQUARED_SINE.lambdas[2].sqrt(), gamma.clone()).map_err(err)?;
    let scan = scan_images(&third, &fan).map_err(err)?;
    checks.push(Check::equal("interior images for beta^2 = 86.8947093", scan.interior_count(), 3));
    if scan.final_image().is_some() {
        checks.push(Check::holds("final image present", true));
    } else {
        checks.push(Check::failed(format!(
            "final image present (spread {:.3e}, threshold {:.3e})",
            scan.final_spread, scan.threshold
        )));
    }
    let crossings = crossing_scan(&Squared(&gamma), third.lambda()).map_err(err)?;
    let interior: Vec<f64> = crossings.iter().map(|c| c.t).filter(|&t| t < 1.0 - 1e-9).collect();
    let images: Vec<f64> = scan.images.iter().filter(|i| i.interior).map(|i| i.tau).collect();
    checks.push(Check::equal("interior images matched to crossings", images.len(), interior.len()));
    for (k, (a, b)) in images.iter().zip(&interior).enumerate() {
        checks.push(Check::absolute(format!("interior image {} time", k + 1), *a, *b, 1e-4));
    }

    let mut worst = 0.0f64;
    for cfg in [&first, &third] {
        for s in &fan {
            let f = propagate_particle(cfg, s, 2).map_err(err)?;
            let d = propagate_particle_direct(cfg, s, 2).map_err(err)?;
            worst = worst.max(f[1].max_abs_diff(&d[1]));
        }
    }
    checks.push(Check::below("factored vs direct 6D, max-norm", worst, 1e-7));
    Ok(())
}

/// `e(h)/e(h/2)` for RK4 on `y'' = −y` over `[0, 2π]` from 64 steps.
pub fn rk4_order_ratio() -> f64 {
    let sys = FnSystem::new(2, |_t, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = -y[0];
    });
    let err = |steps| {
        let y = integrate_fixed(&sys, &[0.0, 1.0], (0.0, 2.0 * PI), steps, false).expect("finite").final_state;
        (y[0].powi(2) + (y[1] - 1.0).powi(2)).sqrt()
    };
    err(64) / err(128)
}

fn criterion_properties(checks: &mut Vec<Check>) -> Result<(), String> {
    let spectra = all_spectra()?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let mut monotone_lambda = true;
    let mut monotone_t = true;
    for (phi, res) in &spectra {
        let top = 1.2 * res[2].lambda;
        for _ in 0..10 {
            let l1 = rng.gen_range(0.0..top);
            let l2 = rng.gen_range(0.0..top);
            let (lo, hi) = (l1.min(l2), l1.max(l2));
            if lo == hi {
                continue;
            }
            let a = delta_alpha(phi, lo, 1e-10).map_err(err)?.alpha;
            let b = delta_alpha(phi, hi, 1e-10).map_err(err)?.alpha;
            monotone_lambda &= b > a;
        }
        for r in res {
            let tr = prufer_trajectory(phi, r.lambda, 4000).map_err(err)?;
            monotone_t &= tr.windows(2).all(|w| w[1].alpha >= w[0].alpha);
        }
    }
    checks.push(Check::holds("delta alpha increasing in lambda (30 pairs)", monotone_lambda));
    checks.push(Check::holds("alpha non-decreasing in t", monotone_t));

    let alternates = spectra.iter().flat_map(|(_, r)| r).all(|r| (r.sigma < 0.0) == (r.n % 2 == 1));
    checks.push(Check::holds("sigma sign is (-1)^n", alternates));

    let mut worst = 0.0f64;
    for ((phi, res), case) in spectra.iter().zip(REFERENCE_CASES) {
        let (a, b) = case.interval;
        let m = a + 0.37 * (b - a);
        let lambda = res[1].lambda;
        let whole = evolution_matrix(phi, lambda, 1e-11).map_err(err)?;
        let left = evolution_matrix(&phi.with_interval(a, m).map_err(err)?, lambda, 1e-11).map_err(err)?;
        let right = evolution_matrix(&phi.with_interval(m, b).map_err(err)?, lambda, 1e-11).map_err(err)?;
        worst = worst.max((right * left).max_abs_diff(&whole));
    }
    checks.push(Check::below("composition u(b,a) - u(b,m)u(m,a)", worst, 1e-8));

    let ratio = rk4_order_ratio();
    checks.push(Check::holds(format!("RK4 order ratio {ratio:.3} in [12, 20]"), (12.0..=20.0).contains(&ratio)));

    let sym = parse_potential("(t-0.5)^2+0.25", 0.0, 1.0).map_err(err)?;
    for r in spectrum(&sym, 3, &SpectralOptions::default()).map_err(err)? {
        checks.push(Check::absolute(format!("symmetric phi |sigma_{}|", r.n), r.sigma.abs(), 1.0, 1e-6));
    }
    Ok(())
}
