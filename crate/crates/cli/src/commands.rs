use std::f64::consts::FRAC_1_SQRT_2;
use std::io::Write;

use helmholtz_optics::congruence_sim::{crossing_scan, default_momenta, simulate_fan, RandomStaircase};
use helmholtz_optics::potential_expr::{parse_potential, Coefficient, EvalError, PotentialSpec, Squared};
use helmholtz_optics::prufer_spectral::{find_eigenvalue, result_at, spectrum, SpectralOptions, SpectralResult};
use helmholtz_optics::quantum_image::{
    apply_factorized_propagator, density_image_residual, density_l1, split_step_evolve, GaussianPacket, GridSpec,
    WaveGrid, DEFAULT_HALF_SPAN_WIDTHS,
};
use helmholtz_optics::solenoid_sim::{propagate_particle, ring_fan, scan_images, write_trajectory_csv, ImageScan, SolenoidConfig};
use helmholtz_optics::transfer_optics::{eta_integral, evolution_matrix, optical_constants, TRIANGULAR_TOL};
use helmholtz_optics::validation;
use serde_json::{json, Value};

use crate::output::{create_file, g9, num, dump_dir, open_stream, stream_failure, write_json, Table};
use crate::settings::{Format, Layer};
use crate::Failure;

/// Levels of the seeded random staircase selected by `--phi random`.
const RANDOM_LEVELS: (f64, f64) = (0.25, 2.0);
/// Fraction of each staircase piece spent on the smooth riser.
const RANDOM_RAMP: f64 = 0.1;

/// Effective settings after the defaults layer has been applied.
pub struct Run {
    pub s: Layer,
}

enum Phi {
    Expr(PotentialSpec),
    Random(RandomStaircase),
}

impl Coefficient for Phi {
    fn interval(&self) -> (f64, f64) {
        match self {
            Phi::Expr(p) => p.interval(),
            Phi::Random(r) => r.interval(),
        }
    }

    fn value(&self, t: f64) -> Result<f64, EvalError> {
        match self {
            Phi::Expr(p) => p.value(t),
            Phi::Random(r) => r.value(t),
        }
    }
}

fn numeric<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Numeric(e.to_string())
}

fn parse(expr: &str, a: f64, b: f64, flag: &str) -> Result<PotentialSpec, Failure> {
    parse_potential(expr, a, b).map_err(|e| Failure::Usage(format!("--{flag} {expr:?}: {e}")))
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Run {
    fn format(&self) -> Format {
        self.s.format.unwrap_or_default()
    }

    fn interval(&self) -> (f64, f64) {
        let [a, b] = self.s.interval.unwrap_or([0.0, 1.0]);
        (a, b)
    }

    fn phi(&self) -> Result<Phi, Failure> {
        let src = self.s.phi.as_deref().ok_or_else(|| Failure::Usage("--phi is required".into()))?;
        let (a, b) = self.interval();
        if src.trim() == "random" {
            let pieces = self.s.pieces.unwrap_or(32).max(1);
            let (lo, hi) = RANDOM_LEVELS;
            return Ok(Phi::Random(RandomStaircase::new(self.s.seed.unwrap_or(0), a, b, pieces, lo, hi).with_ramp(RANDOM_RAMP)));
        }
        Ok(Phi::Expr(parse(src, a, b, "phi")?))
    }

    fn options(&self) -> SpectralOptions {
        let mut o = SpectralOptions::default();
        if let Some(t) = self.s.tol {
            o.tol = t;
            o.root_tol = t;
        }
        if let Some(s) = self.s.steps_per_unit {
            o.steps_per_unit = s;
        }
        o.lambda_max = self.s.lambda_max;
        o
    }

    /// `--lambda` when given, else eigenvalue `--n` (default 1).
    fn spectral_point<C: Coefficient>(&self, coef: &C) -> Result<SpectralResult, Failure> {
        let opts = self.options();
        match self.s.lambda {
            Some(l) => result_at(coef, l, &opts).map_err(numeric),
            None => find_eigenvalue(coef, self.s.n.unwrap_or(1), &opts).map_err(numeric),
        }
    }

    fn stream(&self) -> Result<Box<dyn Write>, Failure> {
        open_stream(self.s.output.as_deref())
    }

    fn emit_table(&self, t: &Table) -> Result<(), Failure> {
        t.write(self.stream()?).map_err(stream_failure)
    }

    fn emit_json(&self, v: &Value) -> Result<(), Failure> {
        write_json(v, self.stream()?).map_err(stream_failure)
    }

    fn interval_json(&self) -> Value {
        let (a, b) = self.interval();
        json!([num(a), num(b)])
    }

    pub fn spectrum(&self) -> Result<(), Failure> {
        let phi = self.phi()?;
        let opts = self.options();
        let results = match self.s.n {
            Some(n) => vec![find_eigenvalue(&phi, n, &opts).map_err(numeric)?],
            None => spectrum(&phi, self.s.n_max.unwrap_or(3), &opts).map_err(numeric)?,
        };
        match self.format() {
            Format::Csv => {
                let mut t = Table::new(&["n", "lambda", "sigma", "eta", "alpha_residual"]);
                for r in &results {
                    t.row(vec![r.n.to_string(), g9(r.lambda), g9(r.sigma), g9(r.eta), g9(r.alpha_residual)]);
                }
                self.emit_table(&t)
            }
            Format::Json => {
                let rows: Vec<Value> = results
                    .iter()
                    .map(|r| {
                        json!({
                            "n": r.n,
                            "lambda": num(r.lambda),
                            "sigma": num(r.sigma),
                            "eta": num(r.eta),
                            "alpha_residual": num(r.alpha_residual),
                        })
                    })
                    .collect();
                self.emit_json(&json!({
                    "command": "spectrum",
                    "phi": self.s.phi,
                    "interval": self.interval_json(),
                    "eigenvalues": rows,
                }))
            }
        }
    }

    pub fn optics(&self) -> Result<(), Failure> {
        let phi = self.phi()?;
        let point = self.spectral_point(&phi)?;
        let tol = self.s.tol.unwrap_or(1e-10);
        let u = evolution_matrix(&phi, point.lambda, tol).map_err(numeric)?;
        let constants = optical_constants(&u, TRIANGULAR_TOL).ok();
        let eta_int = match constants {
            Some(_) => Some(eta_integral(&phi, point.lambda, tol).map_err(numeric)?.integral),
            None => None,
        };
        let opt = |v: Option<f64>| v.map(g9).unwrap_or_default();
        match self.format() {
            Format::Csv => {
                let mut t = Table::new(&[
                    "lambda", "u11", "u12", "u21", "u22", "det_residual", "spectral", "n", "sigma", "eta", "eta_integral",
                ]);
                t.row(vec![
                    g9(point.lambda),
                    g9(u.u11),
                    g9(u.u12),
                    g9(u.u21),
                    g9(u.u22),
                    g9(u.det_residual),
                    constants.is_some().to_string(),
                    constants.map(|_| point.n.to_string()).unwrap_or_default(),
                    opt(constants.map(|c| c.sigma)),
                    opt(constants.map(|c| c.eta)),
                    opt(eta_int),
                ]);
                self.emit_table(&t)
            }
            Format::Json => {
                let o = |v: Option<f64>| v.map(num).unwrap_or(Value::Null);
                self.emit_json(&json!({
                    "command": "optics",
                    "phi": self.s.phi,
                    "interval": self.interval_json(),
                    "lambda": num(point.lambda),
                    "matrix": [[num(u.u11), num(u.u12)], [num(u.u21), num(u.u22)]],
                    "det_residual": num(u.det_residual),
                    "spectral": constants.is_some(),
                    "n": constants.map(|_| json!(point.n)).unwrap_or(Value::Null),
                    "sigma": o(constants.map(|c| c.sigma)),
                    "eta": o(constants.map(|c| c.eta)),
                    "eta_integral": o(eta_int),
                }))
            }
        }
    }

    pub fn congruence(&self) -> Result<(), Failure> {
        let phi = self.phi()?;
        let point = self.spectral_point(&phi)?;
        let q0 = self.s.q0.unwrap_or(0.0);
        let [lo, hi] = self.s.p_range.unwrap_or([-2.0, 2.0]);
        let momenta = default_momenta(self.s.momenta.unwrap_or(11).max(1), lo, hi);
        let samples = self.s.samples.unwrap_or(201);
        let fan = simulate_fan(&phi, point.lambda, q0, &momenta, samples).map_err(numeric)?;
        match self.format() {
            Format::Csv => {
                let mut t = Table::new(&["trajectory", "p0", "t", "q", "p"]);
                for (k, tr) in fan.trajectories.iter().enumerate() {
                    for s in &tr.samples {
                        t.row(vec![k.to_string(), g9(tr.source.1), g9(s.t), g9(s.q), g9(s.p)]);
                    }
                }
                self.emit_table(&t)
            }
            Format::Json => {
                let r = fan.report;
                let trajectories: Vec<Value> = fan
                    .trajectories
                    .iter()
                    .map(|tr| {
                        json!({
                            "p0": num(tr.source.1),
                            "t": tr.samples.iter().map(|s| num(s.t)).collect::<Vec<_>>(),
                            "q": tr.samples.iter().map(|s| num(s.q)).collect::<Vec<_>>(),
                            "p": tr.samples.iter().map(|s| num(s.p)).collect::<Vec<_>>(),
                        })
                    })
                    .collect();
                self.emit_json(&json!({
                    "command": "congruence",
                    "phi": self.s.phi,
                    "interval": self.interval_json(),
                    "lambda": num(point.lambda),
                    "q0": num(q0),
                    "focus": {
                        "t_image": num(r.t_image),
                        "q_image": num(r.q_image),
                        "spread": num(r.spread),
                        "magnification": num(r.magnification),
                    },
                    "trajectories": trajectories,
                }))
            }
        }
    }

    pub fn crossings(&self) -> Result<(), Failure> {
        let phi = self.phi()?;
        let lambda = self.s.lambda.ok_or_else(|| Failure::Usage("--lambda is required".into()))?;
        let found = crossing_scan(&phi, lambda).map_err(numeric)?;
        match self.format() {
            Format::Csv => {
                let mut t = Table::new(&["k", "t", "sigma"]);
                for (k, c) in found.iter().enumerate() {
                    t.row(vec![(k + 1).to_string(), g9(c.t), g9(c.sigma)]);
                }
                self.emit_table(&t)
            }
            Format::Json => {
                let rows: Vec<Value> = found
                    .iter()
                    .enumerate()
                    .map(|(k, c)| json!({ "k": k + 1, "t": num(c.t), "sigma": num(c.sigma) }))
                    .collect();
                self.emit_json(&json!({
                    "command": "crossings",
                    "phi": self.s.phi,
                    "interval": self.interval_json(),
                    "lambda": num(lambda),
                    "crossings": rows,
                }))
            }
        }
    }

    pub fn qimage(&self) -> Result<(), Failure> {
        let phi = self.phi()?;
        let point = self.spectral_point(&phi)?;
        let spectral = point.alpha_residual <= 1e-6;
        let packet = GaussianPacket {
            center: self.s.center.unwrap_or(0.0),
            width: self.s.width.unwrap_or(FRAC_1_SQRT_2),
            momentum: self.s.momentum.unwrap_or(0.0),
        };
        let u = evolution_matrix(&phi, point.lambda, self.s.tol.unwrap_or(1e-10)).map_err(numeric)?;
        // off spectrum the image law is judged against u11
        let sigma = if spectral { point.sigma } else { u.u11 };
        let scale = sigma.abs().max(1.0);
        let half = self
            .s
            .half_span
            .unwrap_or(DEFAULT_HALF_SPAN_WIDTHS * packet.width * scale + packet.center.abs() * scale);
        let grid = GridSpec::centered(0.0, half, self.s.points.unwrap_or(4096));
        let psi = packet.on_grid(&grid).map_err(numeric)?;
        let (a, b) = phi.interval();
        let steps = ((b - a) * self.s.steps_per_unit.unwrap_or(20_000.0)).ceil().max(1.0) as usize;
        let split = split_step_evolve(&psi, &phi, point.lambda, steps).map_err(numeric)?;
        let fact = if spectral { Some(apply_factorized_propagator(&psi, &point).map_err(numeric)?) } else { None };

        let norm = psi.norm();
        let drift = |w: &WaveGrid| (w.norm() - norm).abs() / norm;
        let l1 = fact.as_ref().map(|f| density_l1(&split, f));
        let res_fact = fact.as_ref().map(|f| density_image_residual(&psi, f, sigma));
        let res_split = density_image_residual(&psi, &split, sigma);
        let drift_fact = fact.as_ref().map(drift);
        let drift_split = drift(&split);

        let dir = dump_dir(self.s.output.as_deref())?;
        let mut files = vec![];
        let mut dump = |name: &str, w: &WaveGrid| -> Result<(), Failure> {
            w.write_csv(create_file(&dir, name)?, g9).map_err(stream_failure)?;
            files.push(name.to_string());
            Ok(())
        };
        dump("psi_input.csv", &psi)?;
        if let Some(f) = &fact {
            dump("psi_factorized.csv", f)?;
        }
        dump("psi_split_step.csv", &split)?;

        let opt = |v: Option<f64>| v.map(g9).unwrap_or_default();
        match self.format() {
            Format::Csv => {
                let mut t = Table::new(&[
                    "lambda",
                    "n",
                    "spectral",
                    "sigma",
                    "eta",
                    "l1_distance",
                    "residual_factorized",
                    "residual_split_step",
                    "norm_drift_factorized",
                    "norm_drift_split_step",
                ]);
                t.row(vec![
                    g9(point.lambda),
                    point.n.to_string(),
                    spectral.to_string(),
                    g9(sigma),
                    g9(point.eta),
                    opt(l1),
                    opt(res_fact),
                    g9(res_split),
                    opt(drift_fact),
                    g9(drift_split),
                ]);
                self.emit_table(&t)
            }
            Format::Json => {
                let o = |v: Option<f64>| v.map(num).unwrap_or(Value::Null);
                self.emit_json(&json!({
                    "command": "qimage",
                    "phi": self.s.phi,
                    "interval": self.interval_json(),
                    "lambda": num(point.lambda),
                    "n": point.n,
                    "spectral": spectral,
                    "sigma": num(sigma),
                    "eta": num(point.eta),
                    "grid": { "points": grid.n, "x0": num(grid.x0), "dx": num(grid.dx) },
                    "l1_distance": o(l1),
                    "residual_factorized": o(res_fact),
                    "residual_split_step": num(res_split),
                    "norm_drift_factorized": o(drift_fact),
                    "norm_drift_split_step": num(drift_split),
                    "files": files,
                }))
            }
        }
    }

    pub fn solenoid(&self) -> Result<(), Failure> {
        let (a, b) = self.interval();
        let src = self.s.gamma.clone().unwrap_or_else(|| validation::SOLENOID_GAMMA.to_string());
        let gamma = parse(&src, a, b, "gamma")?;
        let beta2 = match self.s.beta2 {
            Some(v) => v,
            None => find_eigenvalue(&Squared(&gamma), self.s.n.unwrap_or(1), &self.options()).map_err(numeric)?.lambda,
        };
        let cfg = SolenoidConfig::new(beta2.sqrt(), gamma).map_err(numeric)?;
        let [x, y] = self.s.position.unwrap_or([0.3, 0.2]);
        let p3 = self.s.p3.unwrap_or(1.0);
        let fan = ring_fan([x, y, 0.0], p3, self.s.fan.unwrap_or(8).max(1));
        let scan = scan_images(&cfg, &fan).map_err(numeric)?;

        let dir = dump_dir(self.s.output.as_deref())?;
        let samples = self.s.samples.unwrap_or(201).max(2);
        for (k, s) in fan.iter().enumerate() {
            let traj = propagate_particle(&cfg, s, samples).map_err(numeric)?;
            write_trajectory_csv(&traj, create_file(&dir, &format!("trajectory_{k:02}.csv"))?, g9).map_err(stream_failure)?;
        }
        let report = image_json(&scan, &src, (a, b), p3, fan.len());
        write_json(&report, create_file(&dir, "image_report.json")?).map_err(stream_failure)?;

        match self.format() {
            Format::Csv => {
                let mut t = Table::new(&["tau", "z", "magnification", "rotation", "spread", "interior"]);
                for i in &scan.images {
                    t.row(vec![g9(i.tau), g9(p3 * i.tau), g9(i.magnification), g9(i.rotation), g9(i.spread), i.interior.to_string()]);
                }
                self.emit_table(&t)?;
            }
            Format::Json => self.emit_json(&report)?,
        }
        if scan.final_image().is_none() {
            return Err(Failure::Numeric(format!(
                "beta^2 = {} is not spectral for gamma^2: final spread {} exceeds threshold {}",
                g9(beta2),
                g9(scan.final_spread),
                g9(scan.threshold)
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let ids: Vec<u8> = match &self.s.criteria {
            Some(c) if !c.is_empty() => c.clone(),
            _ => validation::CRITERIA.iter().map(|(id, _)| *id).collect(),
        };
        let mut reports = Vec::new();
        for id in ids {
            let r = validation::run(id).ok_or_else(|| Failure::Usage(format!("unknown criterion {id} (1 to 10)")))?;
            eprint!("{r}");
            reports.push(r);
        }
        match self.format() {
            Format::Csv => {
                let mut t = Table::new(&["criterion", "status", "checks_passed", "checks_total", "seconds", "title"]);
                for r in &reports {
                    let ok = r.checks.iter().filter(|c| c.passed).count();
                    t.row(vec![
                        r.id.to_string(),
                        if r.passed { "pass" } else { "fail" }.to_string(),
                        ok.to_string(),
                        r.checks.len().to_string(),
                        format!("{:.2}", r.elapsed_s),
                        csv_text(r.title),
                    ]);
                }
                self.emit_table(&t)?;
            }
            Format::Json => {
                let v: Vec<Value> = reports
                    .iter()
                    .map(|r| {
                        json!({
                            "criterion": r.id,
                            "title": r.title,
                            "passed": r.passed,
                            "seconds": (r.elapsed_s * 100.0).round() / 100.0,
                            "error": r.error,
                            "checks": r.checks.iter().map(|c| json!({
                                "name": c.name,
                                "rule": c.rule,
                                "value": num(c.value),
                                "target": num(c.target),
                                "tolerance": num(c.tolerance),
                                "passed": c.passed,
                            })).collect::<Vec<_>>(),
                        })
                    })
                    .collect();
                self.emit_json(&json!({ "command": "validate", "criteria": v }))?;
            }
        }
        let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Failure::Validation(format!("criteria failed: {}", failed.join(", "))))
        }
    }
}

fn image_json(scan: &ImageScan, gamma: &str, (a, b): (f64, f64), p3: f64, fan: usize) -> Value {
    json!({
        "command": "solenoid",
        "gamma": gamma,
        "interval": [num(a), num(b)],
        "beta": num(scan.beta),
        "beta2": num(scan.lambda),
        "p3": num(p3),
        "fan_size": fan,
        "threshold": num(scan.threshold),
        "momentum_spread": num(scan.momentum_spread),
        "final_spread": num(scan.final_spread),
        "min_spread": num(scan.min_spread),
        "total_rotation": num(scan.total_rotation),
        "spectral": scan.final_image().is_some(),
        "interior_images": scan.interior_count(),
        "images": scan.images.iter().map(|i| json!({
            "tau": num(i.tau),
            "z": num(p3 * i.tau),
            "magnification": num(i.magnification),
            "rotation": num(i.rotation),
            "spread": num(i.spread),
            "interior": i.interior,
        })).collect::<Vec<_>>(),
    })
}
