//! `helmholtz`: spectra, imaging constants and focusing data for
//! `ψ'' + λ φ(t) ψ = 0` from the command line.

mod commands;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Run;
use settings::{Format, Layer};

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unparsable expressions, bad config file.
    Usage(String),
    /// A computation could not deliver its result.
    Numeric(String),
    Io(String),
    /// `validate` found failing criteria.
    Validation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Numeric(_) | Failure::Io(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Validation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Numeric(m) | Failure::Io(m) | Failure::Validation(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(name = "helmholtz", version, about = "Helmholtz spectra, transfer-matrix imaging and focusing simulations")]
struct Cli {
    /// JSON file of default settings (keys as the long flag names with `_`); flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output format of the main result.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// File for the main result (default stdout). Grid and trajectory dumps go next to it.
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Problem {
    /// Coefficient φ(t) as an expression in t, or `random` for a seeded staircase.
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<String>,
    /// Interval [a, b] (default 0 1).
    #[arg(long, num_args = 2, value_names = ["A", "B"], allow_negative_numbers = true)]
    interval: Option<Vec<f64>>,
    /// Integration / root tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Initial RK4 steps per unit of t.
    #[arg(long)]
    steps_per_unit: Option<f64>,
    /// Seed for `--phi random`.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of steps of the random staircase.
    #[arg(long)]
    pieces: Option<usize>,
}

#[derive(Args, Default)]
struct Point {
    /// Eigenvalue index used when --lambda is absent (default 1).
    #[arg(long)]
    n: Option<usize>,
    /// Explicit λ instead of an eigenvalue.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues with their σ, η and α residual.
    Spectrum {
        #[command(flatten)]
        problem: Problem,
        /// Compute eigenvalues 1..=N (default 3).
        #[arg(long)]
        n_max: Option<usize>,
        /// Compute only eigenvalue N.
        #[arg(long)]
        n: Option<usize>,
        /// Upper bound on the λ search.
        #[arg(long)]
        lambda_max: Option<f64>,
    },
    /// Transfer matrix u(b, a) and its optical constants.
    Optics {
        #[command(flatten)]
        problem: Problem,
        #[command(flatten)]
        point: Point,
    },
    /// Fan of phase-plane trajectories from a common q0.
    Congruence {
        #[command(flatten)]
        problem: Problem,
        #[command(flatten)]
        point: Point,
        /// Common initial position.
        #[arg(long, allow_negative_numbers = true)]
        q0: Option<f64>,
        /// Number of initial momenta (default 11).
        #[arg(long)]
        momenta: Option<usize>,
        /// Momentum range (default -2 2).
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        p_range: Option<Vec<f64>>,
        /// Samples per trajectory including both ends (default 201).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Times where the orbit from (0, 1) crosses the p-axis, with σ there.
    Crossings {
        #[command(flatten)]
        problem: Problem,
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
        /// Scan [a, T] (a from --interval, default 0).
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Gaussian packet through the factorized propagator and by split-step.
    Qimage {
        #[command(flatten)]
        problem: Problem,
        #[command(flatten)]
        point: Point,
        #[arg(long, allow_negative_numbers = true)]
        center: Option<f64>,
        /// Position standard deviation (default 1/sqrt 2).
        #[arg(long)]
        width: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        momentum: Option<f64>,
        /// Grid points (default 4096).
        #[arg(long)]
        points: Option<usize>,
        /// Grid half-width (default 12 widths times max(1, |σ|)).
        #[arg(long)]
        half_span: Option<f64>,
    },
    /// Charged-particle fan in a pulsed solenoid; image report.
    Solenoid {
        /// Pulse shape γ(τ) (default 1+sin(2*pi*t)).
        #[arg(long, allow_hyphen_values = true)]
        gamma: Option<String>,
        #[arg(long, num_args = 2, value_names = ["A", "B"], allow_negative_numbers = true)]
        interval: Option<Vec<f64>>,
        /// β²; defaults to eigenvalue --n of γ².
        #[arg(long)]
        beta2: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        /// Transverse start (default 0.3 0.2).
        #[arg(long, num_args = 2, value_names = ["Q1", "Q2"], allow_negative_numbers = true)]
        position: Option<Vec<f64>>,
        /// Axial momentum (default 1).
        #[arg(long, allow_negative_numbers = true)]
        p3: Option<f64>,
        /// Angles per momentum ring; the fan has twice as many members (default 8).
        #[arg(long)]
        fan: Option<usize>,
        /// Samples per trajectory file (default 201).
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run the acceptance criteria.
    Validate {
        /// Criterion to run (repeatable; default all).
        #[arg(long = "criterion", value_name = "ID")]
        criteria: Vec<u8>,
    },
}

fn pair(v: Option<Vec<f64>>) -> Option<[f64; 2]> {
    v.map(|v| [v[0], v[1]])
}

impl Problem {
    fn layer(self) -> Layer {
        Layer {
            phi: self.phi,
            interval: pair(self.interval),
            tol: self.tol,
            steps_per_unit: self.steps_per_unit,
            seed: self.seed,
            pieces: self.pieces,
            ..Layer::default()
        }
    }
}

impl Point {
    fn apply(self, l: Layer) -> Layer {
        Layer { n: self.n, lambda: self.lambda, ..l }
    }
}

/// Flag layer plus the name of the command to run.
fn flag_layer(cli: Cli) -> (Layer, Option<PathBuf>, &'static str) {
    let top = Layer { format: cli.format, output: cli.output, ..Layer::default() };
    let (l, name) = match cli.command {
        Command::Spectrum { problem, n_max, n, lambda_max } => {
            (Layer { n_max, n, lambda_max, ..problem.layer() }, "spectrum")
        }
        Command::Optics { problem, point } => (point.apply(problem.layer()), "optics"),
        Command::Congruence { problem, point, q0, momenta, p_range, samples } => {
            (Layer { q0, momenta, p_range: pair(p_range), samples, ..point.apply(problem.layer()) }, "congruence")
        }
        Command::Crossings { problem, lambda, t_max } => (Layer { lambda, t_max, ..problem.layer() }, "crossings"),
        Command::Qimage { problem, point, center, width, momentum, points, half_span } => (
            Layer { center, width, momentum, points, half_span, ..point.apply(problem.layer()) },
            "qimage",
        ),
        Command::Solenoid { gamma, interval, beta2, n, position, p3, fan, samples, tol } => (
            Layer {
                gamma,
                interval: pair(interval),
                beta2,
                n,
                position: pair(position),
                p3,
                fan,
                samples,
                tol,
                ..Layer::default()
            },
            "solenoid",
        ),
        Command::Validate { criteria } => {
            (Layer { criteria: (!criteria.is_empty()).then_some(criteria), ..Layer::default() }, "validate")
        }
    };
    (l.over(top), cli.config, name)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (flags, config, name) = flag_layer(cli);
    let file = match config {
        Some(path) => Layer::load(&path)?,
        None => Layer::default(),
    };
    let mut s = flags.over(file);
    if let Some(t) = s.t_max {
        let a = s.interval.map_or(0.0, |[a, _]| a);
        s.interval = Some([a, t]);
    }
    s.check()?;
    let r = Run { s };
    match name {
        "spectrum" => r.spectrum(),
        "optics" => r.optics(),
        "congruence" => r.congruence(),
        "crossings" => r.crossings(),
        "qimage" => r.qimage(),
        "solenoid" => r.solenoid(),
        _ => r.validate(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
