//! Run settings merged from three layers: command-line flags, an optional
//! JSON config file, and built-in defaults (in that order of precedence).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Every overridable setting. Field names double as the config-file keys.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub phi: Option<String>,
    pub gamma: Option<String>,
    pub interval: Option<[f64; 2]>,
    pub n_max: Option<usize>,
    pub n: Option<usize>,
    pub lambda: Option<f64>,
    pub lambda_max: Option<f64>,
    pub beta2: Option<f64>,
    pub t_max: Option<f64>,
    pub tol: Option<f64>,
    pub steps_per_unit: Option<f64>,
    pub format: Option<Format>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub pieces: Option<usize>,
    pub samples: Option<usize>,
    pub q0: Option<f64>,
    pub momenta: Option<usize>,
    pub p_range: Option<[f64; 2]>,
    pub center: Option<f64>,
    pub width: Option<f64>,
    pub momentum: Option<f64>,
    pub points: Option<usize>,
    pub half_span: Option<f64>,
    pub position: Option<[f64; 2]>,
    pub p3: Option<f64>,
    pub fan: Option<usize>,
    pub criteria: Option<Vec<u8>>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        Layer { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Layer {
    pub fn load(path: &Path) -> Result<Layer, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
    }

    /// `self` wins wherever it is set.
    pub fn over(self, lower: Layer) -> Layer {
        overlay!(
            self, lower, phi, gamma, interval, n_max, n, lambda, lambda_max, beta2, t_max, tol, steps_per_unit, format,
            output, seed, pieces, samples, q0, momenta, p_range, center, width, momentum, points, half_span, position,
            p3, fan, criteria
        )
    }

    /// Rejects non-finite or out-of-range numbers before any computation.
    pub fn check(&self) -> Result<(), Failure> {
        let finite = [
            ("lambda", self.lambda),
            ("q0", self.q0),
            ("center", self.center),
            ("momentum", self.momentum),
            ("p3", self.p3),
        ];
        for (name, v) in finite {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(Failure::Usage(format!("--{} must be finite", name.replace('_', "-"))));
                }
            }
        }
        let positive = [
            ("lambda_max", self.lambda_max),
            ("t_max", self.t_max),
            ("tol", self.tol),
            ("steps_per_unit", self.steps_per_unit),
            ("width", self.width),
            ("half_span", self.half_span),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Failure::Usage(format!("--{} must be positive and finite", name.replace('_', "-"))));
                }
            }
        }
        if let Some(b) = self.beta2 {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Failure::Usage("--beta2 must be non-negative and finite".into()));
            }
        }
        for (name, pair) in [("interval", self.interval), ("p-range", self.p_range), ("position", self.position)] {
            if let Some([a, b]) = pair {
                if !(a.is_finite() && b.is_finite()) {
                    return Err(Failure::Usage(format!("--{name} values must be finite")));
                }
            }
        }
        if let Some([a, b]) = self.interval {
            if a >= b {
                return Err(Failure::Usage(format!("--interval needs a < b, got {a} {b}")));
            }
        }
        for (name, v) in [("n-max", self.n_max), ("n", self.n), ("samples", self.samples), ("points", self.points)] {
            if v == Some(0) {
                return Err(Failure::Usage(format!("--{name} must be at least 1")));
            }
        }
        Ok(())
    }
}
