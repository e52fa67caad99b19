use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::Failure;

pub const OUTPUT_DIR_ENV: &str = "HELMHOLTZ_OUTPUT_DIR";

/// `%.9g`: 9 significant digits, trailing zeros dropped, scientific notation
/// (`1.5e-07`, `2.5e+12`) when the exponent is below −4 or at least 9.
pub fn g9(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}")).to_string()
    } else {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// JSON number rounded to 9 significant digits; non-finite values become null.
pub fn num(v: f64) -> Value {
    if !v.is_finite() {
        return Value::Null;
    }
    let rounded: f64 = g9(v).parse().expect("g9 output parses");
    serde_json::Number::from_f64(rounded).map(Value::Number).unwrap_or(Value::Null)
}

/// CSV table with a single header row.
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            writeln!(w, "{}", r.join(","))?;
        }
        w.flush()
    }
}

pub fn write_json<W: Write>(value: &Value, mut w: W) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()
}

/// Relative paths are taken inside the output directory when one is set.
fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// Writer for the main result: the `--output` file, or stdout.
pub fn open_stream(output: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match output {
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) => {
            let path = resolve(p);
            if let Some(parent) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
            }
            let f = File::create(&path).map_err(|e| io_failure(&path, e))?;
            Ok(Box::new(BufWriter::new(f)))
        }
    }
}

/// Directory for grid and trajectory dumps: next to the `--output` file
/// when one is given, else the environment variable, else the working
/// directory.
pub fn dump_dir(output: Option<&Path>) -> Result<PathBuf, Failure> {
    let dir = match output.map(resolve) {
        Some(p) => p.parent().filter(|d| !d.as_os_str().is_empty()).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
        None => std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
    };
    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    Ok(dir)
}

pub fn create_file(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| io_failure(&path, e))
}

pub fn stream_failure(e: io::Error) -> Failure {
    Failure::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(g9(5.334716774), "5.33471677");
        assert_eq!(g9(-2.357059782), "-2.35705978");
        assert_eq!(g9(0.0017440135), "0.0017440135");
        assert_eq!(g9(86.895642443), "86.8956424");
        assert_eq!(g9(1.0), "1");
        assert_eq!(g9(0.0), "0");
        assert_eq!(g9(1.5e-7), "1.5e-07");
        assert_eq!(g9(123456789012.0), "1.23456789e+11");
        assert_eq!(g9(999999999.6), "1e+09");
        assert_eq!(g9(0.00001), "1e-05");
        assert_eq!(g9(0.0001), "0.0001");
        assert_eq!(g9(f64::NAN), "nan");
    }

    #[test]
    fn json_numbers_are_rounded() {
        assert_eq!(num(5.334716774123).to_string(), "5.33471677");
        assert_eq!(num(f64::INFINITY), Value::Null);
    }
}
