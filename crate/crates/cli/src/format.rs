//! Number formatting and file writers shared by the subcommands.

use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// Significant digits for every floating-point value written.
pub const DIGITS: usize = 9;

/// Shortest round form of `x` with [`DIGITS`] significant digits.
pub fn num(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exponent = x.abs().log10().floor() as i32;
    let text = render(x, exponent);
    // Rounding can carry into a new leading digit, as in 9.99999999951.
    let rounded: f64 = text.parse().expect("formatted number parses");
    if rounded.abs() >= 10f64.powi(exponent + 1) {
        return render(rounded, exponent + 1);
    }
    text
}

fn render(x: f64, exponent: i32) -> String {
    if (-5..DIGITS as i32).contains(&exponent) {
        let decimals = (DIGITS as i32 - 1 - exponent).max(0) as usize;
        trim(format!("{x:.decimals$}"))
    } else {
        let s = format!("{x:.prec$e}", prec = DIGITS - 1);
        let (mantissa, exp) = s.split_once('e').expect("exponent form");
        format!("{}e{exp}", trim(mantissa.to_string()))
    }
}

fn trim(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" { "0".into() } else { t.into() }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Comma-separated table with a header row.
pub struct Csv {
    writer: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Csv {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Csv { writer }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.writer.write_record(cells).expect("in-memory write");
    }

    pub fn into_string(self) -> String {
        let bytes = self.writer.into_inner().expect("in-memory flush");
        String::from_utf8(bytes).expect("cells are UTF-8")
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    write_text(path, &text)
}

/// Rounds every float in a JSON tree to [`DIGITS`] significant digits.
pub fn rounded_json<T: Serialize>(value: &T) -> serde_json::Value {
    fn walk(v: serde_json::Value) -> serde_json::Value {
        use serde_json::Value;
        match v {
            Value::Number(n) if n.is_f64() => {
                let x = n.as_f64().expect("f64 number");
                let r: f64 = num(x).parse().expect("formatted number parses");
                serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number)
            }
            Value::Array(items) => Value::Array(items.into_iter().map(walk).collect()),
            Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, walk(v))).collect()),
            other => other,
        }
    }
    walk(serde_json::to_value(value).expect("output serializes"))
}
