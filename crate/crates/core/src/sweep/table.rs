use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 17] = [
    "axis_value",
    "snr_db",
    "beta",
    "mu",
    "gamma",
    "se_total",
    "se_mmse_detector",
    "se_gaussian_ref",
    "r",
    "xi2",
    "zeta2",
    "eps_awgn",
    "eps_user",
    "n_branches",
    "hysteresis",
    "converged",
    "iterations",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// One grid point. Per-class fields are those of the first class; failed
/// points carry NaN values and `converged = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub axis_value: f64,
    pub snr_db: f64,
    pub beta: f64,
    pub mu: f64,
    pub gamma: f64,
    pub se_total: f64,
    pub se_mmse_detector: f64,
    pub se_gaussian_ref: f64,
    pub r: f64,
    pub xi2: f64,
    pub zeta2: f64,
    pub eps_awgn: f64,
    pub eps_user: f64,
    pub n_branches: usize,
    pub hysteresis: bool,
    pub converged: bool,
    pub iterations: usize,
}

/// `v` rounded to 12 significant digits.
pub fn round12(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.11e}").parse().unwrap_or(v)
}

/// Shortest text of `v` at 12 significant digits.
pub fn fmt12(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let r = round12(v);
    let a = r.abs();
    if r == 0.0 {
        "0".into()
    } else if (1e-5..1e16).contains(&a) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

impl Row {
    fn fields(&self) -> [String; 17] {
        [
            fmt12(self.axis_value),
            fmt12(self.snr_db),
            fmt12(self.beta),
            fmt12(self.mu),
            fmt12(self.gamma),
            fmt12(self.se_total),
            fmt12(self.se_mmse_detector),
            fmt12(self.se_gaussian_ref),
            fmt12(self.r),
            fmt12(self.xi2),
            fmt12(self.zeta2),
            fmt12(self.eps_awgn),
            fmt12(self.eps_user),
            self.n_branches.to_string(),
            self.hysteresis.to_string(),
            self.converged.to_string(),
            self.iterations.to_string(),
        ]
    }
}

pub fn to_csv(rows: &[Row]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(COLUMNS).map_err(io)?;
    for row in rows {
        w.write_record(row.fields()).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

pub fn parse_csv(text: &str) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::Config(e.to_string()))?.clone();
    if headers.iter().ne(COLUMNS) {
        return Err(Error::Config(format!("unexpected header {headers:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Config(e.to_string())))
        .collect()
}

/// Rows as an array of records; non-finite floats become `null`.
pub fn to_json(rows: &[Row]) -> Result<String> {
    let mut doc = serde_json::to_value(rows)?;
    if let Value::Array(items) = &mut doc {
        for item in items {
            if let Value::Object(map) = item {
                for v in map.values_mut() {
                    if let Some(f) = v.as_f64().filter(|_| v.is_f64()) {
                        *v = serde_json::Number::from_f64(round12(f)).map_or(Value::Null, Value::Number);
                    }
                }
            }
        }
    }
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

pub fn parse_json(text: &str) -> Result<Vec<Row>> {
    let records: Vec<Value> = serde_json::from_str(text)?;
    records.into_iter().map(row_from_value).collect()
}

fn row_from_value(v: Value) -> Result<Row> {
    let get = |k: &str| -> Result<f64> {
        match v.get(k) {
            Some(Value::Number(n)) => Ok(n.as_f64().unwrap_or(f64::NAN)),
            Some(Value::Null) => Ok(f64::NAN),
            _ => Err(Error::Config(format!("missing numeric field {k}"))),
        }
    };
    let int = |k: &str| -> Result<usize> {
        v.get(k)
            .and_then(Value::as_u64)
            .map(|x| x as usize)
            .ok_or_else(|| Error::Config(format!("missing integer field {k}")))
    };
    let flag = |k: &str| -> Result<bool> {
        v.get(k)
            .and_then(Value::as_bool)
            .ok_or_else(|| Error::Config(format!("missing boolean field {k}")))
    };
    Ok(Row {
        axis_value: get("axis_value")?,
        snr_db: get("snr_db")?,
        beta: get("beta")?,
        mu: get("mu")?,
        gamma: get("gamma")?,
        se_total: get("se_total")?,
        se_mmse_detector: get("se_mmse_detector")?,
        se_gaussian_ref: get("se_gaussian_ref")?,
        r: get("r")?,
        xi2: get("xi2")?,
        zeta2: get("zeta2")?,
        eps_awgn: get("eps_awgn")?,
        eps_user: get("eps_user")?,
        n_branches: int("n_branches")?,
        hysteresis: flag("hysteresis")?,
        converged: flag("converged")?,
        iterations: int("iterations")?,
    })
}

pub fn render(rows: &[Row], format: Format) -> Result<String> {
    match format {
        Format::Csv => to_csv(rows),
        Format::Json => to_json(rows),
    }
}

/// Writes the table to `path`, or returns it for printing when `path` is `None`.
pub fn emit(rows: &[Row], format: Format, path: Option<&Path>) -> Result<Option<String>> {
    let text = render(rows, format)?;
    match path {
        Some(p) => {
            std::fs::write(p, text)?;
            Ok(None)
        }
        None => Ok(Some(text)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(x: f64) -> Row {
        Row {
            axis_value: x,
            snr_db: x,
            beta: 1.0,
            mu: 1.0,
            gamma: 1e-3,
            se_total: 1.0 / 3.0,
            se_mmse_detector: 0.25,
            se_gaussian_ref: std::f64::consts::PI,
            r: 0.123_456_789_012_345_67,
            xi2: f64::INFINITY,
            zeta2: 1e-9,
            eps_awgn: 0.0,
            eps_user: f64::NAN,
            n_branches: 2,
            hysteresis: true,
            converged: false,
            iterations: 17,
        }
    }

    /// `b` parsed back from the emitted form of `a`.
    fn close(a: f64, b: f64) -> bool {
        let a = round12(a);
        (a.is_nan() && b.is_nan()) || a == b || ((a - b) / a).abs() <= 1e-12
    }

    fn same(a: &Row, b: &Row) -> bool {
        let fa = [a.axis_value, a.snr_db, a.beta, a.mu, a.gamma, a.se_total, a.se_mmse_detector,
            a.se_gaussian_ref, a.r, a.zeta2, a.eps_awgn, a.eps_user];
        let fb = [b.axis_value, b.snr_db, b.beta, b.mu, b.gamma, b.se_total, b.se_mmse_detector,
            b.se_gaussian_ref, b.r, b.zeta2, b.eps_awgn, b.eps_user];
        fa.iter().zip(&fb).all(|(x, y)| close(*x, *y))
            && (a.n_branches, a.hysteresis, a.converged, a.iterations)
                == (b.n_branches, b.hysteresis, b.converged, b.iterations)
    }

    #[test]
    fn twelve_digits() {
        assert_eq!(fmt12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt12(0.1), "0.1");
        assert_eq!(fmt12(2.0), "2");
        assert_eq!(fmt12(1.234_567_890_123_4e-9), "1.23456789012e-9");
        assert_eq!(fmt12(f64::NAN), "NaN");
        assert_eq!(fmt12(-0.0), "0");
    }

    #[test]
    fn csv_shape_and_round_trip() {
        let text = to_csv(&[row(-3.5)]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], COLUMNS.join(","));
        let back = parse_csv(&text).unwrap();
        assert!(same(&row(-3.5), &back[0]));
        assert!(back[0].xi2.is_infinite());
        assert_eq!(to_csv(&[]).unwrap().lines().count(), 1);
    }

    #[test]
    fn json_round_trip() {
        let rows = vec![row(0.0), row(1e-3)];
        let back = parse_json(&to_json(&rows).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in rows.iter().zip(&back) {
            assert!(same(a, b));
        }
        assert_eq!(to_json(&[]).unwrap().trim(), "[]");
    }
}
