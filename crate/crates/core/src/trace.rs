//! Sampled signals and their CSV representation.
//!
//! File layout: `#`-prefixed `key=value` metadata lines, a `x,y` header row,
//! then one data row per sample written with 17 significant digits.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metadata key whose line is excluded from reproducibility comparisons.
pub const TIMESTAMP_KEY: &str = "created_unix";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    Time,
    Field,
    Tau,
    PulseDuration,
}

impl AxisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AxisKind::Time => "time",
            AxisKind::Field => "field",
            AxisKind::Tau => "tau",
            AxisKind::PulseDuration => "pulse_duration",
        }
    }
}

impl FromStr for AxisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "time" => AxisKind::Time,
            "field" => AxisKind::Field,
            "tau" => AxisKind::Tau,
            "pulse_duration" => AxisKind::PulseDuration,
            other => return Err(Error::Data(format!("unknown axis kind '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    pub axis_kind: AxisKind,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub units: String,
    /// Ordered `key=value` metadata.
    pub meta: Vec<(String, String)>,
}

impl SignalTrace {
    /// Builds a trace, checking that `x` is strictly increasing and the
    /// columns have equal length.
    pub fn new(axis_kind: AxisKind, x: Vec<f64>, y: Vec<f64>, units: impl Into<String>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Data(format!("x has {} samples but y has {}", x.len(), y.len())));
        }
        if let Some(i) = x.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!("x must be strictly increasing (sample {} -> {})", i, i + 1)));
        }
        Ok(SignalTrace { axis_kind, x, y, units: units.into(), meta: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.set_meta(key, value);
        self
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# axis={}", self.axis_kind.as_str());
        let _ = writeln!(out, "# units={}", self.units);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str("x,y\n");
        for (x, y) in self.x.iter().zip(&self.y) {
            let _ = writeln!(out, "{x:.16e},{y:.16e}");
        }
        out
    }

    /// Parses the CSV layout written by [`SignalTrace::to_csv`]. Errors
    /// name the 1-based line number of the offending row.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut axis_kind = AxisKind::Time;
        let mut units = String::new();
        let mut meta = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut saw_header = false;

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let Some((k, v)) = rest.trim().split_once('=') else {
                    continue;
                };
                let (k, v) = (k.trim(), v.trim());
                match k {
                    "axis" => axis_kind = v.parse()?,
                    "units" => units = v.to_string(),
                    _ => meta.push((k.to_string(), v.to_string())),
                }
                continue;
            }
            if !saw_header {
                if line.replace(' ', "") != "x,y" {
                    return Err(Error::Data(format!("line {lineno}: expected header 'x,y', found '{line}'")));
                }
                saw_header = true;
                continue;
            }
            let mut cols = line.split(',');
            let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Data(format!("line {lineno}: expected two columns")));
            };
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("line {lineno}: bad number '{}'", s.trim())))
            };
            x.push(parse(a)?);
            y.push(parse(b)?);
        }
        if !saw_header {
            return Err(Error::Data("no 'x,y' header row found".into()));
        }
        if x.is_empty() {
            return Err(Error::Data("no data rows".into()));
        }
        let mut trace = SignalTrace::new(axis_kind, x, y, units)?;
        trace.meta = meta;
        Ok(trace)
    }

    /// The CSV text with the timestamp line removed.
    pub fn reproducible_csv(&self) -> String {
        strip_timestamp(&self.to_csv())
    }
}

pub fn strip_timestamp(csv: &str) -> String {
    let prefix = format!("# {TIMESTAMP_KEY}=");
    csv.lines().filter(|l| !l.starts_with(&prefix)).fold(String::new(), |mut acc, l| {
        acc.push_str(l);
        acc.push('\n');
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_monotone_axis() {
        assert!(SignalTrace::new(AxisKind::Time, vec![0.0, 0.0], vec![1.0, 2.0], "A").is_err());
        assert!(SignalTrace::new(AxisKind::Time, vec![0.0, 1.0], vec![1.0], "A").is_err());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let t = SignalTrace::new(
            AxisKind::Tau,
            vec![1e-5, 2.000000000000001e-5, 0.1],
            vec![std::f64::consts::PI, -1.0 / 3.0, 0.0],
            "dimensionless",
        )
        .unwrap()
        .with_meta("config_hash", "abc")
        .with_meta("rng_seed", 7);
        let back = SignalTrace::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = SignalTrace::from_csv("# a=b\nx,y\n1,2\n3,oops\n").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
        assert!(SignalTrace::from_csv("").is_err());
        assert!(SignalTrace::from_csv("x,y\n").is_err());
        assert!(SignalTrace::from_csv("x,y\n1,2,3\n").is_err());
    }

    #[test]
    fn timestamp_line_is_stripped() {
        let t = SignalTrace::new(AxisKind::Time, vec![0.0], vec![1.0], "A").unwrap().with_meta(TIMESTAMP_KEY, 123);
        assert!(!t.reproducible_csv().contains(TIMESTAMP_KEY));
        assert!(t.to_csv().contains(TIMESTAMP_KEY));
    }
}
