//! File formats: time-series CSV and ground-truth JSON.
//!
//! CSV layout: header `t,y1,...,yp,u1,...,um`, one row per time index
//! (1-based), values written with shortest round-trip decimal formatting so a
//! write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::arx::{ArxNetwork, PolynomialMatrix, TimeSeries};
use crate::error::{Error, Result};

pub fn time_series_to_csv(data: &TimeSeries) -> String {
    let (p, m) = (data.p(), data.m());
    let mut out = String::from("t");
    for i in 1..=p {
        write!(out, ",y{i}").unwrap();
    }
    for j in 1..=m {
        write!(out, ",u{j}").unwrap();
    }
    out.push('\n');
    for t in 0..data.len() {
        write!(out, "{}", t + 1).unwrap();
        for i in 0..p {
            write!(out, ",{}", data.y[(i, t)]).unwrap();
        }
        for j in 0..m {
            write!(out, ",{}", data.u[(j, t)]).unwrap();
        }
        out.push('\n');
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn time_series_from_csv(text: &str) -> Result<TimeSeries> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names.first() != Some(&"t") {
        return Err(parse_err(hline, "header must start with 't'"));
    }
    let mut p = 0;
    let mut m = 0;
    for (c, name) in names.iter().enumerate().skip(1) {
        let expect_y = format!("y{}", p + 1);
        let expect_u = format!("u{}", m + 1);
        if m == 0 && *name == expect_y {
            p += 1;
        } else if *name == expect_u {
            m += 1;
        } else {
            return Err(parse_err(
                hline,
                format!("unexpected column '{name}' at position {}", c + 1),
            ));
        }
    }
    if p == 0 {
        return Err(parse_err(hline, "no node columns (y1, y2, ...)"));
    }

    let mut y_cols: Vec<Vec<f64>> = Vec::new();
    let mut u_cols: Vec<Vec<f64>> = Vec::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", names.len(), fields.len()),
            ));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad time index '{}'", fields[0])))?;
        if t != y_cols.len() + 1 {
            return Err(parse_err(
                line,
                format!("time index {t} out of sequence, expected {}", y_cols.len() + 1),
            ));
        }
        let mut vals = Vec::with_capacity(fields.len() - 1);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(line, format!("bad number '{f}'")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value '{f}'")));
            }
            vals.push(v);
        }
        y_cols.push(vals[..p].to_vec());
        u_cols.push(vals[p..].to_vec());
    }
    if y_cols.is_empty() {
        return Err(parse_err(hline, "no data rows"));
    }
    let t = y_cols.len();
    let y = DMatrix::from_fn(p, t, |i, c| y_cols[c][i]);
    let u = DMatrix::from_fn(m, t, |j, c| u_cols[c][j]);
    TimeSeries::new(y, u)
}

pub fn read_time_series(path: impl AsRef<Path>) -> Result<TimeSeries> {
    time_series_from_csv(&std::fs::read_to_string(path)?)
}

pub fn write_time_series(path: impl AsRef<Path>, data: &TimeSeries) -> Result<()> {
    std::fs::write(path, time_series_to_csv(data))?;
    Ok(())
}

/// On-disk network description (ground truth or estimate).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub p: usize,
    pub m: usize,
    pub max_order: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
    pub noise_var: Vec<f64>,
}

impl From<&ArxNetwork> for NetworkFile {
    fn from(net: &ArxNetwork) -> Self {
        Self {
            p: net.p,
            m: net.m,
            max_order: net.max_order(),
            a: net.a.to_nested(),
            b: net.b.to_nested(),
            noise_var: net.noise_var.clone(),
        }
    }
}

impl TryFrom<NetworkFile> for ArxNetwork {
    type Error = Error;

    fn try_from(f: NetworkFile) -> Result<Self> {
        if f.a.len() != f.p || f.b.len() != f.p {
            return Err(Error::Dimension(format!(
                "network file declares p={} but A has {} rows and B has {}",
                f.p,
                f.a.len(),
                f.b.len()
            )));
        }
        let a = PolynomialMatrix::from_nested(f.a, f.max_order)?;
        let b = if f.m == 0 {
            PolynomialMatrix::zeros(f.p, 0, f.max_order)
        } else {
            PolynomialMatrix::from_nested(f.b, f.max_order)?
        };
        if b.cols() != f.m {
            return Err(Error::Dimension(format!(
                "network file declares m={} but B has {} columns",
                f.m,
                b.cols()
            )));
        }
        ArxNetwork::new(a, b, f.noise_var)
    }
}

pub fn network_to_json(net: &ArxNetwork) -> String {
    serde_json::to_string_pretty(&NetworkFile::from(net)).expect("network serializes")
}

pub fn network_from_json(text: &str) -> Result<ArxNetwork> {
    let f: NetworkFile = serde_json::from_str(text)?;
    ArxNetwork::try_from(f)
}

pub fn read_network(path: impl AsRef<Path>) -> Result<ArxNetwork> {
    network_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_network(path: impl AsRef<Path>, net: &ArxNetwork) -> Result<()> {
    std::fs::write(path, network_to_json(net))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arx::{random_network, simulate, InputKind, NetworkGenerator};

    #[test]
    fn csv_round_trip_is_exact() {
        let net = random_network(&NetworkGenerator::default(), 4).unwrap();
        let data = simulate(&net, 25, &InputKind::Gaussian { variance: 1.0 }, 8).unwrap();
        let text = time_series_to_csv(&data);
        assert!(text.starts_with("t,y1,y2,y3,y4,y5,y6,y7,y8,y9,y10,u1\n"));
        assert_eq!(time_series_from_csv(&text).unwrap(), data);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        assert!(matches!(
            time_series_from_csv(""),
            Err(Error::Parse { line: 1, .. })
        ));
        let err = time_series_from_csv("t,y1\n1,0.5\n2,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = time_series_from_csv("t,y1,u1\n1,0.5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = time_series_from_csv("t,y1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        let err = time_series_from_csv("t,u1,y1\n1,0,0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn network_json_round_trip() {
        let net = random_network(&NetworkGenerator::default(), 21).unwrap();
        let json = network_to_json(&net);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["p", "m", "max_order", "A", "B", "noise_var"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(network_from_json(&json).unwrap(), net);
    }
}
