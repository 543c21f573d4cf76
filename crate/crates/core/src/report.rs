//! Belly-level metrics and heatmap rendering.

use crate::error::{Error, Result};
use crate::hsidata::io::{read_bytes, write_bytes};
use crate::map::ChemicalMap;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub id: String,
    pub reference: f64,
    pub prediction: f64,
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRmse {
    pub group: String,
    pub n: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n: usize,
    pub rmse: f64,
    /// Least-squares line of prediction on reference.
    pub slope: f64,
    pub intercept: f64,
    /// Residual standard deviation around the line, `n - 2` degrees of
    /// freedom; `None` below three samples.
    pub s_yx: Option<f64>,
    pub groups: Vec<GroupRmse>,
    pub pairs: Vec<Prediction>,
}

fn rmse(pairs: &[&Prediction]) -> f64 {
    (pairs.iter().map(|p| (p.prediction - p.reference).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt()
}

pub fn report_metrics(pairs: &[Prediction]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("no predictions to report"));
    }
    let n = pairs.len();
    let all: Vec<&Prediction> = pairs.iter().collect();
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.reference).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.prediction).sum::<f64>() / nf;
    let sxx: f64 = pairs.iter().map(|p| (p.reference - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.reference - mx) * (p.prediction - my)).sum();
    let (slope, intercept) = if sxx > 0.0 { (sxy / sxx, my - sxy / sxx * mx) } else { (f64::NAN, f64::NAN) };
    let s_yx = (n >= 3 && sxx > 0.0).then(|| {
        let ss: f64 = pairs.iter().map(|p| (p.prediction - intercept - slope * p.reference).powi(2)).sum();
        (ss / (nf - 2.0)).sqrt()
    });
    let mut by_group: BTreeMap<&str, Vec<&Prediction>> = BTreeMap::new();
    for p in pairs {
        if let Some(g) = &p.group {
            by_group.entry(g).or_default().push(p);
        }
    }
    let groups = by_group
        .into_iter()
        .map(|(g, ps)| GroupRmse { group: g.to_string(), n: ps.len(), rmse: rmse(&ps) })
        .collect();
    Ok(MetricsReport { n, rmse: rmse(&all), slope, intercept, s_yx, groups, pairs: pairs.to_vec() })
}

/// Writes the report as CSV rows of `metric,group,value`.
pub fn write_metrics_csv(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    w.write_record(["metric", "group", "value"])?;
    let mut row = |m: &str, g: &str, v: String| w.write_record([m, g, v.as_str()]);
    row("n", "all", report.n.to_string())?;
    row("rmse", "all", report.rmse.to_string())?;
    row("slope", "all", report.slope.to_string())?;
    row("intercept", "all", report.intercept.to_string())?;
    if let Some(s) = report.s_yx {
        row("s_yx", "all", s.to_string())?;
    }
    for g in &report.groups {
        row("n", &g.group, g.n.to_string())?;
        row("rmse", &g.group, g.rmse.to_string())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// 8-bit gray levels: masked pixels scaled linearly from `[lo, hi]` to
/// `[1, 255]` and clamped, background 0.
pub fn heatmap_bytes(map: &ChemicalMap, lo: f64, hi: f64) -> Result<Vec<u8>> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("degenerate heatmap range [{lo}, {hi}]")));
    }
    Ok(map
        .values
        .iter()
        .zip(map.mask.values())
        .map(|(&v, &m)| {
            if m == 0 {
                0
            } else {
                (1.0 + 254.0 * (v - lo) / (hi - lo)).round().clamp(1.0, 255.0) as u8
            }
        })
        .collect())
}

/// Inverse of the gray scale for a foreground byte.
pub fn heatmap_value(byte: u8, lo: f64, hi: f64) -> f64 {
    lo + (byte as f64 - 1.0) * (hi - lo) / 254.0
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary PGM with maxval 255 written by [`encode_pgm`].
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Header("truncated PGM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Header("bad PGM header".into()))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Header("only 8-bit binary PGM is supported".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Header(format!("bad PGM dimension {s}")));
    let (w, h) = (parse(fields[1])?, parse(fields[2])?);
    let payload = &bytes[pos + 1..];
    if payload.len() != w * h {
        return Err(Error::SizeMismatch { expected: w * h, found: payload.len() });
    }
    Ok((w, h, payload.to_vec()))
}

pub fn render_heatmap(map: &ChemicalMap, lo: f64, hi: f64, path: impl AsRef<Path>) -> Result<()> {
    let pixels = heatmap_bytes(map, lo, hi)?;
    write_bytes(path.as_ref(), &encode_pgm(map.width(), map.height(), &pixels))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    decode_pgm(&read_bytes(path.as_ref())?)
}
