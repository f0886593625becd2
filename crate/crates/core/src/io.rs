//! Plain-text file formats: measurement sets, text matrices, two-column `.dat`
//! curves, training history and `key=value` files.
//!
//! Floats are written with 17 significant digits so every value round-trips.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::critic::CriticParams;
use crate::error::{MsrError, Result};
use crate::forward::MeasurementSet;
use crate::trainer::HistoryRow;

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(MsrError::Parse { line, msg: msg.into() })
}

/// Full-precision float formatting (`inf`, `-inf` and `NaN` pass through).
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let t = tok.trim();
    match t {
        "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
        "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
        _ => t.parse::<f64>().or_else(|_| parse_err(line, format!("not a number: {t:?}"))),
    }
}

fn parse_row(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split(',').map(|t| parse_f64(t, line)).collect()
}

/// Sidecar path holding the true locations for a measurement file.
pub fn locations_path(path: &Path) -> PathBuf {
    path.with_extension("loc")
}

pub fn format_measurements(ms: &MeasurementSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# d={}", ms.d());
    let _ = writeln!(out, "# m={}", ms.m());
    let _ = writeln!(out, "# N={}", ms.n());
    let _ = writeln!(out, "# sigma={}", fmt_f64(ms.sigma()));
    let _ = writeln!(out, "# seed={}", ms.seed());
    let _ = writeln!(out, "# snr={}", fmt_f64(ms.snr()));
    for row in ms.rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_measurements(text: &str) -> Result<MeasurementSet> {
    let (mut d, mut m, mut n, mut sigma, mut seed, mut snr) = (None, None, None, None, 0u64, f64::NAN);
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(h) = l.strip_prefix('#') {
            let Some((k, v)) = h.split_once('=') else { continue };
            let v = v.trim();
            let int = |v: &str| v.parse::<usize>().or_else(|_| parse_err(line, format!("bad integer {v:?}")));
            match k.trim() {
                "d" => d = Some(int(v)?),
                "m" => m = Some(int(v)?),
                "N" => n = Some(int(v)?),
                "sigma" => sigma = Some(parse_f64(v, line)?),
                "seed" => seed = v.parse().or_else(|_| parse_err(line, format!("bad seed {v:?}")))?,
                "snr" => snr = parse_f64(v, line)?,
                _ => {}
            }
            continue;
        }
        let row = parse_row(l, line)?;
        if Some(row.len()) != m {
            return parse_err(line, format!("expected {} values, found {}", m.unwrap_or(0), row.len()));
        }
        data.extend(row);
        rows += 1;
    }
    let (Some(d), Some(m), Some(n), Some(sigma)) = (d, m, n, sigma) else {
        return parse_err(0, "header must define d, m, N and sigma");
    };
    if rows != n {
        return parse_err(0, format!("header says N={n} but {rows} rows were read"));
    }
    MeasurementSet::new(data, n, m, d, sigma, seed, snr)
}

/// Writes the measurement file and, if locations are known, the `.loc` sidecar.
pub fn write_measurements(path: &Path, ms: &MeasurementSet) -> Result<()> {
    fs::write(path, format_measurements(ms))?;
    if let Some(locs) = ms.diagnostic_locations() {
        let mut s = String::with_capacity(locs.len() * 4);
        for l in locs {
            let _ = writeln!(s, "{l}");
        }
        fs::write(locations_path(path), s)?;
    }
    Ok(())
}

pub fn read_measurements(path: &Path) -> Result<MeasurementSet> {
    let ms = parse_measurements(&fs::read_to_string(path)?)?;
    let loc = locations_path(path);
    if loc == path || !loc.exists() {
        return Ok(ms);
    }
    let locs = fs::read_to_string(&loc)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.trim().parse::<usize>().or_else(|_| parse_err(i + 1, format!("bad location {l:?}"))))
        .collect::<Result<Vec<_>>>()?;
    ms.with_true_locations(locs)
}

pub fn format_matrix(rows: usize, cols: usize, values: &[f64]) -> String {
    assert_eq!(values.len(), rows * cols, "matrix shape mismatch");
    let mut out = format!("# {rows},{cols}\n");
    for r in 0..rows {
        let cells: Vec<String> = values[r * cols..(r + 1) * cols].iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Parses the text matrix format, returning `(rows, cols, values)`.
pub fn parse_matrix(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, head)) = lines.next() else { return parse_err(1, "empty matrix file") };
    let shape = head.trim().strip_prefix('#').and_then(|h| h.split_once(','));
    let Some((r, c)) = shape else { return parse_err(1, "missing '# rows,cols' header") };
    let (Ok(rows), Ok(cols)) = (r.trim().parse::<usize>(), c.trim().parse::<usize>()) else {
        return parse_err(1, "bad matrix shape");
    };
    let mut values = Vec::with_capacity(rows * cols);
    for (i, l) in lines {
        let row = parse_row(l.trim(), i + 1)?;
        if row.len() != cols {
            return parse_err(i + 1, format!("expected {cols} columns, found {}", row.len()));
        }
        values.extend(row);
    }
    if values.len() != rows * cols {
        return parse_err(0, format!("expected {rows} rows"));
    }
    Ok((rows, cols, values))
}

/// Two-column curve with header `x,y`. Index vectors start at 1.
pub fn format_dat(points: &[(f64, f64)]) -> String {
    let mut out = String::from("x,y\n");
    for &(x, y) in points {
        let _ = writeln!(out, "{},{}", fmt_num(x), fmt_f64(y));
    }
    out
}

// integral abscissas stay integral so indices read naturally
fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        fmt_f64(x)
    }
}

pub fn format_vector_dat(values: &[f64]) -> String {
    let pts: Vec<(f64, f64)> = values.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v)).collect();
    format_dat(&pts)
}

pub fn parse_dat(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || (i == 0 && l == "x,y") {
            continue;
        }
        let row = parse_row(l, i + 1)?;
        if row.len() != 2 {
            return parse_err(i + 1, "expected two columns");
        }
        out.push((row[0], row[1]));
    }
    Ok(out)
}

/// Reads the `y` column of a `.dat` file (a signal or PMF).
pub fn read_vector_dat(path: &Path) -> Result<Vec<f64>> {
    Ok(parse_dat(&fs::read_to_string(path)?)?.into_iter().map(|(_, y)| y).collect())
}

pub fn write_vector_dat(path: &Path, values: &[f64]) -> Result<()> {
    Ok(fs::write(path, format_vector_dat(values))?)
}

pub const HISTORY_HEADER: &str = "iter,critic_loss,gen_loss,rel_error,tv";

pub fn format_history(rows: &[HistoryRow]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.iter,
            fmt_f64(r.critic_loss),
            fmt_f64(r.gen_loss),
            opt(r.rel_error),
            opt(r.tv)
        );
    }
    out
}

pub fn format_kv(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// `key=value` lines; `#` comments and blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let Some((k, v)) = l.split_once('=') else { return parse_err(i + 1, "expected key=value") };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Writes every critic tensor as `critic_<name>.txt` plus `critic.meta`.
pub fn write_critic_checkpoint(dir: &Path, critic: &CriticParams, iteration: usize) -> Result<()> {
    for (name, r, c, vals) in critic.tensors() {
        fs::write(dir.join(format!("critic_{name}.txt")), format_matrix(r, c, &vals))?;
    }
    let l = critic.layout();
    let meta = [("ell", l.ell), ("m", l.m), ("iteration", iteration)].map(|(k, v)| (k.to_string(), v.to_string()));
    fs::write(dir.join("critic.meta"), format_kv(&meta))?;
    Ok(())
}
