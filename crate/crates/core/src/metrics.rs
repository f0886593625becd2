//! Shift-aligned reconstruction metrics.

use crate::error::{arg, Result};
use crate::forward::{clean_variance, MeasurementSet, SegmentPmf, Signal};

pub const SUCCESS_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub rel_error: f64,
    pub tv: f64,
    pub aligning_shift_x: usize,
    pub aligning_shift_p: usize,
    /// Diagnostic: TV with the PMF aligned by the signal's shift instead of its own.
    pub tv_joint_aligned: f64,
}

/// `(R_s v)[n] = v[(n - s) mod d]`.
fn shifted(v: &[f64], s: usize, n: usize) -> f64 {
    let d = v.len();
    v[(n + d - s) % d]
}

/// `min_s |x - R_s x_hat|^2 / |x|^2` and the minimizing shift.
pub fn rel_error(x_true: &Signal, x_hat: &Signal) -> Result<(f64, usize)> {
    let (x, xh) = (x_true.values(), x_hat.values());
    if x.len() != xh.len() {
        return arg("signals have different lengths");
    }
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return arg("true signal has zero norm");
    }
    let d = x.len();
    let mut best = (f64::INFINITY, 0);
    for s in 0..d {
        let err: f64 = (0..d).map(|n| (x[n] - shifted(xh, s, n)).powi(2)).sum();
        if err < best.0 {
            best = (err, s);
        }
    }
    Ok((best.0 / energy, best.1))
}

fn check_simplex(p: &[f64], name: &str) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|&v| v < -1e-6 || !v.is_finite()) || (total - 1.0).abs() > 1e-6 {
        return arg(format!("{name} is not a probability vector"));
    }
    Ok(())
}

fn l1_at_shift(p: &[f64], q: &[f64], s: usize) -> f64 {
    (0..p.len()).map(|n| (p[n] - shifted(q, s, n)).abs()).sum()
}

/// `1/2 min_s |p - R_s p_hat|_1` and the minimizing shift.
pub fn tv_distance(p_true: &[f64], p_hat: &[f64]) -> Result<(f64, usize)> {
    if p_true.len() != p_hat.len() || p_true.is_empty() {
        return arg("pmfs must be non-empty and of equal length");
    }
    check_simplex(p_true, "p_true")?;
    check_simplex(p_hat, "p_hat")?;
    let mut best = (f64::INFINITY, 0);
    for s in 0..p_true.len() {
        let l1 = l1_at_shift(p_true, p_hat, s);
        if l1 < best.0 {
            best = (l1, s);
        }
    }
    Ok(((0.5 * best.0).min(1.0), best.1))
}

pub fn evaluate(x_true: &Signal, p_true: &[f64], x_hat: &Signal, p_hat: &[f64]) -> Result<EvalReport> {
    let (rel_error, sx) = rel_error(x_true, x_hat)?;
    let (tv, sp) = tv_distance(p_true, p_hat)?;
    let tv_joint_aligned = (0.5 * l1_at_shift(p_true, p_hat, sx)).min(1.0);
    Ok(EvalReport { rel_error, tv, aligning_shift_x: sx, aligning_shift_p: sp, tv_joint_aligned })
}

/// SNR of a measurement set under `(x, p)`; `inf` for noiseless data.
pub fn snr_of(measurements: &MeasurementSet, x: &Signal, p: &SegmentPmf) -> Result<f64> {
    let sigma = measurements.sigma();
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(clean_variance(x, p, measurements.m())? / (sigma * sigma))
}

/// Fraction of runs with relative error strictly below `threshold`.
pub fn success_rate(rel_errors: &[f64], threshold: f64) -> Result<f64> {
    if rel_errors.is_empty() {
        return arg("success rate of an empty list");
    }
    Ok(rel_errors.iter().filter(|&&e| e < threshold).count() as f64 / rel_errors.len() as f64)
}

/// Median, ignoring NaN entries. `None` when nothing finite remains.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
