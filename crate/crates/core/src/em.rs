//! Expectation-maximization over the latent segment locations.
//!
//! The model is a Gaussian mixture over the `d` cyclic segments `M_s x` with
//! mixing weights `p`; `sigma` is known and held fixed.

use crate::error::{arg, MsrError, Result};
use crate::forward::{mask_into, MeasurementSet, SegmentPmf, Signal};
use crate::linalg::{gemm, logsumexp};

pub const SIGMA_FLOOR: f64 = 1e-3;

/// Responsibilities `w[j, s] = P(s_j = s | xi_j, x, p)`, row-major `N x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub w: Vec<f64>,
    pub n: usize,
    pub d: usize,
}

impl Posterior {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.w[j * self.d..(j + 1) * self.d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Relative change of the log-likelihood below which iteration stops.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { max_iters: 5000, tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub x: Signal,
    pub p: Vec<f64>,
    pub ll_trace: Vec<f64>,
    pub converged: bool,
}

impl EmResult {
    pub fn pmf(&self) -> SegmentPmf {
        SegmentPmf::from_probs(&self.p).expect("EM keeps p on the simplex")
    }
}

pub fn effective_sigma(sigma: f64) -> f64 {
    sigma.max(SIGMA_FLOOR)
}

/// All `d` clean segments `M_s x`, row-major `d x m`.
fn segments(x: &[f64], m: usize) -> Vec<f64> {
    let d = x.len();
    let mut a = vec![0.0; d * m];
    for (s, row) in a.chunks_exact_mut(m).enumerate() {
        mask_into(x, s, row);
    }
    a
}

/// E-step with probabilities `p` (entries may be zero). Returns the posterior and
/// the log-likelihood including the Gaussian normalization constant.
pub fn e_step(ms: &MeasurementSet, x: &Signal, p: &[f64], sigma_eff: f64) -> Result<(Posterior, f64)> {
    if !(sigma_eff > 0.0) {
        return arg(format!("sigma_eff must be positive, got {sigma_eff}"));
    }
    let (n, m, d) = (ms.n(), ms.m(), ms.d());
    if x.d() != d || p.len() != d {
        return arg("signal/pmf length does not match the measurement set");
    }
    let a = segments(x.values(), m);
    let a_sq: Vec<f64> = a.chunks_exact(m).map(|r| r.iter().map(|v| v * v).sum()).collect();
    // cross[j, s] = <xi_j, a_s>
    let mut cross = vec![0.0; n * d];
    gemm(n, m, d, 1.0, ms.data(), false, &a, true, 0.0, &mut cross);
    let log_p: Vec<f64> = p.iter().map(|&v| v.ln()).collect();
    let inv2s2 = 1.0 / (2.0 * sigma_eff * sigma_eff);
    let constant = -0.5 * m as f64 * (2.0 * std::f64::consts::PI * sigma_eff * sigma_eff).ln();

    let mut w = cross;
    let mut ll = 0.0;
    for (j, row) in w.chunks_exact_mut(d).enumerate() {
        let xi = ms.row(j);
        let xi_sq: f64 = xi.iter().map(|v| v * v).sum();
        for s in 0..d {
            let dist = (xi_sq - 2.0 * row[s] + a_sq[s]).max(0.0);
            row[s] = log_p[s] - dist * inv2s2;
        }
        let lse = logsumexp(row);
        ll += lse + constant;
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    Ok((Posterior { w, n, d }, ll))
}

/// M-step: `p` is the average responsibility, `x` the responsibility-weighted
/// average of the un-shifted measurements. Positions never covered keep `x_prev`.
pub fn m_step(ms: &MeasurementSet, posterior: &Posterior, x_prev: &Signal) -> Result<(Signal, Vec<f64>)> {
    let (n, m, d) = (ms.n(), ms.m(), ms.d());
    if posterior.n != n || posterior.d != d || x_prev.d() != d {
        return arg("posterior shape does not match the measurement set");
    }
    let mut mass = vec![0.0; d];
    for row in posterior.w.chunks_exact(d) {
        for (t, &v) in mass.iter_mut().zip(row) {
            *t += v;
        }
    }
    let p_new: Vec<f64> = mass.iter().map(|&t| t / n as f64).collect();

    // weighted[s] = sum_j w[j, s] xi_j
    let mut weighted = vec![0.0; d * m];
    gemm(d, n, m, 1.0, &posterior.w, true, ms.data(), false, 0.0, &mut weighted);
    let mut num = vec![0.0; d];
    let mut den = vec![0.0; d];
    for s in 0..d {
        for k in 0..m {
            let pos = (k + s) % d;
            num[pos] += weighted[s * m + k];
            den[pos] += mass[s];
        }
    }
    let x_new = num
        .iter()
        .zip(&den)
        .zip(x_prev.values())
        .map(|((&a, &b), &old)| if b > 0.0 { a / b } else { old })
        .collect();
    Ok((Signal::new(x_new)?, p_new))
}

/// Alternates E and M steps until the relative log-likelihood change drops below
/// `opts.tol` or `opts.max_iters` is reached.
pub fn run_em(ms: &MeasurementSet, x0: &Signal, p0: &[f64], sigma: f64, opts: EmOptions) -> Result<EmResult> {
    let sigma_eff = effective_sigma(sigma);
    let mut x = x0.clone();
    let mut p = p0.to_vec();
    let mut ll_trace = Vec::new();
    let mut converged = false;
    for iter in 0..opts.max_iters {
        let (post, ll) = e_step(ms, &x, &p, sigma_eff)?;
        if !ll.is_finite() {
            return Err(MsrError::NonFinite { step: "em e-step", iteration: iter, detail: format!("log-likelihood {ll}") });
        }
        if let Some(&prev) = ll_trace.last() {
            let prev: f64 = prev;
            if (ll - prev).abs() < opts.tol * ll.abs() {
                ll_trace.push(ll);
                converged = true;
                break;
            }
        }
        ll_trace.push(ll);
        let (xn, pn) = m_step(ms, &post, &x)?;
        x = xn;
        p = pn;
    }
    Ok(EmResult { x, p, ll_trace, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{mask, synthesize};

    fn instance() -> (MeasurementSet, Signal, Vec<f64>) {
        let x = Signal::new(vec![0.5, -1.0, 2.0, 0.3]).unwrap();
        let p = SegmentPmf::from_probs(&[0.4, 0.1, 0.3, 0.2]).unwrap();
        let ms = synthesize(&x, &p, 2, 0.4, 3, 1).unwrap();
        (ms, x, p.probs())
    }

    #[test]
    fn posterior_rows_sum_to_one() {
        let (ms, x, p) = instance();
        let (post, ll) = e_step(&ms, &x, &p, 0.4).unwrap();
        assert!(ll.is_finite());
        for j in 0..ms.n() {
            assert!((post.row(j).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(e_step(&ms, &x, &p, 0.0).is_err());
    }

    #[test]
    fn huge_sigma_gives_prior() {
        let (ms, x, p) = instance();
        let (post, _) = e_step(&ms, &x, &p, 1e8).unwrap();
        for j in 0..ms.n() {
            for (a, b) in post.row(j).iter().zip(&p) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tiny_sigma_picks_exact_segment() {
        let x = Signal::new(vec![0.5, -1.0, 2.0, 0.3, 1.7]).unwrap();
        let xi = mask(&x, 3, 3).unwrap();
        let ms = MeasurementSet::new(xi, 1, 3, 5, 0.0, 0, f64::INFINITY).unwrap();
        let (post, _) = e_step(&ms, &x, &[0.2; 5], 1e-3).unwrap();
        assert!((post.row(0)[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn m_step_aligns_and_averages() {
        let x = Signal::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let rows = [mask(&x, 1, 4).unwrap(), mask(&x, 3, 4).unwrap()];
        // perturb the rows differently so the average is non-trivial
        let data: Vec<f64> = rows[0].iter().map(|v| v + 0.2).chain(rows[1].iter().map(|v| v - 0.4)).collect();
        let ms = MeasurementSet::new(data, 2, 4, 4, 0.1, 0, 1.0).unwrap();
        let mut w = vec![0.0; 8];
        w[1] = 1.0;
        w[4 + 3] = 1.0;
        let post = Posterior { w, n: 2, d: 4 };
        let (xn, pn) = m_step(&ms, &post, &x).unwrap();
        for (a, b) in xn.values().iter().zip(x.values()) {
            assert!((a - (b - 0.1)).abs() < 1e-12);
        }
        assert_eq!(pn, vec![0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn uncovered_positions_keep_previous_value() {
        // d = 4, m = 1, all mass on shift 0: only position 0 is observed.
        let ms = MeasurementSet::new(vec![5.0, 7.0], 2, 1, 4, 0.1, 0, 1.0).unwrap();
        let w = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let prev = Signal::new(vec![0.0, 9.0, 8.0, 7.0]).unwrap();
        let (xn, _) = m_step(&ms, &Posterior { w, n: 2, d: 4 }, &prev).unwrap();
        assert_eq!(xn.values(), &[6.0, 9.0, 8.0, 7.0]);
    }

    #[test]
    fn likelihood_is_monotone() {
        let x = Signal::new((0..10).map(|i| (i as f64).cos()).collect()).unwrap();
        let p = SegmentPmf::uniform(10).unwrap();
        let ms = synthesize(&x, &p, 6, 0.5, 400, 3).unwrap();
        let x0 = Signal::new(vec![0.1; 10]).unwrap();
        let x0 = Signal::new(x0.values().iter().enumerate().map(|(i, v)| v * i as f64).collect()).unwrap();
        let res = run_em(&ms, &x0, &p.probs(), 0.5, EmOptions { max_iters: 200, tol: 1e-12 }).unwrap();
        for w in res.ll_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        assert!((res.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
