//! Gumbel noise and the Gumbel-Softmax relaxation of a categorical draw.

use rand::Rng;

use crate::error::{arg, Result};
use crate::forward::SegmentPmf;
use crate::linalg::softmax_into;

/// Uniform draws are clamped to `[UNIFORM_EPS, 1 - UNIFORM_EPS]` before the double log.
pub const UNIFORM_EPS: f64 = 1e-12;

pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
    -(-u.ln()).ln()
}

/// One Gumbel(0, 1) draw, `-ln(-ln u)` with `u ~ Unif(0, 1)`.
pub fn gumbel_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    gumbel_from_uniform(rng.random::<f64>())
}

/// A batch of relaxed one-hot rows together with the Gumbel noise that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    /// Row-major `B x d`.
    pub q: Vec<f64>,
    /// Row-major `B x d`, the recorded `g_{b,s}`.
    pub gumbel: Vec<f64>,
    pub tau: f64,
    pub d: usize,
}

impl SoftAssignment {
    pub fn rows(&self) -> usize {
        self.q.len() / self.d
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.q[b * self.d..(b + 1) * self.d]
    }
}

/// Draws `batch` rows `q_b = softmax((g_b + log p) / tau)`.
pub fn gumbel_softmax<R: Rng + ?Sized>(p: &SegmentPmf, tau: f64, batch: usize, rng: &mut R) -> Result<SoftAssignment> {
    if batch == 0 {
        return arg("batch size must be >= 1");
    }
    let gumbel: Vec<f64> = (0..batch * p.d()).map(|_| gumbel_sample(rng)).collect();
    gumbel_softmax_frozen(p, tau, gumbel)
}

/// Same as [`gumbel_softmax`] with caller-supplied Gumbel noise (`B x d`, row-major).
pub fn gumbel_softmax_frozen(p: &SegmentPmf, tau: f64, gumbel: Vec<f64>) -> Result<SoftAssignment> {
    if !(tau > 0.0) || !tau.is_finite() {
        return arg(format!("temperature must be positive, got {tau}"));
    }
    let d = p.d();
    if gumbel.is_empty() || gumbel.len() % d != 0 {
        return arg("gumbel noise must be a non-empty B x d matrix");
    }
    let mut q = vec![0.0; gumbel.len()];
    let mut z = vec![0.0; d];
    for (g_row, q_row) in gumbel.chunks_exact(d).zip(q.chunks_exact_mut(d)) {
        // log p = logits - lse(logits); the constant cancels in the softmax.
        for ((z, &g), &t) in z.iter_mut().zip(g_row).zip(p.logits()) {
            *z = g + t;
        }
        softmax_into(&z, tau, q_row);
    }
    Ok(SoftAssignment { q, gumbel, tau, d })
}

/// Jacobian of one relaxed row with respect to the logits, `J[s][i] = dq_s / dtheta_i`,
/// returned row-major `d x d`.
pub fn gumbel_softmax_backward(q_row: &[f64], tau: f64) -> Vec<f64> {
    let d = q_row.len();
    let mut jac = vec![0.0; d * d];
    for s in 0..d {
        for i in 0..d {
            let delta = if s == i { 1.0 } else { 0.0 };
            jac[s * d + i] = q_row[s] * (delta - q_row[i]) / tau;
        }
    }
    jac
}

/// Vector-Jacobian product `sum_s upstream[s] * dq_s/dtheta_i`, accumulated into `out`.
pub(crate) fn gumbel_softmax_vjp_add(q_row: &[f64], upstream: &[f64], tau: f64, out: &mut [f64]) {
    let mean: f64 = q_row.iter().zip(upstream).map(|(q, u)| q * u).sum();
    for ((o, &q), &u) in out.iter_mut().zip(q_row).zip(upstream) {
        *o += q * (u - mean) / tau;
    }
}
