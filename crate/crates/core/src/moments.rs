//! Shift-invariant features: moments of the observations up to third order,
//! and recovery of `(x, p)` by gradient descent on the moment mismatch.
//!
//! The PMF is parameterized by logits, so the search space is unconstrained.

use crate::error::{arg, Result};
use crate::forward::{mask_adjoint_add, mask_into, MeasurementSet, SegmentPmf, Signal};
use crate::linalg::softmax_into;

/// First, second and third moments of length-`m` observations. `m2` is `m x m`
/// and `m3` is `m x m x m`, both dense and row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub m: usize,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub m3: Vec<f64>,
    pub n_used: usize,
}

impl MomentSet {
    fn zeros(m: usize) -> Self {
        Self { m, m1: vec![0.0; m], m2: vec![0.0; m * m], m3: vec![0.0; m * m * m], n_used: 0 }
    }

    #[inline]
    pub fn idx3(&self, i: usize, k: usize, l: usize) -> usize {
        (i * self.m + k) * self.m + l
    }

    /// Copies the `i <= k <= l` (and `i <= k`) entries to every permutation.
    fn mirror(&mut self) {
        let m = self.m;
        for i in 0..m {
            for k in i..m {
                self.m2[k * m + i] = self.m2[i * m + k];
                for l in k..m {
                    let v = self.m3[self.idx3(i, k, l)];
                    for (a, b, c) in [(i, l, k), (k, i, l), (k, l, i), (l, i, k), (l, k, i)] {
                        let at = self.idx3(a, b, c);
                        self.m3[at] = v;
                    }
                }
            }
        }
    }

    /// Adds `weight * v, weight * v v^T, weight * v (x) v (x) v` to the upper entries.
    fn accumulate(&mut self, v: &[f64], weight: f64) {
        let m = self.m;
        for i in 0..m {
            let wi = weight * v[i];
            self.m1[i] += wi;
            for k in i..m {
                let wik = wi * v[k];
                self.m2[i * m + k] += wik;
                let base = (i * m + k) * m;
                for l in k..m {
                    self.m3[base + l] += wik * v[l];
                }
            }
        }
    }
}

/// Sample moments in a single pass over the measurements.
pub fn empirical_moments(ms: &MeasurementSet) -> MomentSet {
    let mut out = MomentSet::zeros(ms.m());
    let w = 1.0 / ms.n() as f64;
    for row in ms.rows() {
        out.accumulate(row, w);
    }
    out.n_used = ms.n();
    out.mirror();
    out
}

/// Population moments of `M_s x + eps`, `s ~ p`, `eps ~ N(0, sigma^2 I)`.
pub fn analytic_moments(x: &Signal, p: &[f64], m: usize, sigma: f64) -> Result<MomentSet> {
    let d = x.d();
    if p.len() != d {
        return arg("pmf length does not match the signal");
    }
    if m == 0 || m > d {
        return arg(format!("segment length m={m} out of range [1, {d}]"));
    }
    let mut out = MomentSet::zeros(m);
    let mut a = vec![0.0; m];
    for (s, &ps) in p.iter().enumerate() {
        mask_into(x.values(), s, &mut a);
        out.accumulate(&a, ps);
    }
    let s2 = sigma * sigma;
    if s2 > 0.0 {
        for i in 0..m {
            out.m2[i * m + i] += s2;
        }
        let m1 = out.m1.clone();
        // sigma^2 (M1[i] d_kl + M1[k] d_il + M1[l] d_ik), upper entries i <= k <= l only
        for i in 0..m {
            for k in i..m {
                for l in k..m {
                    let mut b = 0.0;
                    if k == l {
                        b += m1[i];
                    }
                    if i == l {
                        b += m1[k];
                    }
                    if i == k {
                        b += m1[l];
                    }
                    if b != 0.0 {
                        let at = out.idx3(i, k, l);
                        out.m3[at] += s2 * b;
                    }
                }
            }
        }
    }
    out.mirror();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl MomentWeights {
    pub fn balanced(m: usize) -> Self {
        let m = m as f64;
        Self { w1: 1.0, w2: 1.0 / m, w3: 1.0 / (m * m) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentLoss {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_logits: Vec<f64>,
}

/// Weighted squared mismatch between the moments of `(x, softmax(logits))` and `target`,
/// with exact gradients.
pub fn moment_loss(
    x: &Signal,
    logits: &[f64],
    target: &MomentSet,
    weights: MomentWeights,
    sigma: f64,
) -> Result<MomentLoss> {
    let d = x.d();
    let m = target.m;
    if logits.len() != d {
        return arg("logits length does not match the signal");
    }
    let mut p = vec![0.0; d];
    softmax_into(logits, 1.0, &mut p);
    let model = analytic_moments(x, &p, m, sigma)?;

    let r1: Vec<f64> = model.m1.iter().zip(&target.m1).map(|(a, b)| a - b).collect();
    let r2: Vec<f64> = model.m2.iter().zip(&target.m2).map(|(a, b)| a - b).collect();
    let r3: Vec<f64> = model.m3.iter().zip(&target.m3).map(|(a, b)| a - b).collect();
    let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    let value = weights.w1 * sq(&r1) + weights.w2 * sq(&r2) + weights.w3 * sq(&r3);

    // Gradients with respect to M1, M2, M3 (M1 also enters the noise term of M3).
    let s2 = sigma * sigma;
    let mut g1: Vec<f64> = r1.iter().map(|v| 2.0 * weights.w1 * v).collect();
    if s2 > 0.0 {
        for i in 0..m {
            let mut t = 0.0;
            for k in 0..m {
                t += r3[target.idx3(i, k, k)] + r3[target.idx3(k, i, k)] + r3[target.idx3(k, k, i)];
            }
            g1[i] += 2.0 * weights.w3 * s2 * t;
        }
    }
    // G2 + G2^T, and the symmetrized G3
    let mut g2s = vec![0.0; m * m];
    for i in 0..m {
        for k in 0..m {
            g2s[i * m + k] = 2.0 * weights.w2 * (r2[i * m + k] + r2[k * m + i]);
        }
    }
    let mut g3s = vec![0.0; m * m * m];
    for i in 0..m {
        for k in 0..m {
            for l in 0..m {
                let idx = |a, b, c| target.idx3(a, b, c);
                let sum = r3[idx(i, k, l)] + r3[idx(i, l, k)] + r3[idx(k, i, l)] + r3[idx(k, l, i)] + r3[idx(l, i, k)] + r3[idx(l, k, i)];
                g3s[idx(i, k, l)] = 2.0 * weights.w3 * sum / 6.0;
            }
        }
    }

    let mut grad_p = vec![0.0; d];
    let mut grad_x = vec![0.0; d];
    let mut a = vec![0.0; m];
    let mut ga = vec![0.0; m];
    let mut qa = vec![0.0; m * m]; // a (x) a
    for s in 0..d {
        mask_into(x.values(), s, &mut a);
        for i in 0..m {
            for k in 0..m {
                qa[i * m + k] = a[i] * a[k];
            }
        }
        let mut lin = 0.0;
        let mut quad = 0.0;
        let mut cubic = 0.0;
        for i in 0..m {
            lin += g1[i] * a[i];
            // (G2 + G2^T) a, with g2s already holding the sum
            let row2 = &g2s[i * m..(i + 1) * m];
            let g2a: f64 = row2.iter().zip(&a).map(|(g, v)| g * v).sum();
            quad += 0.5 * a[i] * g2a;
            let slab = &g3s[i * m * m..(i + 1) * m * m];
            let c3: f64 = slab.iter().zip(&qa).map(|(g, v)| g * v).sum();
            cubic += a[i] * c3;
            ga[i] = p[s] * (g1[i] + g2a + 3.0 * c3);
        }
        grad_p[s] = lin + quad + cubic;
        mask_adjoint_add(&ga, s, &mut grad_x);
    }
    let mean: f64 = p.iter().zip(&grad_p).map(|(a, b)| a * b).sum();
    let grad_logits = p.iter().zip(&grad_p).map(|(&pi, &g)| pi * (g - mean)).collect();
    Ok(MomentLoss { value, grad_x, grad_logits })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SifOptions {
    pub max_iters: usize,
    /// Stop when the gradient norm falls below this.
    pub tol: f64,
    pub weights: Option<MomentWeights>,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
}

impl Default for SifOptions {
    fn default() -> Self {
        Self { max_iters: 20_000, tol: 1e-10, weights: None, armijo_c: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct SifResult {
    pub x: Signal,
    pub pmf: SegmentPmf,
    pub loss_trace: Vec<f64>,
    /// Set when backtracking shrank the step below `1e-16` without sufficient decrease.
    pub line_search_failed: bool,
}

/// Gradient descent with Armijo backtracking on [`moment_loss`], starting at `(x0, p0)`.
pub fn run_sif(ms: &MeasurementSet, x0: &Signal, p0: &SegmentPmf, opts: SifOptions) -> Result<SifResult> {
    let target = empirical_moments(ms);
    fit_moments(&target, ms.sigma(), x0, p0, opts)
}

/// Same as [`run_sif`] with precomputed target moments.
pub fn fit_moments(target: &MomentSet, sigma: f64, x0: &Signal, p0: &SegmentPmf, opts: SifOptions) -> Result<SifResult> {
    let d = x0.d();
    if p0.d() != d {
        return arg("initial signal and pmf lengths differ");
    }
    let weights = opts.weights.unwrap_or_else(|| MomentWeights::balanced(target.m));
    let mut x = x0.values().to_vec();
    let mut logits = p0.logits().to_vec();
    let eval = |x: &[f64], th: &[f64]| -> Result<MomentLoss> { moment_loss(&Signal::new(x.to_vec())?, th, target, weights, sigma) };

    let mut cur = eval(&x, &logits)?;
    let mut trace = vec![cur.value];
    let mut step = 1.0;
    let mut failed = false;
    for _ in 0..opts.max_iters {
        let gsq: f64 = cur.grad_x.iter().chain(&cur.grad_logits).map(|g| g * g).sum();
        if gsq.sqrt() < opts.tol {
            break;
        }
        step *= 2.0;
        loop {
            let xt: Vec<f64> = x.iter().zip(&cur.grad_x).map(|(v, g)| v - step * g).collect();
            let tt: Vec<f64> = logits.iter().zip(&cur.grad_logits).map(|(v, g)| v - step * g).collect();
            let cand = if xt.iter().chain(&tt).all(|v| v.is_finite()) { Some(eval(&xt, &tt)?) } else { None };
            if let Some(c) = cand.filter(|c| c.value <= cur.value - opts.armijo_c * step * gsq) {
                x = xt;
                logits = tt;
                cur = c;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                failed = true;
                break;
            }
        }
        if failed {
            break;
        }
        trace.push(cur.value);
    }
    Ok(SifResult { x: Signal::new(x)?, pmf: SegmentPmf::from_logits(logits)?, loss_trace: trace, line_search_failed: failed })
}
