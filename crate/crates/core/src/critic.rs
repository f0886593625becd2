//! Three-layer fully connected ReLU critic with spectral normalization.
//!
//! Architecture: `m -> ell -> ell/2 -> 1`. All parameters live in one flat
//! buffer (`theta`) so optimizers, clipping and finite-difference checks can
//! treat them uniformly; [`CriticLayout`] maps the blocks.
//!
//! Gradients are hand-derived for this fixed architecture, including the
//! second-order pass needed by the gradient penalty. By default the spectral
//! norm estimate `sigma = u^T W v` is differentiated with `u, v` held fixed
//! (see [`SnGradient`]); holding `sigma` itself constant lets the raw weights
//! grow without bound during training.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{arg, MsrError, Result};
use crate::linalg::{dot, gemm, norm2};

pub const INIT_STD: f64 = 0.01;

const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CriticLayout {
    pub m: usize,
    pub ell: usize,
    pub half: usize,
}

impl CriticLayout {
    pub fn new(m: usize, ell: usize) -> Result<Self> {
        if ell < 2 || ell % 2 != 0 {
            return arg(format!("critic width ell must be even and >= 2, got {ell}"));
        }
        if m == 0 {
            return arg("critic input length must be >= 1");
        }
        Ok(Self { m, ell, half: ell / 2 })
    }

    pub fn w1(&self) -> std::ops::Range<usize> {
        0..self.ell * self.m
    }
    pub fn b1(&self) -> std::ops::Range<usize> {
        let s = self.w1().end;
        s..s + self.ell
    }
    pub fn w2(&self) -> std::ops::Range<usize> {
        let s = self.b1().end;
        s..s + self.half * self.ell
    }
    pub fn b2(&self) -> std::ops::Range<usize> {
        let s = self.w2().end;
        s..s + self.half
    }
    pub fn w3(&self) -> std::ops::Range<usize> {
        let s = self.b2().end;
        s..s + self.half
    }
    pub fn b3(&self) -> usize {
        self.w3().end
    }
    pub fn len(&self) -> usize {
        self.b3() + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(range, rows, cols)` of the three weight matrices.
    fn weights(&self) -> [(std::ops::Range<usize>, usize, usize); 3] {
        [
            (self.w1(), self.ell, self.m),
            (self.w2(), self.half, self.ell),
            (self.w3(), 1, self.half),
        ]
    }
}

/// How backpropagation treats the spectral-norm estimate `sigma = u^T W v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnGradient {
    /// `sigma` is a constant: `dL/dW = G / sigma`.
    FixedSigma,
    /// `u, v` are constants and `sigma = u^T W v` is differentiated:
    /// `dL/dW = G / sigma - <G, W> / sigma^2 * u v^T`.
    ThroughSigma,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    layout: CriticLayout,
    theta: Vec<f64>,
    /// Left singular vector estimates, one per weight matrix.
    u: [Vec<f64>; 3],
    /// Right singular vector estimates from the last power-iteration step.
    v: [Vec<f64>; 3],
    /// Current largest-singular-value estimates.
    sigma: [f64; 3],
    spectral: bool,
    sn_gradient: SnGradient,
    /// Weights actually used by the network: `W / sigma` (biases copied).
    eff: Vec<f64>,
    generation: u64,
}

/// Cached activations from one batch forward pass.
#[derive(Debug, Clone)]
pub struct CriticTape {
    rows: usize,
    inputs: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    scores: Vec<f64>,
    generation: u64,
}

impl CriticTape {
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
    /// Smallest `|pre-activation|` over both hidden layers; distance to the nearest ReLU kink.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.h1.iter().chain(&self.h2).fold(f64::INFINITY, |a, v| a.min(v.abs()))
    }
}

fn unit_random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let nrm = norm2(&v);
        if nrm > 0.0 {
            return v.into_iter().map(|a| a / nrm).collect();
        }
    }
}

/// Fresh critic: weights `N(0, 0.01^2)`, zero biases, random unit power-iteration vectors.
/// One power-iteration step is applied so the network is ready for a forward pass.
pub fn init_critic<R: Rng + ?Sized>(ell: usize, m: usize, rng: &mut R) -> Result<CriticParams> {
    let layout = CriticLayout::new(m, ell)?;
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut theta = vec![0.0; layout.len()];
    for (range, _, _) in layout.weights() {
        for w in &mut theta[range] {
            *w = normal.sample(rng);
        }
    }
    let u = [
        unit_random(layout.ell, rng),
        unit_random(layout.half, rng),
        unit_random(1, rng),
    ];
    let v = [vec![0.0; layout.m], vec![0.0; layout.ell], vec![0.0; layout.half]];
    let mut params = CriticParams {
        layout,
        eff: theta.clone(),
        theta,
        u,
        v,
        sigma: [1.0; 3],
        spectral: true,
        sn_gradient: SnGradient::ThroughSigma,
        generation: 0,
    };
    params.spectral_normalize();
    Ok(params)
}

impl CriticParams {
    /// A critic with explicit parameters and spectral normalization disabled.
    pub fn from_theta_unnormalized(layout: CriticLayout, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != layout.len() {
            return arg(format!("expected {} parameters, got {}", layout.len(), theta.len()));
        }
        let u = [vec![0.0; layout.ell], vec![0.0; layout.half], vec![1.0]];
        let v = [vec![0.0; layout.m], vec![0.0; layout.ell], vec![0.0; layout.half]];
        Ok(Self {
            layout,
            eff: theta.clone(),
            theta,
            u,
            v,
            sigma: [1.0; 3],
            spectral: false,
            sn_gradient: SnGradient::ThroughSigma,
            generation: 0,
        })
    }

    pub fn layout(&self) -> CriticLayout {
        self.layout
    }
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn effective(&self) -> &[f64] {
        &self.eff
    }
    pub fn sigma_estimates(&self) -> [f64; 3] {
        self.sigma
    }
    pub fn is_spectral(&self) -> bool {
        self.spectral
    }
    pub fn singular_vectors(&self) -> &[Vec<f64>; 3] {
        &self.u
    }
    pub fn sn_gradient(&self) -> SnGradient {
        self.sn_gradient
    }
    pub fn set_sn_gradient(&mut self, mode: SnGradient) {
        self.sn_gradient = mode;
    }

    /// Replaces the raw parameters, keeping the current spectral-norm estimates.
    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.layout.len() {
            return arg("parameter vector has the wrong length");
        }
        self.theta = theta;
        self.refresh_effective();
        Ok(())
    }

    /// Applies `f` to the raw parameters, then rebuilds the effective weights
    /// with the current spectral-norm estimates.
    pub fn update_theta(&mut self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.theta);
        self.refresh_effective();
    }

    fn refresh_effective(&mut self) {
        self.eff.copy_from_slice(&self.theta);
        if self.spectral && self.sn_gradient == SnGradient::ThroughSigma {
            for (k, (range, rows, cols)) in self.layout.weights().into_iter().enumerate() {
                self.sigma[k] = bilinear(&self.theta[range], rows, cols, &self.u[k], &self.v[k]);
            }
        }
        if self.spectral {
            for ((range, _, _), &sigma) in self.layout.weights().into_iter().zip(&self.sigma) {
                let inv = 1.0 / sigma.max(SIGMA_FLOOR);
                for w in &mut self.eff[range] {
                    *w *= inv;
                }
            }
        }
        self.generation += 1;
    }

    /// One power-iteration step per weight matrix, then rescales the effective weights.
    pub fn spectral_normalize(&mut self) {
        self.spectral_normalize_iters(1);
    }

    pub fn spectral_normalize_iters(&mut self, iters: usize) {
        if !self.spectral {
            return;
        }
        for (k, (range, rows, cols)) in self.layout.weights().into_iter().enumerate() {
            let w = &self.theta[range];
            let u = &mut self.u[k];
            let v = &mut self.v[k];
            let mut wv = vec![0.0; rows];
            for _ in 0..iters.max(1) {
                // v = W^T u / |W^T u|
                v.iter_mut().for_each(|a| *a = 0.0);
                for (i, &ui) in u.iter().enumerate() {
                    for (vj, &wij) in v.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                        *vj += wij * ui;
                    }
                }
                let nv = norm2(&v);
                if nv == 0.0 {
                    break;
                }
                v.iter_mut().for_each(|a| *a /= nv);
                // u = W v / |W v|
                for (i, o) in wv.iter_mut().enumerate() {
                    *o = dot(&w[i * cols..(i + 1) * cols], &v);
                }
                let nu = norm2(&wv);
                if nu == 0.0 {
                    break;
                }
                for (ui, &a) in u.iter_mut().zip(&wv) {
                    *ui = a / nu;
                }
            }
            self.sigma[k] = bilinear(w, rows, cols, u, v);
        }
        self.refresh_effective();
    }

    fn check_tape(&self, tape: &CriticTape) -> Result<()> {
        if tape.generation != self.generation {
            return Err(MsrError::Contract(
                "critic tape was recorded with different parameters".into(),
            ));
        }
        Ok(())
    }

    /// Forward pass over a row-major `rows x m` batch.
    pub fn forward_batch(&self, inputs: &[f64]) -> Result<CriticTape> {
        let CriticLayout { m, ell, half } = self.layout;
        if inputs.is_empty() || inputs.len() % m != 0 {
            return arg(format!("critic input must be rows x {m}, got {} values", inputs.len()));
        }
        let rows = inputs.len() / m;
        let e = &self.eff;
        let mut h1 = vec![0.0; rows * ell];
        for row in h1.chunks_exact_mut(ell) {
            row.copy_from_slice(&e[self.layout.b1()]);
        }
        gemm(rows, m, ell, 1.0, inputs, false, &e[self.layout.w1()], true, 1.0, &mut h1);
        let a1: Vec<f64> = h1.iter().map(|&v| v.max(0.0)).collect();
        let mut h2 = vec![0.0; rows * half];
        for row in h2.chunks_exact_mut(half) {
            row.copy_from_slice(&e[self.layout.b2()]);
        }
        gemm(rows, ell, half, 1.0, &a1, false, &e[self.layout.w2()], true, 1.0, &mut h2);
        let w3 = &e[self.layout.w3()];
        let b3 = e[self.layout.b3()];
        let scores = h2
            .chunks_exact(half)
            .map(|r| b3 + r.iter().zip(w3).map(|(&h, &w)| h.max(0.0) * w).sum::<f64>())
            .collect();
        Ok(CriticTape { rows, inputs: inputs.to_vec(), h1, h2, scores, generation: self.generation })
    }

    /// Score of a single input.
    pub fn forward(&self, xi: &[f64]) -> Result<(f64, CriticTape)> {
        if xi.len() != self.layout.m {
            return arg(format!("critic expects input length {}, got {}", self.layout.m, xi.len()));
        }
        let tape = self.forward_batch(xi)?;
        Ok((tape.scores[0], tape))
    }

    /// Gradient of `sum_r upstream[r] * D(input_r)` with respect to the raw parameters.
    pub fn grad_params(&self, tape: &CriticTape, upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_tape(tape)?;
        if upstream.len() != tape.rows {
            return arg("one upstream value per tape row is required");
        }
        let l = self.layout;
        let (m, ell, half, rows) = (l.m, l.ell, l.half, tape.rows);
        let e = &self.eff;
        let w3 = &e[l.w3()];
        let mut grad = vec![0.0; l.len()];

        let a1: Vec<f64> = tape.h1.iter().map(|&v| v.max(0.0)).collect();
        let mut delta2 = vec![0.0; rows * half];
        {
            let gw3 = &mut grad[l.w3()];
            for r in 0..rows {
                let up = upstream[r];
                let h2 = &tape.h2[r * half..(r + 1) * half];
                for k in 0..half {
                    if h2[k] > 0.0 {
                        gw3[k] += up * h2[k];
                        delta2[r * half + k] = up * w3[k];
                    }
                }
            }
        }
        grad[l.b3()] = upstream.iter().sum();
        gemm(half, rows, ell, 1.0, &delta2, true, &a1, false, 0.0, &mut grad[l.w2()]);
        sum_rows_into(&delta2, half, &mut grad[l.b2()]);

        let mut delta1 = vec![0.0; rows * ell];
        gemm(rows, half, ell, 1.0, &delta2, false, &e[l.w2()], false, 0.0, &mut delta1);
        for (d, &h) in delta1.iter_mut().zip(&tape.h1) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        gemm(ell, rows, m, 1.0, &delta1, true, &tape.inputs, false, 0.0, &mut grad[l.w1()]);
        sum_rows_into(&delta1, ell, &mut grad[l.b1()]);

        self.effective_to_raw(&mut grad);
        Ok(grad)
    }

    /// Input gradients `grad_xi D(input_r)`, row-major `rows x m`.
    pub fn grad_input(&self, tape: &CriticTape) -> Result<Vec<f64>> {
        self.check_tape(tape)?;
        let chain = self.input_gradient_chain(tape);
        Ok(chain.g)
    }

    fn input_gradient_chain(&self, tape: &CriticTape) -> InputGradChain {
        let l = self.layout;
        let (m, ell, half, rows) = (l.m, l.ell, l.half, tape.rows);
        let e = &self.eff;
        let w3 = &e[l.w3()];
        let mut v2 = vec![0.0; rows * half];
        for (r, row) in v2.chunks_exact_mut(half).enumerate() {
            let h2 = &tape.h2[r * half..(r + 1) * half];
            for k in 0..half {
                if h2[k] > 0.0 {
                    row[k] = w3[k];
                }
            }
        }
        let mut v1 = vec![0.0; rows * ell];
        gemm(rows, half, ell, 1.0, &v2, false, &e[l.w2()], false, 0.0, &mut v1);
        for (v, &h) in v1.iter_mut().zip(&tape.h1) {
            if h <= 0.0 {
                *v = 0.0;
            }
        }
        let mut g = vec![0.0; rows * m];
        gemm(rows, ell, m, 1.0, &v1, false, &e[l.w1()], false, 0.0, &mut g);
        InputGradChain { v2, v1, g }
    }

    /// `GP = sum_r (|grad_xi D(input_r)| - 1)^2` and its exact parameter gradient
    /// (double backprop; ReLU second derivative is zero almost everywhere).
    pub fn gradient_penalty(&self, inputs: &[f64]) -> Result<(f64, Vec<f64>)> {
        let tape = self.forward_batch(inputs)?;
        let l = self.layout;
        let (m, ell, half, rows) = (l.m, l.ell, l.half, tape.rows);
        let e = &self.eff;
        let InputGradChain { v2, v1, g } = self.input_gradient_chain(&tape);

        let mut value = 0.0;
        // c_r = d GP / d g_r
        let mut c = vec![0.0; rows * m];
        for (g_row, c_row) in g.chunks_exact(m).zip(c.chunks_exact_mut(m)) {
            let nrm = norm2(g_row);
            value += (nrm - 1.0).powi(2);
            if nrm > 0.0 {
                let scale = 2.0 * (nrm - 1.0) / nrm;
                for (cv, &gv) in c_row.iter_mut().zip(g_row) {
                    *cv = scale * gv;
                }
            }
        }

        let mut grad = vec![0.0; l.len()];
        // g = v1 W1  =>  dW1 = v1^T c
        gemm(ell, rows, m, 1.0, &v1, true, &c, false, 0.0, &mut grad[l.w1()]);
        // dv1 = c W1^T, masked by layer-1 activity
        let mut du1 = vec![0.0; rows * ell];
        gemm(rows, m, ell, 1.0, &c, false, &e[l.w1()], true, 0.0, &mut du1);
        for (d, &h) in du1.iter_mut().zip(&tape.h1) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        // u1 = v2 W2  =>  dW2 = v2^T du1
        gemm(half, rows, ell, 1.0, &v2, true, &du1, false, 0.0, &mut grad[l.w2()]);
        // dv2 = du1 W2^T, v2 = r2 * w3  =>  dw3 = sum_r r2 * dv2
        let mut dv2 = vec![0.0; rows * half];
        gemm(rows, ell, half, 1.0, &du1, false, &e[l.w2()], true, 0.0, &mut dv2);
        {
            let gw3 = &mut grad[l.w3()];
            for (r, row) in dv2.chunks_exact(half).enumerate() {
                let h2 = &tape.h2[r * half..(r + 1) * half];
                for k in 0..half {
                    if h2[k] > 0.0 {
                        gw3[k] += row[k];
                    }
                }
            }
        }
        self.effective_to_raw(&mut grad);
        Ok((value, grad))
    }

    /// Chain rule through `W_eff = W / sigma`.
    fn effective_to_raw(&self, grad: &mut [f64]) {
        if !self.spectral {
            return;
        }
        for (k, (range, _, cols)) in self.layout.weights().into_iter().enumerate() {
            let sigma = self.sigma[k].max(SIGMA_FLOOR);
            let g = &mut grad[range.clone()];
            let radial = match self.sn_gradient {
                SnGradient::FixedSigma => 0.0,
                SnGradient::ThroughSigma => dot(g, &self.theta[range]) / (sigma * sigma),
            };
            let (u, v) = (&self.u[k], &self.v[k]);
            for (idx, gv) in g.iter_mut().enumerate() {
                *gv = *gv / sigma - radial * u[idx / cols] * v[idx % cols];
            }
        }
    }

    /// Named raw tensors for checkpointing: `(name, rows, cols, values)`.
    pub fn tensors(&self) -> Vec<(&'static str, usize, usize, Vec<f64>)> {
        let l = self.layout;
        vec![
            ("w1", l.ell, l.m, self.theta[l.w1()].to_vec()),
            ("b1", 1, l.ell, self.theta[l.b1()].to_vec()),
            ("w2", l.half, l.ell, self.theta[l.w2()].to_vec()),
            ("b2", 1, l.half, self.theta[l.b2()].to_vec()),
            ("w3", 1, l.half, self.theta[l.w3()].to_vec()),
            ("b3", 1, 1, vec![self.theta[l.b3()]]),
            ("u1", 1, l.ell, self.u[0].clone()),
            ("u2", 1, l.half, self.u[1].clone()),
            ("u3", 1, 1, self.u[2].clone()),
        ]
    }
}

/// `u^T W v` for row-major `W`.
fn bilinear(w: &[f64], rows: usize, cols: usize, u: &[f64], v: &[f64]) -> f64 {
    (0..rows).map(|i| u[i] * dot(&w[i * cols..(i + 1) * cols], v)).sum()
}

struct InputGradChain {
    v2: Vec<f64>,
    v1: Vec<f64>,
    g: Vec<f64>,
}

fn sum_rows_into(mat: &[f64], cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for row in mat.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let nrm = norm2(grads);
    if nrm > max_norm {
        let scale = max_norm / nrm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    nrm
}
