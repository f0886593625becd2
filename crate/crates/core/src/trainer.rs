//! Adversarial training loop.
//!
//! Each outer iteration runs `n_disc` critic ascent steps on
//! `sum_b D(real_b) - D(sim_b) - lambda * GP(int_b)` followed by one generator
//! step on `(x, p)`. The generator loss sums the critic score over every
//! cyclic shift of the current signal, weighted by Gumbel-Softmax relaxed
//! one-hot rows, which makes it differentiable in the PMF logits.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::critic::{clip_grad_norm, init_critic, CriticParams};
use crate::error::{arg, MsrError, Result};
use crate::forward::{mask_adjoint_add, mask_into, sample_location, MeasurementSet, SegmentPmf, Signal};
use crate::linalg::{gemm, norm2};
use crate::metrics::{rel_error, tv_distance};
use crate::optim::{SgdMomentum, StepDecay};
use crate::relaxation::{gumbel_sample, gumbel_softmax_frozen, gumbel_softmax_vjp_add};
use crate::rng::{StreamRng, Streams};

/// How the segment PMF is treated during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmfMode {
    /// `p` is learned together with `x`.
    Joint,
    /// `p` is fixed to a supplied ground truth.
    KnownPmf,
    /// `p` is fixed to the uniform distribution.
    FixedUniformPmf,
}

impl PmfMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PmfMode::Joint => "joint",
            PmfMode::KnownPmf => "known-pmf",
            PmfMode::FixedUniformPmf => "fixed-uniform-pmf",
        }
    }
}

impl std::str::FromStr for PmfMode {
    type Err = MsrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(PmfMode::Joint),
            "known-pmf" => Ok(PmfMode::KnownPmf),
            "fixed-uniform-pmf" => Ok(PmfMode::FixedUniformPmf),
            other => arg(format!("unknown pmf mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub batch_size: usize,
    pub n_disc: usize,
    pub lambda: f64,
    pub tau: f64,
    pub lr_critic: f64,
    pub lr_x: f64,
    pub lr_p: f64,
    pub decay_factor: f64,
    pub decay_every_critic: usize,
    pub decay_every_x: usize,
    pub decay_every_p: usize,
    /// Joint mode: iterations during which `p` is held at its initial value.
    /// Its decay schedule starts counting once it is released.
    pub p_warmup: usize,
    pub momentum: f64,
    pub clip_norm: f64,
    pub total_iters: usize,
    pub ell: usize,
    pub eval_every: usize,
    pub x_init_std: f64,
    pub mode: PmfMode,
    /// Overrides the noise level read from the measurement metadata.
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            n_disc: 4,
            lambda: 10.0,
            tau: 0.5,
            lr_critic: 1e-3,
            lr_x: 1e-5,
            lr_p: 1e-3,
            decay_factor: 0.9,
            decay_every_critic: 2000,
            decay_every_x: 2000,
            decay_every_p: 3000,
            p_warmup: 0,
            momentum: 0.9,
            clip_norm: 1.0,
            total_iters: 30_000,
            ell: 100,
            eval_every: 500,
            x_init_std: 1.0,
            mode: PmfMode::Joint,
            sigma: None,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_disc == 0 {
            return arg("batch size and n_disc must be >= 1");
        }
        for (name, v) in [("lr_critic", self.lr_critic), ("lr_x", self.lr_x), ("lr_p", self.lr_p), ("tau", self.tau)] {
            if !(v > 0.0) || !v.is_finite() {
                return arg(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return arg("decay factor must lie in (0, 1]");
        }
        if !(self.lambda >= 0.0) || !(self.clip_norm > 0.0) || !(self.momentum >= 0.0) {
            return arg("lambda and momentum must be >= 0 and clip_norm > 0");
        }
        if self.sigma.is_some_and(|s| !(s >= 0.0)) {
            return arg("sigma override must be >= 0");
        }
        Ok(())
    }
}

/// Generator loss and its gradients for frozen Gumbel and measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorEval {
    pub loss: f64,
    pub grad_x: Vec<f64>,
    pub grad_logits: Vec<f64>,
    /// Relaxed assignments used, row-major `B x d`.
    pub q: Vec<f64>,
}

/// `L_G = -sum_b sum_s q_{s,b} D(M_s x + eps_b)` with `q_b = softmax((g_b + log p) / tau)`.
///
/// `gumbel` is `B x d`, `eps` is `B x m`. Every batch element is scored at all
/// `d` shifts with its noise vector shared across shifts.
pub fn generator_eval(critic: &CriticParams, x: &[f64], pmf: &SegmentPmf, gumbel: &[f64], tau: f64, eps: &[f64]) -> Result<GeneratorEval> {
    let d = x.len();
    let l = critic.layout();
    let (m, ell, half) = (l.m, l.ell, l.half);
    if pmf.d() != d || m > d {
        return arg("generator inputs have inconsistent lengths");
    }
    if gumbel.len() % d != 0 || eps.len() % m != 0 || gumbel.len() / d != eps.len() / m {
        return arg("gumbel noise must be B x d and eps B x m");
    }
    let batch = eps.len() / m;
    let sa = gumbel_softmax_frozen(pmf, tau, gumbel.to_vec())?;
    let q = sa.q;
    let e = critic.effective();
    let (w1, b1, w2, b2, w3, b3) = (&e[l.w1()], &e[l.b1()], &e[l.w2()], &e[l.b2()], &e[l.w3()], e[l.b3()]);

    // Layer-1 pre-activation splits into a shift part and a noise part.
    let mut segs = vec![0.0; d * m];
    for (s, row) in segs.chunks_exact_mut(m).enumerate() {
        mask_into(x, s, row);
    }
    let mut shift_pre = vec![0.0; d * ell];
    gemm(d, m, ell, 1.0, &segs, false, w1, true, 0.0, &mut shift_pre);
    let mut noise_pre = vec![0.0; batch * ell];
    gemm(batch, m, ell, 1.0, eps, false, w1, true, 0.0, &mut noise_pre);

    let mut loss = 0.0;
    let mut grad_q = vec![0.0; batch * d];
    // sum_b of the masked layer-1 backprop signal, per shift
    let mut v1_by_shift = vec![0.0; d * ell];

    const CHUNK: usize = 8;
    let mut h1 = Vec::new();
    let mut h2 = Vec::new();
    let mut v2 = Vec::new();
    let mut v1 = Vec::new();
    for b0 in (0..batch).step_by(CHUNK) {
        let nb = CHUNK.min(batch - b0);
        let rows = nb * d;
        h1.resize(rows * ell, 0.0);
        for bi in 0..nb {
            let np = &noise_pre[(b0 + bi) * ell..(b0 + bi + 1) * ell];
            for s in 0..d {
                let sp = &shift_pre[s * ell..(s + 1) * ell];
                let out = &mut h1[(bi * d + s) * ell..(bi * d + s + 1) * ell];
                for k in 0..ell {
                    out[k] = sp[k] + np[k] + b1[k];
                }
            }
        }
        let a1: Vec<f64> = h1.iter().map(|&v| v.max(0.0)).collect();
        h2.resize(rows * half, 0.0);
        for row in h2.chunks_exact_mut(half) {
            row.copy_from_slice(b2);
        }
        gemm(rows, ell, half, 1.0, &a1, false, w2, true, 1.0, &mut h2);

        v2.resize(rows * half, 0.0);
        for r in 0..rows {
            let (bi, s) = (r / d, r % d);
            let b = b0 + bi;
            let hr = &h2[r * half..(r + 1) * half];
            let score = b3 + hr.iter().zip(w3).map(|(&h, &w)| h.max(0.0) * w).sum::<f64>();
            let qv = q[b * d + s];
            loss -= qv * score;
            grad_q[b * d + s] = -score;
            let vr = &mut v2[r * half..(r + 1) * half];
            for k in 0..half {
                vr[k] = if hr[k] > 0.0 { -qv * w3[k] } else { 0.0 };
            }
        }
        v1.resize(rows * ell, 0.0);
        gemm(rows, half, ell, 1.0, &v2, false, w2, false, 0.0, &mut v1);
        for r in 0..rows {
            let s = r % d;
            let acc = &mut v1_by_shift[s * ell..(s + 1) * ell];
            for k in 0..ell {
                if h1[r * ell + k] > 0.0 {
                    acc[k] += v1[r * ell + k];
                }
            }
        }
    }

    let mut grad_seg = vec![0.0; d * m];
    gemm(d, ell, m, 1.0, &v1_by_shift, false, w1, false, 0.0, &mut grad_seg);
    let mut grad_x = vec![0.0; d];
    for (s, g) in grad_seg.chunks_exact(m).enumerate() {
        mask_adjoint_add(g, s, &mut grad_x);
    }
    let mut grad_logits = vec![0.0; d];
    for b in 0..batch {
        gumbel_softmax_vjp_add(&q[b * d..(b + 1) * d], &grad_q[b * d..(b + 1) * d], tau, &mut grad_logits);
    }
    Ok(GeneratorEval { loss, grad_x, grad_logits, q })
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub critic_loss: f64,
    pub gen_loss: f64,
    pub rel_error: Option<f64>,
    pub tv: Option<f64>,
}

/// Ground truth used only to annotate the history.
#[derive(Debug, Clone, Copy)]
pub struct Diagnostics<'a> {
    pub x_true: &'a Signal,
    pub p_true: &'a [f64],
}

struct TrainerRngs {
    batch: StreamRng,
    sim_locations: StreamRng,
    sim_noise: StreamRng,
    interp: StreamRng,
    gumbel: StreamRng,
    gen_noise: StreamRng,
}

pub struct TrainerState {
    config: GanConfig,
    x: Vec<f64>,
    pmf: SegmentPmf,
    critic: CriticParams,
    opt_critic: SgdMomentum,
    opt_x: SgdMomentum,
    lr_p: f64,
    iteration: usize,
    sigma: f64,
    m: usize,
    rngs: TrainerRngs,
    order: Vec<usize>,
    cursor: usize,
    last_clipped_norm: f64,
}

/// Random `x ~ N(0, x_init_std^2)`, uniform (or supplied) `p`, fresh critic.
/// `known_pmf` is required in [`PmfMode::KnownPmf`] and ignored otherwise.
pub fn init_trainer(config: &GanConfig, ms: &MeasurementSet, known_pmf: Option<&SegmentPmf>) -> Result<TrainerState> {
    config.validate()?;
    let d = ms.d();
    let streams = Streams::new(config.seed);
    let mut init_rng = streams.stream("init-x");
    let x: Vec<f64> = (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut init_rng);
            config.x_init_std * z
        })
        .collect();
    let pmf = match config.mode {
        PmfMode::KnownPmf => {
            let p = known_pmf.ok_or_else(|| MsrError::Argument("known-pmf mode needs the true pmf".into()))?;
            if p.d() != d {
                return arg("known pmf length does not match the measurements");
            }
            p.clone()
        }
        PmfMode::Joint | PmfMode::FixedUniformPmf => SegmentPmf::uniform(d)?,
    };
    let critic = init_critic(config.ell, ms.m(), &mut streams.stream("init-critic"))?;
    let opt_critic = SgdMomentum::new(critic.layout().len(), config.lr_critic, config.momentum);
    let opt_x = SgdMomentum::new(d, config.lr_x, config.momentum);
    let rngs = TrainerRngs {
        batch: streams.stream("real-batch"),
        sim_locations: streams.stream("sim-locations"),
        sim_noise: streams.stream("sim-noise"),
        interp: streams.stream("interpolation"),
        gumbel: streams.stream("gumbel"),
        gen_noise: streams.stream("generator-noise"),
    };
    Ok(TrainerState {
        config: config.clone(),
        x,
        pmf,
        critic,
        opt_critic,
        opt_x,
        lr_p: config.lr_p,
        iteration: 0,
        sigma: config.sigma.unwrap_or(ms.sigma()),
        m: ms.m(),
        rngs,
        order: (0..ms.n()).collect(),
        cursor: ms.n(),
        last_clipped_norm: 0.0,
    })
}

impl TrainerState {
    pub fn x(&self) -> &[f64] {
        &self.x
    }
    /// Direct access to the signal estimate, e.g. for warm starts.
    pub fn x_mut(&mut self) -> &mut [f64] {
        &mut self.x
    }
    pub fn pmf(&self) -> &SegmentPmf {
        &self.pmf
    }
    pub fn critic(&self) -> &CriticParams {
        &self.critic
    }
    pub fn iteration(&self) -> usize {
        self.iteration
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn config(&self) -> &GanConfig {
        &self.config
    }
    /// `(critic, x, p)` learning rates currently in effect.
    pub fn learning_rates(&self) -> (f64, f64, f64) {
        (self.opt_critic.lr, self.opt_x.lr, self.lr_p)
    }
    /// Norm of the last critic update direction after clipping.
    pub fn last_clipped_norm(&self) -> f64 {
        self.last_clipped_norm
    }

    /// Next batch of real rows, drawn without replacement within an epoch.
    pub fn next_real_batch(&mut self, ms: &MeasurementSet) -> Vec<f64> {
        let (b, m) = (self.config.batch_size, ms.m());
        let mut out = Vec::with_capacity(b * m);
        for _ in 0..b {
            if self.cursor >= self.order.len() {
                self.order.shuffle(&mut self.rngs.batch);
                self.cursor = 0;
            }
            out.extend_from_slice(ms.row(self.order[self.cursor]));
            self.cursor += 1;
        }
        out
    }

    /// Hard-sampled measurements from the current `(x, p)`.
    pub fn simulate_batch(&mut self, batch: usize) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; batch * m];
        for row in out.chunks_exact_mut(m) {
            let s = sample_location(&self.pmf, &mut self.rngs.sim_locations);
            mask_into(&self.x, s, row);
            if self.sigma > 0.0 {
                for v in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut self.rngs.sim_noise);
                    *v += self.sigma * z;
                }
            }
        }
        out
    }

    /// One critic update; returns the minimized value `-(sum D(real) - D(sim)) + lambda * GP`.
    pub fn critic_step(&mut self, real_batch: &[f64]) -> Result<f64> {
        let m = self.m;
        if real_batch.is_empty() || real_batch.len() % m != 0 {
            return arg("real batch must be B x m");
        }
        let batch = real_batch.len() / m;
        let sim = self.simulate_batch(batch);
        let mut interp = vec![0.0; batch * m];
        for b in 0..batch {
            let alpha: f64 = self.rngs.interp.random();
            for k in 0..m {
                let i = b * m + k;
                interp[i] = alpha * real_batch[i] + (1.0 - alpha) * sim[i];
            }
        }
        let mut stacked = real_batch.to_vec();
        stacked.extend_from_slice(&sim);
        let tape = self.critic.forward_batch(&stacked)?;
        let upstream: Vec<f64> = (0..2 * batch).map(|r| if r < batch { -1.0 } else { 1.0 }).collect();
        let mut grad = self.critic.grad_params(&tape, &upstream)?;
        let wdist: f64 = tape.scores()[..batch].iter().sum::<f64>() - tape.scores()[batch..].iter().sum::<f64>();
        let lambda = self.config.lambda;
        let mut loss = -wdist;
        if lambda > 0.0 {
            let (gp, gp_grad) = self.critic.gradient_penalty(&interp)?;
            loss += lambda * gp;
            for (g, h) in grad.iter_mut().zip(&gp_grad) {
                *g += lambda * h;
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(MsrError::NonFinite { step: "critic", iteration: self.iteration, detail: format!("loss {loss}") });
        }
        clip_grad_norm(&mut grad, self.config.clip_norm);
        self.last_clipped_norm = norm2(&grad);
        let opt = &mut self.opt_critic;
        self.critic.update_theta(|theta| opt.step(theta, &grad));
        self.critic.spectral_normalize();
        Ok(loss)
    }

    /// One generator update of `x` (and of `p` in joint mode); returns `L_G`.
    pub fn generator_step(&mut self) -> Result<f64> {
        let (batch, d, m) = (self.config.batch_size, self.x.len(), self.m);
        let gumbel: Vec<f64> = (0..batch * d).map(|_| gumbel_sample(&mut self.rngs.gumbel)).collect();
        let eps: Vec<f64> = (0..batch * m)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rngs.gen_noise);
                self.sigma * z
            })
            .collect();
        let eval = generator_eval(&self.critic, &self.x, &self.pmf, &gumbel, self.config.tau, &eps)?;
        if !eval.loss.is_finite() || eval.grad_x.iter().chain(&eval.grad_logits).any(|g| !g.is_finite()) {
            return Err(MsrError::NonFinite { step: "generator", iteration: self.iteration, detail: format!("loss {}", eval.loss) });
        }
        self.opt_x.step(&mut self.x, &eval.grad_x);
        if self.config.mode == PmfMode::Joint && self.iteration >= self.config.p_warmup {
            let nrm = norm2(&eval.grad_logits);
            if nrm > 0.0 {
                let step = self.lr_p / nrm;
                for (t, g) in self.pmf.logits_mut().iter_mut().zip(&eval.grad_logits) {
                    *t -= step * g;
                }
            }
        }
        Ok(eval.loss)
    }

    /// Marks one outer iteration as complete and applies the step decays.
    pub fn lr_schedule(&mut self) {
        self.iteration += 1;
        let c = &self.config;
        let it = self.iteration;
        self.opt_critic.lr = StepDecay { factor: c.decay_factor, every: c.decay_every_critic }.apply(self.opt_critic.lr, it);
        self.opt_x.lr = StepDecay { factor: c.decay_factor, every: c.decay_every_x }.apply(self.opt_x.lr, it);
        if it > c.p_warmup {
            self.lr_p = StepDecay { factor: c.decay_factor, every: c.decay_every_p }.apply(self.lr_p, it - c.p_warmup);
        }
    }

    /// `n_disc` critic steps, one generator step, schedule update.
    /// Returns `(mean critic loss, generator loss)`.
    pub fn outer_iteration(&mut self, ms: &MeasurementSet) -> Result<(f64, f64)> {
        let mut critic_loss = 0.0;
        for _ in 0..self.config.n_disc {
            let real = self.next_real_batch(ms);
            critic_loss += self.critic_step(&real)?;
        }
        critic_loss /= self.config.n_disc as f64;
        let gen_loss = self.generator_step()?;
        self.lr_schedule();
        Ok((critic_loss, gen_loss))
    }

    fn history_row(&self, critic_loss: f64, gen_loss: f64, diag: Option<Diagnostics<'_>>) -> Result<HistoryRow> {
        let (rel, tv) = match diag {
            Some(g) => {
                let x_hat = Signal::new(self.x.clone())?;
                (Some(rel_error(g.x_true, &x_hat)?.0), Some(tv_distance(g.p_true, &self.pmf.probs())?.0))
            }
            None => (None, None),
        };
        Ok(HistoryRow { iter: self.iteration, critic_loss, gen_loss, rel_error: rel, tv })
    }
}

pub struct TrainOutput {
    pub x_hat: Signal,
    pub p_hat: SegmentPmf,
    pub history: Vec<HistoryRow>,
    pub critic: CriticParams,
}

/// Runs `total_iters` outer iterations, recording history every `eval_every`
/// iterations and after the last one.
pub fn train(config: &GanConfig, ms: &MeasurementSet, known_pmf: Option<&SegmentPmf>, diag: Option<Diagnostics<'_>>) -> Result<TrainOutput> {
    let mut state = init_trainer(config, ms, known_pmf)?;
    let mut history = Vec::new();
    for _ in 0..config.total_iters {
        let (cl, gl) = state.outer_iteration(ms)?;
        let it = state.iteration;
        if (config.eval_every > 0 && it % config.eval_every == 0) || it == config.total_iters {
            history.push(state.history_row(cl, gl, diag)?);
        }
    }
    Ok(TrainOutput {
        x_hat: Signal::new(state.x)?,
        p_hat: state.pmf,
        history,
        critic: state.critic,
    })
}
