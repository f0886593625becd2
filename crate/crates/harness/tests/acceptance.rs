//! Acceptance suite. Prints one `PASS` / `FAIL` / `SKIP` line per criterion and
//! exits non-zero if any criterion that ran failed.
//!
//! Criteria 1-4 train the adversarial solver for tens of thousands of
//! iterations on ten seeds each (hours of CPU time) and only run with
//! `MSR_ACCEPTANCE_FULL=1`. `MSR_THREADS` sets the worker count for them.
//! `MSR_ACCEPTANCE_ONLY=1,2` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::Instant;

use msr_core::critic::{init_critic, CriticParams};
use msr_core::em::{e_step, m_step, run_em, EmOptions, Posterior};
use msr_core::forward::{mask, mask_adjoint, sample_location, synthesize, MeasurementSet};
use msr_core::metrics::{median, rel_error, success_rate, tv_distance, SUCCESS_THRESHOLD};
use msr_core::moments::{analytic_moments, empirical_moments, moment_loss, MomentSet, MomentWeights};
use msr_core::relaxation::{gumbel_sample, gumbel_softmax, gumbel_softmax_backward, gumbel_softmax_frozen};
use msr_core::trainer::generator_eval;
use msr_core::{SegmentPmf, Signal};
use msr_harness::config::ExperimentConfig;
use msr_harness::run::{run_inits, synthesize_problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Option<Outcome> {
    Some(Outcome { pass, detail: detail.into() })
}

fn full_run() -> bool {
    std::env::var("MSR_ACCEPTANCE_FULL").is_ok_and(|v| v == "1")
}

fn threads() -> String {
    std::env::var("MSR_THREADS").unwrap_or_else(|_| "1".into())
}

fn config(pairs: &[(&str, &str)]) -> ExperimentConfig {
    let mut map: BTreeMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    map.insert("threads".into(), threads());
    map.insert("n_inits".into(), "10".into());
    ExperimentConfig::from_map(&map).expect("valid acceptance config")
}

fn gan_rows(pairs: &[(&str, &str)]) -> Vec<(f64, f64)> {
    let cfg = config(pairs);
    let prob = synthesize_problem(&cfg, cfg.m, cfg.snr[0]).expect("data");
    let rows = run_inits(&cfg, cfg.solver, &prob, None).expect("runs");
    for r in &rows {
        eprintln!("    init {} seed {}: rel_error={:.5} tv={:.5} ({:.0}s)", r.init, r.seed, r.rel_error, r.tv, r.wallclock_s);
    }
    rows.iter().map(|r| (r.rel_error, r.tv)).collect()
}

const SINE_BASE: &[(&str, &str)] =
    &[("signal", "sine"), ("d", "64"), ("m", "24"), ("N", "50000"), ("ell", "100"), ("pmf", "bimodal"), ("snr", "inf"), ("iters", "30000")];

fn with(base: &[(&'static str, &'static str)], extra: &[(&'static str, &'static str)]) -> Vec<(&'static str, &'static str)> {
    let mut v = base.to_vec();
    v.retain(|(k, _)| !extra.iter().any(|(e, _)| e == k));
    v.extend_from_slice(extra);
    v
}

fn criterion_1() -> Option<Outcome> {
    if !full_run() {
        return None;
    }
    let rows = gan_rows(&with(SINE_BASE, &[("mode", "known-pmf")]));
    let ok = rows.iter().filter(|r| r.0 <= 0.02).count();
    let rels: Vec<f64> = rows.iter().map(|r| r.0).collect();
    outcome(ok >= 7, format!("{ok}/10 runs with rel-error <= 0.02 (need 7), median {:.4}", median(&rels).unwrap_or(f64::NAN)))
}

fn criterion_2() -> Option<Outcome> {
    if !full_run() {
        return None;
    }
    let rows = gan_rows(&with(SINE_BASE, &[("mode", "joint")]));
    let ok = rows.iter().filter(|r| r.0 <= 0.03 && r.1 <= 0.08).count();
    outcome(ok >= 6, format!("{ok}/10 runs with rel-error <= 0.03 and TV <= 0.08 (need 6)"))
}

fn criterion_3() -> Option<Outcome> {
    if !full_run() {
        return None;
    }
    let base = with(SINE_BASE, &[("snr", "1"), ("iters", "50000")]);
    let med = |mode| median(&gan_rows(&with(&base, &[("mode", mode)])).iter().map(|r| r.0).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    let (uniform, joint) = (med("fixed-uniform-pmf"), med("joint"));
    outcome(uniform > joint, format!("median rel-error fixed-uniform {uniform:.4} vs joint {joint:.4}"))
}

fn criterion_4() -> Option<Outcome> {
    if !full_run() {
        return None;
    }
    let base = [
        ("signal", "random-gaussian"),
        ("d", "60"),
        ("m", "15"),
        ("N", "20000"),
        ("sigma", "0.01"),
        ("pmf", "bimodal"),
        ("ell", "100"),
        ("iters", "30000"),
        ("mode", "joint"),
    ];
    let rate = |solver| {
        let rels: Vec<f64> = gan_rows(&with(&base, &[("solver", solver)])).iter().map(|r| r.0).collect();
        success_rate(&rels, SUCCESS_THRESHOLD).unwrap()
    };
    let (gan, em) = (rate("gan"), rate("em"));
    outcome(gan >= 0.7 && gan > em && em <= 0.5, format!("success rate gan {gan:.1}, em {em:.1}"))
}

fn criterion_5() -> Option<Outcome> {
    let x = Signal::new(msr_harness::signals::random_gaussian(32, 5)).unwrap();
    let p = SegmentPmf::uniform(32).unwrap();
    let sigma = msr_core::forward::sigma_from_snr(&x, &p, 32, 100.0).unwrap();
    let ms = synthesize(&x, &p, 32, sigma, 5000, 11).unwrap();
    let (mut good, mut monotone) = (0, 0);
    for seed in 0..10 {
        let x0 = msr_harness::run::initial_signal(32, seed, 1.0).unwrap();
        let res = run_em(&ms, &x0, &p.probs(), sigma, EmOptions::default()).unwrap();
        if rel_error(&x, &res.x).unwrap().0 < 0.02 {
            good += 1;
        }
        if res.ll_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9) {
            monotone += 1;
        }
    }
    outcome(good >= 9 && monotone == 10, format!("{good}/10 inits below 0.02, {monotone}/10 monotone likelihood traces"))
}

// ---- finite-difference oracle ----

fn central_diff(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut p = at.to_vec();
    (0..at.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let nrm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = nrm(a).max(nrm(b));
    if scale == 0.0 {
        nrm(&diff)
    } else {
        nrm(&diff) / scale
    }
}

const KINK: f64 = 1e-3;
const INSTANCES: usize = 50;

fn random_critic(rng: &mut ChaCha8Rng, m: usize, ell: usize) -> CriticParams {
    let mut c = init_critic(ell, m, rng).unwrap();
    let theta: Vec<f64> = (0..c.layout().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.set_theta(theta).unwrap();
    c.spectral_normalize_iters(30);
    c
}

fn critic_and_inputs(rng: &mut ChaCha8Rng, m: usize, ell: usize, rows: usize) -> (CriticParams, Vec<f64>) {
    loop {
        let c = random_critic(rng, m, ell);
        let inputs: Vec<f64> = (0..rows * m).map(|_| rng.random_range(-2.0..2.0)).collect();
        if c.forward_batch(&inputs).unwrap().min_abs_preactivation() > KINK {
            return (c, inputs);
        }
    }
}

/// Range of critic scores; a constant critic has identically zero gradients.
fn spread(v: &[f64]) -> f64 {
    v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - v.iter().fold(f64::INFINITY, |a, &b| a.min(b))
}

fn with_theta(c: &CriticParams, theta: &[f64]) -> CriticParams {
    let mut cc = c.clone();
    cc.set_theta(theta.to_vec()).unwrap();
    cc
}

fn criterion_6() -> Option<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|w| w.0 == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };

    for _ in 0..INSTANCES {
        let (c, inputs) = critic_and_inputs(&mut rng, 4, 6, 3);
        let up: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let an = c.grad_params(&c.forward_batch(&inputs).unwrap(), &up).unwrap();
        let fd = central_diff(
            |t| with_theta(&c, t).forward_batch(&inputs).unwrap().scores().iter().zip(&up).map(|(a, b)| a * b).sum(),
            c.theta(),
            1e-6,
        );
        record("grad_params", rel_err(&an, &fd));

        let (c, xi) = critic_and_inputs(&mut rng, 5, 6, 1);
        let an = c.grad_input(&c.forward(&xi).unwrap().1).unwrap();
        let fd = central_diff(|v| c.forward(v).unwrap().0, &xi, 1e-6);
        record("grad_input", rel_err(&an, &fd));

        let (c, inputs) = critic_and_inputs(&mut rng, 4, 6, 3);
        let an = c.gradient_penalty(&inputs).unwrap().1;
        let fd = central_diff(|t| with_theta(&c, t).gradient_penalty(&inputs).unwrap().0, c.theta(), 1e-6);
        record("gradient_penalty", rel_err(&an, &fd));

        let (d, tau) = (rng.random_range(2..9), rng.random_range(0.2..2.0));
        let logits: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let row = |t: &[f64], g: &[f64]| gumbel_softmax_frozen(&SegmentPmf::from_logits(t.to_vec()).unwrap(), tau, g.to_vec()).unwrap().q;
        // saturated rows have Jacobians below finite-difference resolution
        let g = loop {
            let g: Vec<f64> = (0..d).map(|_| gumbel_sample(&mut rng)).collect();
            if row(&logits, &g).iter().all(|&q| q > KINK) {
                break g;
            }
        };
        let row = |t: &[f64]| row(t, &g);
        let jac = gumbel_softmax_backward(&row(&logits), tau);
        let mut fd_jac = vec![0.0; d * d];
        for s in 0..d {
            let col = central_diff(|t| row(t)[s], &logits, 1e-6);
            fd_jac[s * d..(s + 1) * d].copy_from_slice(&col);
        }
        record("gumbel_softmax_backward", rel_err(&jac, &fd_jac));

        let (d, m) = (rng.random_range(3..8), 3);
        let m = m.min(d);
        let sigma = rng.random_range(0.0..0.5);
        let xt = Signal::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let pt = SegmentPmf::from_logits((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap().probs();
        let target = analytic_moments(&xt, &pt, m, sigma).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let th: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = MomentWeights { w1: 1.0, w2: 0.5, w3: 0.25 };
        let loss = |x: &[f64], th: &[f64]| moment_loss(&Signal::new(x.to_vec()).unwrap(), th, &target, w, sigma).unwrap();
        let l = loss(&x, &th);
        record("moment_loss (x)", rel_err(&l.grad_x, &central_diff(|v| loss(v, &th).value, &x, 1e-5)));
        record("moment_loss (logits)", rel_err(&l.grad_logits, &central_diff(|t| loss(&x, t).value, &th, 1e-5)));
    }

    let mut done = 0;
    while done < INSTANCES {
        let (d, m, batch, tau) = (rng.random_range(4..9), 3, 3, rng.random_range(0.3..1.0));
        let c = random_critic(&mut rng, m, 6);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let logits: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gumbel: Vec<f64> = (0..batch * d).map(|_| gumbel_sample(&mut rng)).collect();
        let eps: Vec<f64> = (0..batch * m).map(|_| rng.random_range(-0.3..0.3)).collect();
        let scored: Vec<f64> =
            (0..batch).flat_map(|b| (0..d).flat_map(move |s| (0..m).map(move |n| (b, s, n)))).map(|(b, s, n)| x[(n + s) % d] + eps[b * m + n]).collect();
        let tape = c.forward_batch(&scored).unwrap();
        if tape.min_abs_preactivation() <= KINK || spread(tape.scores()) <= KINK {
            continue;
        }
        let pmf = SegmentPmf::from_logits(logits.clone()).unwrap();
        let ev = generator_eval(&c, &x, &pmf, &gumbel, tau, &eps).unwrap();
        let fx = central_diff(|v| generator_eval(&c, v, &pmf, &gumbel, tau, &eps).unwrap().loss, &x, 1e-6);
        record("generator (x)", rel_err(&ev.grad_x, &fx));
        let fl = central_diff(
            |t| generator_eval(&c, &x, &SegmentPmf::from_logits(t.to_vec()).unwrap(), &gumbel, tau, &eps).unwrap().loss,
            &logits,
            1e-6,
        );
        record("generator (logits)", rel_err(&ev.grad_logits, &fl));
        done += 1;
    }

    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(max < 1e-4 && secs < 60.0, format!("{INSTANCES} instances each, worst rel err: {detail}; {secs:.1}s"))
}

// ---- brute-force oracles ----

/// Posterior and log-likelihood by direct evaluation of every Gaussian density.
fn brute_e_step(ms: &MeasurementSet, x: &Signal, p: &[f64], sigma: f64) -> (Vec<f64>, f64) {
    let (n, m, d) = (ms.n(), ms.m(), ms.d());
    let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-(m as f64) / 2.0);
    let mut w = vec![0.0; n * d];
    let mut ll = 0.0;
    for j in 0..n {
        let dens: Vec<f64> = (0..d)
            .map(|s| {
                let seg = mask(x, s, m).unwrap();
                let dist: f64 = ms.row(j).iter().zip(&seg).map(|(a, b)| (a - b) * (a - b)).sum();
                p[s] * norm * (-dist / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = dens.iter().sum();
        ll += total.ln();
        for s in 0..d {
            w[j * d + s] = dens[s] / total;
        }
    }
    (w, ll)
}

/// Weighted least squares `min_x sum_js w_js |xi_j - M_s x|^2` via dense normal equations.
fn brute_m_step(ms: &MeasurementSet, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n, m, d) = (ms.n(), ms.m(), ms.d());
    let mut a = nalgebra::DMatrix::<f64>::zeros(d, d);
    let mut b = nalgebra::DVector::<f64>::zeros(d);
    for j in 0..n {
        for s in 0..d {
            let mut ms_mat = nalgebra::DMatrix::<f64>::zeros(m, d);
            for k in 0..m {
                ms_mat[(k, (k + s) % d)] = 1.0;
            }
            let xi = nalgebra::DVector::from_row_slice(ms.row(j));
            a += w[j * d + s] * ms_mat.transpose() * &ms_mat;
            b += w[j * d + s] * ms_mat.transpose() * xi;
        }
    }
    let x = a.lu().solve(&b).expect("covered positions");
    let p = (0..d).map(|s| (0..n).map(|j| w[j * d + s]).sum::<f64>() / n as f64).collect();
    (x.iter().copied().collect(), p)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn moment_error(a: &MomentSet, b: &MomentSet) -> f64 {
    max_abs_diff(&a.m1, &b.m1).max(max_abs_diff(&a.m2, &b.m2)).max(max_abs_diff(&a.m3, &b.m3))
}

fn criterion_7() -> Option<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let (mut e_err, mut ll_err, mut mx_err, mut mp_err, mut count) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0);
    for d in 1..=6 {
        for m in 1..=d {
            for _ in 0..3 {
                let x = Signal::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let p = SegmentPmf::from_logits((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let sigma = rng.random_range(0.5..2.0);
                let ms = synthesize(&x, &p, m, sigma, 5, rng.random()).unwrap();
                let x_cur = Signal::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let (post, ll) = e_step(&ms, &x_cur, &p.probs(), sigma).unwrap();
                let (w, ll_ref) = brute_e_step(&ms, &x_cur, &p.probs(), sigma);
                e_err = e_err.max(max_abs_diff(&post.w, &w));
                ll_err = ll_err.max((ll - ll_ref).abs() / ll_ref.abs().max(1.0));
                let (xn, pn) = m_step(&ms, &Posterior { w: w.clone(), n: ms.n(), d }, &x_cur).unwrap();
                let (x_ref, p_ref) = brute_m_step(&ms, &w);
                mx_err = mx_err.max(max_abs_diff(xn.values(), &x_ref));
                mp_err = mp_err.max(max_abs_diff(&pn, &p_ref));
                count += 1;
            }
        }
    }
    let oracle_ok = e_err.max(ll_err).max(mx_err).max(mp_err) <= 1e-10;

    let mut adjoint_ok = true;
    for d in 1..=8 {
        for m in 1..=d {
            for s in 0..d {
                for i in 0..d {
                    let mut e = vec![0.0; d];
                    e[i] = 1.0;
                    let fwd = mask(&Signal::new(e).unwrap(), s, m).unwrap();
                    for k in 0..m {
                        let mut f = vec![0.0; m];
                        f[k] = 1.0;
                        adjoint_ok &= fwd[k] == mask_adjoint(&f, s, d).unwrap()[i];
                    }
                }
            }
        }
    }

    let x = Signal::new((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let p = SegmentPmf::from_logits((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let exact = analytic_moments(&x, &p.probs(), 4, 0.5).unwrap();
    let err_small = moment_error(&empirical_moments(&synthesize(&x, &p, 4, 0.5, 10_000, 71).unwrap()), &exact);
    let err_large = moment_error(&empirical_moments(&synthesize(&x, &p, 4, 0.5, 1_000_000, 72).unwrap()), &exact);
    let mc_ok = err_large < 4.0 * err_small / 10.0;

    outcome(
        oracle_ok && adjoint_ok && mc_ok,
        format!(
            "{count} EM instances: E-step {e_err:.1e}, log-lik {ll_err:.1e}, M-step x {mx_err:.1e}, p {mp_err:.1e}; \
             adjoint exhaustive d<=8 {}; moments err N=1e4 {err_small:.2e}, N=1e6 {err_large:.2e}",
            if adjoint_ok { "ok" } else { "MISMATCH" }
        ),
    )
}

fn criterion_8() -> Option<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let draws = 100_000;
    let mut worst = (0.0f64, 0.0f64);
    for d in [2, 5, 9, 16] {
        let p = SegmentPmf::from_logits((0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let probs = p.probs();
        let mut counts = vec![0.0; d];
        for _ in 0..draws {
            counts[sample_location(&p, &mut rng)] += 1.0;
        }
        let emp: Vec<f64> = counts.iter().map(|c| c / draws as f64).collect();
        worst.0 = worst.0.max(plain_tv(&probs, &emp));

        let q = gumbel_softmax(&p, 0.5, draws, &mut rng).unwrap();
        let mut counts = vec![0.0; d];
        for b in 0..draws {
            let row = q.row(b);
            counts[(0..d).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap()] += 1.0;
        }
        let emp: Vec<f64> = counts.iter().map(|c| c / draws as f64).collect();
        worst.1 = worst.1.max(plain_tv(&probs, &emp));
    }
    outcome(worst.0 <= 0.02 && worst.1 <= 0.02, format!("worst TV gumbel-max {:.4}, gumbel-softmax argmax {:.4}", worst.0, worst.1))
}

// unaligned: sampling must match p itself, not a shift of it
fn plain_tv(p: &[f64], q: &[f64]) -> f64 {
    let tv = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    debug_assert!(tv_distance(p, q).unwrap().0 <= tv + 1e-12);
    tv
}

fn msr(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_msr")).args(args).env_remove("MSR_THREADS").output().map(|o| o.status.success()).unwrap_or(false)
}

fn criterion_9() -> Option<Outcome> {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let dir = |name: &str| root.join(name).display().to_string();
    let gan = |out: &str| {
        msr(&[
            "solve", "--signal", "sine", "--d", "16", "--m", "8", "--N", "2000", "--snr", "inf", "--pmf", "bimodal", "--solver", "gan",
            "--iters", "60", "--eval-every", "20", "--ell", "8", "--batch-size", "20", "--n-inits", "2", "--seed", "7", "--threads", "2",
            "--out", out,
        ])
    };
    let em = |out: &str| {
        msr(&["solve", "--signal", "triangle", "--d", "12", "--m", "6", "--N", "500", "--snr", "10", "--solver", "em", "--n-inits", "2", "--seed", "3", "--out", out])
    };
    if !(gan(&dir("gan_a")) && gan(&dir("gan_b")) && em(&dir("em_a")) && em(&dir("em_b"))) {
        return outcome(false, "a CLI run failed");
    }
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for (a, b) in [("gan_a", "gan_b"), ("em_a", "em_b")] {
        for init in ["init_000", "init_001"] {
            for file in ["history.csv", "x_hat.dat", "p_hat.dat"] {
                let pa = root.join(a).join(init).join(file);
                if !pa.exists() && file == "history.csv" && a.starts_with("em") {
                    continue;
                }
                let same = std::fs::read(&pa).ok().zip(std::fs::read(root.join(b).join(init).join(file)).ok()).is_some_and(|(x, y)| x == y);
                compared += 1;
                if !same {
                    mismatched.push(format!("{a}/{init}/{file}"));
                }
            }
        }
    }
    outcome(mismatched.is_empty(), format!("{compared} files byte-identical across repeated runs{}", if mismatched.is_empty() { String::new() } else { format!("; differ: {mismatched:?}") }))
}

fn main() {
    // `cargo test -- --list` and filters pass through here; only run on a plain invocation
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Option<Outcome>); 9] = [
        ("1 known-pmf reconstruction", criterion_1),
        ("2 joint recovery", criterion_2),
        ("3 ablation ordering", criterion_3),
        ("4 segment-length advantage", criterion_4),
        ("5 EM sanity", criterion_5),
        ("6 gradient correctness", criterion_6),
        ("7 oracle equivalence", criterion_7),
        ("8 sampling distributions", criterion_8),
        ("9 CLI determinism", criterion_9),
    ];
    let only: Option<Vec<String>> =
        std::env::var("MSR_ACCEPTANCE_ONLY").ok().map(|v| v.split(',').map(|t| t.trim().to_string()).collect());
    let mut failed = 0;
    for (name, run) in criteria {
        let id = name.split(' ').next().unwrap_or("");
        if only.as_ref().is_some_and(|o| !o.iter().any(|t| t == id)) {
            continue;
        }
        let start = Instant::now();
        match run() {
            Some(o) => {
                if !o.pass {
                    failed += 1;
                }
                println!("{} [{name}] {} ({:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail, start.elapsed().as_secs_f64());
            }
            None => println!("SKIP [{name}] long training run, set MSR_ACCEPTANCE_FULL=1"),
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
