//! Built-in ground-truth signals and segment PMFs.

use std::f64::consts::PI;
use std::path::Path;

use msr_core::io::read_vector_dat;
use msr_core::rng::Streams;
use msr_core::{SegmentPmf, Signal};
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::config::ExperimentConfig;
use crate::error::{bad, Result};

/// One period of `sin` over `d` samples.
pub fn sine(d: usize) -> Vec<f64> {
    (0..d).map(|n| (2.0 * PI * n as f64 / d as f64).sin()).collect()
}

/// Symmetric ramp from 0 up to 1 at `d/2` and back.
pub fn triangle(d: usize) -> Vec<f64> {
    (0..d).map(|n| 1.0 - (2.0 * n as f64 / d as f64 - 1.0).abs()).collect()
}

/// i.i.d. standard normal entries scaled to unit max-abs.
pub fn random_gaussian(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = Streams::new(seed).stream("signal");
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let peak = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    v.into_iter().map(|x| x / peak).collect()
}

/// Mixture of two wrapped discrete Gaussians on `{0..d-1}`. Means and standard
/// deviations are fractions of `d`; `weight` goes to the first mode.
pub fn bimodal(d: usize, modes: [(f64, f64); 2], weight: f64) -> Vec<f64> {
    let df = d as f64;
    let mut p = vec![0.0; d];
    for ((mu, sd), w) in modes.into_iter().zip([weight, 1.0 - weight]) {
        let (mu, sd) = (mu * df, sd * df);
        let comp: Vec<f64> = (0..d)
            .map(|s| {
                (-3i32..=3)
                    .map(|k| {
                        let z = (s as f64 - mu + k as f64 * df) / sd;
                        (-0.5 * z * z).exp()
                    })
                    .sum()
            })
            .collect();
        let t: f64 = comp.iter().sum();
        for (a, c) in p.iter_mut().zip(comp) {
            *a += w * c / t;
        }
    }
    p
}

pub fn random_dirichlet(d: usize, alpha: f64, seed: u64) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).or_else(|_| bad(format!("invalid dirichlet alpha {alpha}")))?;
    let mut rng = Streams::new(seed).stream("pmf");
    let g: Vec<f64> = (0..d).map(|_| gamma.sample(&mut rng)).collect();
    let t: f64 = g.iter().sum();
    Ok(g.into_iter().map(|v| v / t).collect())
}

fn from_file(path: &str, d: usize, what: &str) -> Result<Vec<f64>> {
    let v = read_vector_dat(Path::new(path))?;
    if v.len() != d {
        return bad(format!("{what} file {path} has {} entries, expected d={d}", v.len()));
    }
    Ok(v)
}

pub fn build_signal(cfg: &ExperimentConfig) -> Result<Signal> {
    let d = cfg.d;
    let v = match cfg.signal.as_str() {
        "sine" => sine(d),
        "triangle" => triangle(d),
        "random-gaussian" => random_gaussian(d, cfg.data_seed),
        s => match s.strip_prefix("from-file:") {
            Some(p) => from_file(p, d, "signal")?,
            None => return bad(format!("unknown signal '{s}' (sine | triangle | random-gaussian | from-file:<path>)")),
        },
    };
    Ok(Signal::new(v)?)
}

pub fn build_pmf(cfg: &ExperimentConfig) -> Result<SegmentPmf> {
    let d = cfg.d;
    let spec = cfg.pmf.as_str();
    let probs = if spec == "uniform" {
        return Ok(SegmentPmf::uniform(d)?);
    } else if spec == "bimodal" {
        bimodal(d, cfg.pmf_modes, cfg.pmf_weight)
    } else if spec == "random-dirichlet" {
        random_dirichlet(d, cfg.pmf_alpha, cfg.data_seed)?
    } else if let Some(rest) = spec.strip_prefix("one-hot") {
        let s = match rest.strip_prefix(':') {
            Some(k) => k.parse().or_else(|_| bad(format!("bad one-hot index '{k}'")))?,
            None if rest.is_empty() => 0,
            None => return bad(format!("unknown pmf '{spec}'")),
        };
        return Ok(SegmentPmf::one_hot(d, s)?);
    } else if let Some(p) = spec.strip_prefix("from-file:") {
        from_file(p, d, "pmf")?
    } else {
        return bad(format!("unknown pmf '{spec}' (uniform | one-hot[:s] | random-dirichlet | bimodal | from-file:<path>)"));
    };
    Ok(SegmentPmf::from_probs(&probs)?)
}
