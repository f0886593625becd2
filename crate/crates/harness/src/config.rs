//! Experiment configuration: flat `key = value` text with optional `[section]`
//! headers. Sections only group keys; every key is global and maps to the CLI
//! flag of the same name (`lr_x` <-> `--lr-x`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use msr_core::em::EmOptions;
use msr_core::io::fmt_f64;
use msr_core::moments::{MomentWeights, SifOptions};
use msr_core::trainer::{GanConfig, PmfMode};

use crate::error::{bad, file_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Gan,
    Em,
    Sif,
}

impl Solver {
    pub fn as_str(&self) -> &'static str {
        match self {
            Solver::Gan => "gan",
            Solver::Em => "em",
            Solver::Sif => "sif",
        }
    }
}

impl FromStr for Solver {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gan" => Ok(Solver::Gan),
            "em" => Ok(Solver::Em),
            "sif" => Ok(Solver::Sif),
            _ => Err(format!("unknown solver '{s}' (gan | em | sif)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    M,
    Snr,
}

/// Every accepted key with its default. Keys without a default are optional.
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("signal", Some("sine")),
    ("d", Some("64")),
    ("pmf", Some("uniform")),
    ("pmf_alpha", Some("1")),
    ("pmf_mu1", Some("0.25")),
    ("pmf_sd1", Some("0.08")),
    ("pmf_mu2", Some("0.7")),
    ("pmf_sd2", Some("0.06")),
    ("pmf_weight", Some("0.6")),
    ("m", Some("24")),
    ("N", Some("50000")),
    ("snr", Some("inf")),
    ("sigma", None),
    ("data", None),
    ("data_seed", None),
    ("x_true", None),
    ("p_true", None),
    ("solver", Some("gan")),
    ("n_inits", Some("10")),
    ("seed", Some("0")),
    ("out", Some("msr-out")),
    ("threads", Some("1")),
    ("checkpoint", Some("true")),
    ("mode", Some("joint")),
    ("batch_size", Some("200")),
    ("n_disc", Some("4")),
    ("lambda", Some("10")),
    ("tau", Some("0.5")),
    ("lr_critic", None),
    ("lr_x", None),
    ("lr_p", None),
    ("decay_factor", Some("0.9")),
    ("decay_every_critic", Some("2000")),
    ("decay_every_x", Some("2000")),
    ("decay_every_p", Some("3000")),
    ("p_warmup", Some("0")),
    ("momentum", Some("0.9")),
    ("clip_norm", Some("1")),
    ("iters", Some("30000")),
    ("ell", Some("100")),
    ("eval_every", Some("500")),
    ("x_init_std", Some("1")),
    ("em_max_iters", Some("5000")),
    ("em_tol", Some("1e-8")),
    ("sif_max_iters", Some("20000")),
    ("sif_tol", Some("1e-10")),
    ("sif_w1", None),
    ("sif_w2", None),
    ("sif_w3", None),
    ("sweep", Some("m")),
    ("sweep_m", Some("15,20,25,30,35,40,45,50,55")),
    ("solvers", Some("gan,em,sif")),
    ("run_dir", None),
];

/// Parses config text into a key map. Later duplicates are an error.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() || (l.starts_with('[') && l.ends_with(']')) {
            continue;
        }
        let Some((k, v)) = l.split_once('=') else {
            return bad(format!("config line {}: expected 'key = value'", i + 1));
        };
        let k = k.trim().to_string();
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return bad(format!("config line {}: duplicate key '{k}'", i + 1));
        }
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_config_text(&std::fs::read_to_string(path).map_err(file_err(path))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub signal: String,
    pub d: usize,
    pub pmf: String,
    pub pmf_alpha: f64,
    /// Bimodal mixture: means and widths as fractions of `d`, weight of mode 1.
    pub pmf_modes: [(f64, f64); 2],
    pub pmf_weight: f64,
    pub m: usize,
    pub n: usize,
    pub snr: Vec<f64>,
    pub sigma: Option<f64>,
    pub data: Option<PathBuf>,
    pub data_seed: u64,
    pub x_true: Option<PathBuf>,
    pub p_true: Option<PathBuf>,
    pub solver: Solver,
    pub n_inits: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub checkpoint: bool,
    /// Seed of `gan` is replaced per initialization.
    pub gan: GanConfig,
    pub em: EmOptions,
    pub sif: SifOptions,
    pub sweep: SweepAxis,
    pub sweep_m: Vec<usize>,
    pub solvers: Vec<Solver>,
    pub run_dir: Option<PathBuf>,
}

fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = map.get(key).map(String::as_str).unwrap_or("");
    v.parse().or_else(|_| bad(format!("invalid value for '{key}': {v:?}")))
}

fn get_opt<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    if map.contains_key(key) {
        get(map, key).map(Some)
    } else {
        Ok(None)
    }
}

fn get_list<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Vec<T>> {
    let v = map.get(key).map(String::as_str).unwrap_or("");
    v.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().or_else(|_| bad(format!("invalid entry in '{key}': {t:?}"))))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// All three moment weights or none (then the solver balances them by `m`).
fn sif_weights(map: &BTreeMap<String, String>) -> Result<Option<MomentWeights>> {
    match (get_opt(map, "sif_w1")?, get_opt(map, "sif_w2")?, get_opt(map, "sif_w3")?) {
        (Some(w1), Some(w2), Some(w3)) => Ok(Some(MomentWeights { w1, w2, w3 })),
        (None, None, None) => Ok(None),
        _ => bad("set all of sif_w1, sif_w2, sif_w3 or none"),
    }
}

impl ExperimentConfig {
    /// Builds a config from user keys (file merged with CLI overrides).
    pub fn from_map(user: &BTreeMap<String, String>) -> Result<Self> {
        for k in user.keys() {
            if !KEYS.iter().any(|(name, _)| name == k) {
                return bad(format!("unknown config key '{k}'"));
            }
        }
        let mut map: BTreeMap<String, String> =
            KEYS.iter().filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string()))).collect();
        map.extend(user.iter().map(|(k, v)| (k.clone(), v.clone())));

        let defaults = GanConfig::default();
        let mode: PmfMode = get(&map, "mode")?;
        let gan = GanConfig {
            batch_size: get(&map, "batch_size")?,
            n_disc: get(&map, "n_disc")?,
            lambda: get(&map, "lambda")?,
            tau: get(&map, "tau")?,
            lr_critic: get_opt(&map, "lr_critic")?.unwrap_or(defaults.lr_critic),
            lr_x: get_opt(&map, "lr_x")?.unwrap_or(defaults.lr_x),
            lr_p: get_opt(&map, "lr_p")?.unwrap_or(defaults.lr_p),
            decay_factor: get(&map, "decay_factor")?,
            decay_every_critic: get(&map, "decay_every_critic")?,
            decay_every_x: get(&map, "decay_every_x")?,
            decay_every_p: get(&map, "decay_every_p")?,
            p_warmup: get(&map, "p_warmup")?,
            momentum: get(&map, "momentum")?,
            clip_norm: get(&map, "clip_norm")?,
            total_iters: get(&map, "iters")?,
            ell: get(&map, "ell")?,
            eval_every: get(&map, "eval_every")?,
            x_init_std: get(&map, "x_init_std")?,
            mode,
            sigma: None,
            seed: 0,
        };
        gan.validate()?;
        let seed = get(&map, "seed")?;
        let sweep = match map["sweep"].as_str() {
            "m" => SweepAxis::M,
            "snr" => SweepAxis::Snr,
            other => return bad(format!("sweep must be 'm' or 'snr', got '{other}'")),
        };
        let cfg = Self {
            signal: map["signal"].clone(),
            d: get(&map, "d")?,
            pmf: map["pmf"].clone(),
            pmf_alpha: get(&map, "pmf_alpha")?,
            pmf_modes: [(get(&map, "pmf_mu1")?, get(&map, "pmf_sd1")?), (get(&map, "pmf_mu2")?, get(&map, "pmf_sd2")?)],
            pmf_weight: get(&map, "pmf_weight")?,
            m: get(&map, "m")?,
            n: get(&map, "N")?,
            snr: get_list(&map, "snr")?,
            sigma: get_opt(&map, "sigma")?,
            data: get_opt(&map, "data")?,
            data_seed: get_opt(&map, "data_seed")?.unwrap_or(seed),
            x_true: get_opt(&map, "x_true")?,
            p_true: get_opt(&map, "p_true")?,
            solver: get(&map, "solver")?,
            n_inits: get(&map, "n_inits")?,
            seed,
            out: get(&map, "out")?,
            threads: get(&map, "threads")?,
            checkpoint: get(&map, "checkpoint")?,
            gan,
            em: EmOptions { max_iters: get(&map, "em_max_iters")?, tol: get(&map, "em_tol")? },
            sif: SifOptions { max_iters: get(&map, "sif_max_iters")?, tol: get(&map, "sif_tol")?, weights: sif_weights(&map)?, ..Default::default() },
            sweep,
            sweep_m: get_list(&map, "sweep_m")?,
            solvers: get_list(&map, "solvers")?,
            run_dir: get_opt(&map, "run_dir")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > self.d {
            return bad(format!("need d >= m >= 1, got d={} m={}", self.d, self.m));
        }
        if self.n == 0 || self.n_inits == 0 || self.threads == 0 {
            return bad("N, n_inits and threads must be >= 1");
        }
        if self.snr.is_empty() || self.snr.iter().any(|s| !(*s > 0.0)) {
            return bad("snr must be a non-empty list of positive values");
        }
        if self.sigma.is_some_and(|s| !(s >= 0.0) || !s.is_finite()) {
            return bad("sigma must be finite and >= 0");
        }
        for p in [&self.data, &self.x_true, &self.p_true].into_iter().flatten() {
            if !p.exists() {
                return bad(format!("file not found: {}", p.display()));
            }
        }
        for spec in [&self.signal, &self.pmf] {
            if let Some(p) = spec.strip_prefix("from-file:") {
                if !Path::new(p).exists() {
                    return bad(format!("file not found: {p}"));
                }
            }
        }
        Ok(())
    }

    /// Canonical `key=value` snapshot; feeding it back reproduces this config.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let g = &self.gan;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut v: Vec<(&str, Option<String>)> = vec![
            ("signal", Some(self.signal.clone())),
            ("d", Some(self.d.to_string())),
            ("pmf", Some(self.pmf.clone())),
            ("pmf_alpha", Some(fmt_f64(self.pmf_alpha))),
            ("pmf_mu1", Some(fmt_f64(self.pmf_modes[0].0))),
            ("pmf_sd1", Some(fmt_f64(self.pmf_modes[0].1))),
            ("pmf_mu2", Some(fmt_f64(self.pmf_modes[1].0))),
            ("pmf_sd2", Some(fmt_f64(self.pmf_modes[1].1))),
            ("pmf_weight", Some(fmt_f64(self.pmf_weight))),
            ("m", Some(self.m.to_string())),
            ("N", Some(self.n.to_string())),
            ("snr", Some(self.snr.iter().map(|&s| fmt_f64(s)).collect::<Vec<_>>().join(","))),
            ("sigma", self.sigma.map(fmt_f64)),
            ("data", path(&self.data)),
            ("data_seed", Some(self.data_seed.to_string())),
            ("x_true", path(&self.x_true)),
            ("p_true", path(&self.p_true)),
            ("solver", Some(self.solver.as_str().into())),
            ("n_inits", Some(self.n_inits.to_string())),
            ("seed", Some(self.seed.to_string())),
            ("checkpoint", Some(self.checkpoint.to_string())),
            ("mode", Some(g.mode.as_str().into())),
            ("batch_size", Some(g.batch_size.to_string())),
            ("n_disc", Some(g.n_disc.to_string())),
            ("lambda", Some(fmt_f64(g.lambda))),
            ("tau", Some(fmt_f64(g.tau))),
            ("lr_critic", Some(fmt_f64(g.lr_critic))),
            ("lr_x", Some(fmt_f64(g.lr_x))),
            ("lr_p", Some(fmt_f64(g.lr_p))),
            ("decay_factor", Some(fmt_f64(g.decay_factor))),
            ("decay_every_critic", Some(g.decay_every_critic.to_string())),
            ("decay_every_x", Some(g.decay_every_x.to_string())),
            ("decay_every_p", Some(g.decay_every_p.to_string())),
            ("p_warmup", Some(g.p_warmup.to_string())),
            ("momentum", Some(fmt_f64(g.momentum))),
            ("clip_norm", Some(fmt_f64(g.clip_norm))),
            ("iters", Some(g.total_iters.to_string())),
            ("ell", Some(g.ell.to_string())),
            ("eval_every", Some(g.eval_every.to_string())),
            ("x_init_std", Some(fmt_f64(g.x_init_std))),
            ("em_max_iters", Some(self.em.max_iters.to_string())),
            ("em_tol", Some(fmt_f64(self.em.tol))),
            ("sif_max_iters", Some(self.sif.max_iters.to_string())),
            ("sif_tol", Some(fmt_f64(self.sif.tol))),
            ("sif_w1", self.sif.weights.map(|w| fmt_f64(w.w1))),
            ("sif_w2", self.sif.weights.map(|w| fmt_f64(w.w2))),
            ("sif_w3", self.sif.weights.map(|w| fmt_f64(w.w3))),
        ];
        v.push(("sweep", Some(if self.sweep == SweepAxis::M { "m" } else { "snr" }.into())));
        v.push(("sweep_m", Some(join(&self.sweep_m))));
        v.push(("solvers", Some(self.solvers.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","))));
        v.into_iter().filter_map(|(k, val)| val.map(|val| (k.to_string(), val))).collect()
    }
}
