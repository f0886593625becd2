//! The four CLI verbs as library functions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use msr_core::em::run_em;
use msr_core::forward::{realized_clean_variance, sigma_from_snr, synthesize};
use msr_core::io::{
    fmt_f64, format_history, format_kv, read_measurements, read_vector_dat, write_critic_checkpoint, write_measurements,
    write_vector_dat,
};
use msr_core::metrics::{evaluate, median, snr_of, success_rate, EvalReport, SUCCESS_THRESHOLD};
use msr_core::moments::run_sif;
use msr_core::rng::Streams;
use msr_core::trainer::{train, Diagnostics, HistoryRow, PmfMode};
use msr_core::{MeasurementSet, MsrError, SegmentPmf, Signal};
use rand_distr::{Distribution, StandardNormal};

use crate::config::{ExperimentConfig, Solver, SweepAxis};
use crate::error::{bad, file_err, HarnessError, Result};
use crate::signals::{build_pmf, build_signal};

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(file_err(path))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(file_err(path))
}

/// Measurements plus whatever ground truth is available.
pub struct Problem {
    pub ms: MeasurementSet,
    pub x_true: Option<Signal>,
    pub p_true: Option<SegmentPmf>,
}

/// Synthesizes measurements from the config's signal, PMF and noise settings.
/// `sigma` wins over the first `snr` entry when both are given.
pub fn synthesize_problem(cfg: &ExperimentConfig, m: usize, snr: f64) -> Result<Problem> {
    let x = build_signal(cfg)?;
    let p = build_pmf(cfg)?;
    let sigma = match cfg.sigma {
        Some(s) => s,
        None => sigma_from_snr(&x, &p, m, snr)?,
    };
    let ms = synthesize(&x, &p, m, sigma, cfg.n, cfg.data_seed)?;
    Ok(Problem { ms, x_true: Some(x), p_true: Some(p) })
}

/// Reads `data` (with optional truth files) or synthesizes from the config.
pub fn load_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let Some(path) = &cfg.data else {
        return synthesize_problem(cfg, cfg.m, cfg.snr[0]);
    };
    let ms = read_measurements(path)?;
    let x_true = cfg.x_true.as_deref().map(read_vector_dat).transpose()?.map(Signal::new).transpose()?;
    let p_true = cfg.p_true.as_deref().map(read_vector_dat).transpose()?.map(|p| SegmentPmf::from_probs(&p)).transpose()?;
    for len in [x_true.as_ref().map(Signal::d), p_true.as_ref().map(SegmentPmf::d)].into_iter().flatten() {
        if len != ms.d() {
            return bad(format!("ground truth has length {len}, measurements have d={}", ms.d()));
        }
    }
    Ok(Problem { ms, x_true, p_true })
}

pub struct GenerateReport {
    pub realized_snr: f64,
    pub sigma: f64,
    pub measurements: PathBuf,
}

/// Writes `measurements.txt` (+ `.loc`), `x_true.dat` and `p_true.dat` to `cfg.out`.
/// The reported SNR uses the variance of the segments actually drawn.
pub fn generate(cfg: &ExperimentConfig) -> Result<GenerateReport> {
    let prob = synthesize_problem(cfg, cfg.m, cfg.snr[0])?;
    let (x, p) = (prob.x_true.as_ref().unwrap(), prob.p_true.as_ref().unwrap());
    mkdir(&cfg.out)?;
    let path = cfg.out.join("measurements.txt");
    write_measurements(&path, &prob.ms)?;
    write_vector_dat(&cfg.out.join("x_true.dat"), x.values())?;
    write_vector_dat(&cfg.out.join("p_true.dat"), &p.probs())?;
    let sigma = prob.ms.sigma();
    let realized_snr = match prob.ms.diagnostic_locations() {
        Some(locs) if sigma > 0.0 => realized_clean_variance(x, locs, prob.ms.m())? / (sigma * sigma),
        _ => snr_of(&prob.ms, x, p)?,
    };
    Ok(GenerateReport { realized_snr, sigma: prob.ms.sigma(), measurements: path })
}

/// Shared initial signal for initialization `seed`: the same draw the
/// adversarial trainer makes, so every solver starts from the same `x`.
pub fn initial_signal(d: usize, seed: u64, std: f64) -> Result<Signal> {
    let mut rng = Streams::new(seed).stream("init-x");
    let x = (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        })
        .collect();
    Ok(Signal::new(x)?)
}

pub struct InitOutput {
    pub x_hat: Signal,
    pub p_hat: SegmentPmf,
    pub history: Option<Vec<HistoryRow>>,
    pub critic: Option<msr_core::critic::CriticParams>,
}

/// Runs `solver` once from initialization seed `seed`.
pub fn run_solver(cfg: &ExperimentConfig, solver: Solver, prob: &Problem, seed: u64) -> Result<InitOutput> {
    let d = prob.ms.d();
    match solver {
        Solver::Gan => {
            let gan = msr_core::trainer::GanConfig { seed, ..cfg.gan.clone() };
            if gan.mode == PmfMode::KnownPmf && prob.p_true.is_none() {
                return bad("known-pmf mode needs a ground-truth pmf (p_true)");
            }
            let probs = prob.p_true.as_ref().map(SegmentPmf::probs);
            let diag = match (&prob.x_true, &probs) {
                (Some(x_true), Some(p_true)) => Some(Diagnostics { x_true, p_true }),
                _ => None,
            };
            let out = train(&gan, &prob.ms, prob.p_true.as_ref(), diag)?;
            Ok(InitOutput { x_hat: out.x_hat, p_hat: out.p_hat, history: Some(out.history), critic: Some(out.critic) })
        }
        Solver::Em => {
            let x0 = initial_signal(d, seed, cfg.gan.x_init_std)?;
            let p0 = SegmentPmf::uniform(d)?.probs();
            let res = run_em(&prob.ms, &x0, &p0, prob.ms.sigma(), cfg.em)?;
            let p_hat = res.pmf();
            Ok(InitOutput { x_hat: res.x, p_hat, history: None, critic: None })
        }
        Solver::Sif => {
            let x0 = initial_signal(d, seed, cfg.gan.x_init_std)?;
            let res = run_sif(&prob.ms, &x0, &SegmentPmf::uniform(d)?, cfg.sif)?;
            Ok(InitOutput { x_hat: res.x, p_hat: res.pmf, history: None, critic: None })
        }
    }
}

/// One row of `summary.csv` / `sweep.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitRecord {
    pub init: usize,
    pub seed: u64,
    pub rel_error: f64,
    pub tv: f64,
    pub wallclock_s: f64,
    pub failed: bool,
}

fn report(prob: &Problem, out: &InitOutput) -> Result<Option<EvalReport>> {
    match (&prob.x_true, &prob.p_true) {
        (Some(x), Some(p)) => Ok(Some(evaluate(x, &p.probs(), &out.x_hat, &out.p_hat.probs())?)),
        _ => Ok(None),
    }
}

fn write_init_dir(dir: &Path, cfg: &ExperimentConfig, solver: Solver, seed: u64, out: &InitOutput) -> Result<()> {
    mkdir(dir)?;
    let snapshot = ExperimentConfig { solver, seed, n_inits: 1, ..cfg.clone() };
    write(&dir.join("config.used"), format_kv(&snapshot.to_pairs()))?;
    write_vector_dat(&dir.join("x_hat.dat"), out.x_hat.values())?;
    write_vector_dat(&dir.join("p_hat.dat"), &out.p_hat.probs())?;
    if let Some(h) = &out.history {
        write(&dir.join("history.csv"), format_history(h))?;
    }
    if let (Some(c), true) = (&out.critic, cfg.checkpoint) {
        write_critic_checkpoint(dir, c, cfg.gan.total_iters)?;
    }
    Ok(())
}

/// Runs `n_inits` initializations of `solver` on up to `threads` threads.
/// A failing initialization yields a NaN row and does not stop the others.
/// Per-init results go to `dir/init_XXX/` when `dir` is given.
pub fn run_inits(cfg: &ExperimentConfig, solver: Solver, prob: &Problem, dir: Option<&Path>) -> Result<Vec<InitRecord>> {
    let results: Mutex<Vec<Option<Result<InitRecord>>>> = Mutex::new((0..cfg.n_inits).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= cfg.n_inits {
            break;
        }
        let seed = cfg.seed.wrapping_add(i as u64);
        let start = Instant::now();
        let res = run_solver(cfg, solver, prob, seed).and_then(|out| {
            if let Some(dir) = dir {
                write_init_dir(&dir.join(format!("init_{i:03}")), cfg, solver, seed, &out)?;
            }
            let rep = report(prob, &out)?;
            Ok(InitRecord {
                init: i,
                seed,
                rel_error: rep.map_or(f64::NAN, |r| r.rel_error),
                tv: rep.map_or(f64::NAN, |r| r.tv),
                wallclock_s: start.elapsed().as_secs_f64(),
                failed: false,
            })
        });
        results.lock().unwrap()[i] = Some(res);
    };
    let threads = cfg.threads.min(cfg.n_inits).max(1);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(work);
        }
    });
    let mut rows = Vec::with_capacity(cfg.n_inits);
    for (i, r) in results.into_inner().unwrap().into_iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        match r.expect("every init ran") {
            Ok(rec) => rows.push(rec),
            // argument errors are not per-init failures
            Err(e) if e.exit_code() == 1 && !matches!(e, HarnessError::File { .. }) => return Err(e),
            Err(e) => {
                eprintln!("init {i} (seed {seed}) aborted: {e}");
                rows.push(InitRecord { init: i, seed, rel_error: f64::NAN, tv: f64::NAN, wallclock_s: f64::NAN, failed: true });
            }
        }
    }
    Ok(rows)
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        fmt_f64(v)
    }
}

pub const SUMMARY_HEADER: &str = "init,rel_error,tv,wallclock_s";

pub fn format_summary(rows: &[InitRecord]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.3}", r.init, cell(r.rel_error), cell(r.tv), r.wallclock_s);
    }
    s
}

/// `solve`: writes `config.used`, `summary.csv` and one directory per init.
pub fn solve(cfg: &ExperimentConfig) -> Result<Vec<InitRecord>> {
    let prob = load_problem(cfg)?;
    mkdir(&cfg.out)?;
    write(&cfg.out.join("config.used"), format_kv(&cfg.to_pairs()))?;
    let rows = run_inits(cfg, cfg.solver, &prob, Some(&cfg.out))?;
    write(&cfg.out.join("summary.csv"), format_summary(&rows))?;
    let failed = rows.iter().filter(|r| r.failed).count();
    if failed > 0 {
        return Err(HarnessError::Aborted(format!("{failed} of {} initializations aborted", rows.len())));
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "param,value,solver,init,rel_error,tv,wallclock_s";

/// Points of the sweep as `(param, value)`.
fn sweep_points(cfg: &ExperimentConfig) -> Vec<(&'static str, f64)> {
    match cfg.sweep {
        SweepAxis::M => cfg.sweep_m.iter().map(|&m| ("m", m as f64)).collect(),
        SweepAxis::Snr => cfg.snr.iter().map(|&s| ("snr", s)).collect(),
    }
}

fn point_tag(param: &str, value: f64, solver: Solver) -> String {
    format!("{param}={}_{}", fmt_f64(value), solver.as_str())
}

/// `sweep`: every `(point, solver)` pair runs `n_inits` initializations with
/// seeds `seed + i`, so all solvers share initial `x` and `p` per init.
/// Finished pairs leave `points/<tag>.csv` plus a `.done` marker and are
/// skipped when the sweep is resumed; `sweep.csv` is rebuilt from them.
pub fn sweep(cfg: &ExperimentConfig) -> Result<String> {
    if cfg.solvers.is_empty() {
        return bad("sweep needs at least one solver");
    }
    let points_dir = cfg.out.join("points");
    mkdir(&points_dir)?;
    write(&cfg.out.join("config.used"), format_kv(&cfg.to_pairs()))?;
    let mut aborted = 0;
    for (param, value) in sweep_points(cfg) {
        let (m, snr) = match param {
            "m" => (value as usize, cfg.snr[0]),
            _ => (cfg.m, value),
        };
        if m == 0 || m > cfg.d {
            return bad(format!("sweep point m={m} outside [1, d={}]", cfg.d));
        }
        let todo: Vec<Solver> =
            cfg.solvers.iter().copied().filter(|s| !points_dir.join(format!("{}.done", point_tag(param, value, *s))).exists()).collect();
        if todo.is_empty() {
            continue;
        }
        let point_cfg = ExperimentConfig { m, snr: vec![snr], ..cfg.clone() };
        let prob = synthesize_problem(&point_cfg, m, snr)?;
        for solver in todo {
            let tag = point_tag(param, value, solver);
            let rows = run_inits(&point_cfg, solver, &prob, None)?;
            aborted += rows.iter().filter(|r| r.failed).count();
            let mut s = String::new();
            for r in &rows {
                let _ = writeln!(
                    s,
                    "{param},{},{},{},{},{},{:.3}",
                    fmt_f64(value),
                    solver.as_str(),
                    r.init,
                    cell(r.rel_error),
                    cell(r.tv),
                    r.wallclock_s
                );
            }
            write(&points_dir.join(format!("{tag}.csv")), s)?;
            write(&points_dir.join(format!("{tag}.done")), "")?;
        }
    }
    let csv = collect_sweep(cfg)?;
    if aborted > 0 {
        return Err(HarnessError::Aborted(format!("{aborted} initializations aborted during the sweep")));
    }
    Ok(csv)
}

/// Rebuilds `sweep.csv` and the per-solver curves from the finished points.
fn collect_sweep(cfg: &ExperimentConfig) -> Result<String> {
    let points_dir = cfg.out.join("points");
    let mut csv = format!("{SWEEP_HEADER}\n");
    for solver in &cfg.solvers {
        let mut curve = Vec::new();
        for (param, value) in sweep_points(cfg) {
            let tag = point_tag(param, value, *solver);
            if !points_dir.join(format!("{tag}.done")).exists() {
                continue;
            }
            let path = points_dir.join(format!("{tag}.csv"));
            let text = fs::read_to_string(&path).map_err(file_err(&path))?;
            csv.push_str(&text);
            let rels: Vec<f64> = text.lines().filter_map(|l| l.split(',').nth(4)).map(|v| v.parse().unwrap_or(f64::NAN)).collect();
            let y = match cfg.sweep {
                SweepAxis::M => success_rate(&rels, SUCCESS_THRESHOLD).unwrap_or(f64::NAN),
                SweepAxis::Snr => median(&rels).unwrap_or(f64::NAN),
            };
            let x = if cfg.sweep == SweepAxis::Snr { value.log10() } else { value };
            curve.push((x, y));
        }
        let name = match cfg.sweep {
            SweepAxis::M => format!("success_vs_m_{}.dat", solver.as_str()),
            SweepAxis::Snr => format!("median_rel_vs_log10snr_{}.dat", solver.as_str()),
        };
        write(&cfg.out.join(name), msr_core::io::format_dat(&curve))?;
    }
    write(&cfg.out.join("sweep.csv"), &csv)?;
    Ok(csv)
}

pub const EVAL_HEADER: &str = "rel_error,tv,aligning_shift_x,aligning_shift_p,tv_joint_aligned";

/// `eval`: compares `run_dir/{x_hat,p_hat}.dat` with the truth files and
/// writes `run_dir/eval.csv`.
pub fn eval(x_true: &Path, p_true: &Path, run_dir: &Path) -> Result<EvalReport> {
    let load = |p: &Path| -> Result<Vec<f64>> {
        if !p.exists() {
            return bad(format!("file not found: {}", p.display()));
        }
        Ok(read_vector_dat(p)?)
    };
    let x = Signal::new(load(x_true)?)?;
    let p = load(p_true)?;
    let xh = Signal::new(load(&run_dir.join("x_hat.dat"))?)?;
    let ph = load(&run_dir.join("p_hat.dat"))?;
    let rep = evaluate(&x, &p, &xh, &ph).map_err(|e| match e {
        MsrError::Argument(m) => HarnessError::Arg(m),
        e => e.into(),
    })?;
    let line = format!(
        "{EVAL_HEADER}\n{},{},{},{},{}\n",
        fmt_f64(rep.rel_error),
        fmt_f64(rep.tv),
        rep.aligning_shift_x,
        rep.aligning_shift_p,
        fmt_f64(rep.tv_joint_aligned)
    );
    write(&run_dir.join("eval.csv"), line)?;
    Ok(rep)
}
