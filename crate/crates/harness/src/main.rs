use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msr_harness::config::{read_config_file, ExperimentConfig};
use msr_harness::error::HarnessError;
use msr_harness::run;

#[derive(Parser)]
#[command(name = "msr", version, about = "Multi-segment reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a measurement file plus ground truth.
    Generate(Common),
    /// Run a solver over several initializations.
    Solve(Common),
    /// Sweep segment length or SNR over several solvers.
    Sweep(Common),
    /// Score a run directory against ground truth.
    Eval(Common),
}

// Every flag maps to the config key of the same name with '-' -> '_'.
macro_rules! overrides {
    ($($field:ident : $flag:literal),* $(,)?) => {
        #[derive(Args)]
        struct Common {
            /// Config file (`key = value` lines, optional `[section]` headers).
            #[arg(long)]
            config: Option<PathBuf>,
            /// Worker threads for independent initializations.
            #[arg(long, env = "MSR_THREADS")]
            threads: Option<String>,
            $(
                #[arg(long = $flag, value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl Common {
            fn pairs(&self) -> Vec<(String, String)> {
                let mut v = Vec::new();
                if let Some(t) = &self.threads {
                    v.push(("threads".to_string(), t.clone()));
                }
                $(
                    if let Some(val) = &self.$field {
                        v.push(($flag.replace('-', "_"), val.clone()));
                    }
                )*
                v
            }
        }
    };
}

overrides! {
    seed: "seed", out: "out",
    signal: "signal", d: "d", pmf: "pmf", pmf_alpha: "pmf-alpha",
    pmf_mu1: "pmf-mu1", pmf_sd1: "pmf-sd1", pmf_mu2: "pmf-mu2", pmf_sd2: "pmf-sd2", pmf_weight: "pmf-weight",
    m: "m", n: "N", snr: "snr", sigma: "sigma",
    data: "data", data_seed: "data-seed", x_true: "x-true", p_true: "p-true",
    solver: "solver", n_inits: "n-inits", checkpoint: "checkpoint",
    mode: "mode", batch_size: "batch-size", n_disc: "n-disc", lambda: "lambda", tau: "tau",
    lr_critic: "lr-critic", lr_x: "lr-x", lr_p: "lr-p", decay_factor: "decay-factor",
    decay_every_critic: "decay-every-critic", decay_every_x: "decay-every-x", decay_every_p: "decay-every-p",
    p_warmup: "p-warmup",
    momentum: "momentum", clip_norm: "clip-norm", iters: "iters", ell: "ell", eval_every: "eval-every",
    x_init_std: "x-init-std",
    em_max_iters: "em-max-iters", em_tol: "em-tol", sif_max_iters: "sif-max-iters", sif_tol: "sif-tol",
    sif_w1: "sif-w1", sif_w2: "sif-w2", sif_w3: "sif-w3",
    sweep: "sweep", sweep_m: "sweep-m", solvers: "solvers", run_dir: "run-dir",
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut map = match &common.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    map.extend(common.pairs());
    ExperimentConfig::from_map(&map)
}

fn execute(cmd: Cmd) -> Result<(), HarnessError> {
    match cmd {
        Cmd::Generate(c) => {
            let cfg = load(&c)?;
            let rep = run::generate(&cfg)?;
            println!("wrote {} (sigma={}, realized snr={})", rep.measurements.display(), rep.sigma, rep.realized_snr);
        }
        Cmd::Solve(c) => {
            let cfg = load(&c)?;
            let rows = run::solve(&cfg)?;
            print!("{}", run::format_summary(&rows));
        }
        Cmd::Sweep(c) => {
            let cfg = load(&c)?;
            print!("{}", run::sweep(&cfg)?);
        }
        Cmd::Eval(c) => {
            let cfg = load(&c)?;
            let (Some(x), Some(p)) = (&cfg.x_true, &cfg.p_true) else {
                return Err(HarnessError::Arg("eval needs --x-true and --p-true".into()));
            };
            let dir = cfg.run_dir.clone().unwrap_or_else(|| cfg.out.clone());
            let rep = run::eval(x, p, &dir)?;
            println!("{}", run::EVAL_HEADER);
            println!("{},{},{},{},{}", rep.rel_error, rep.tv, rep.aligning_shift_x, rep.aligning_shift_p, rep.tv_joint_aligned);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
