use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use h2factor::harness::{self, ExperimentConfig, Problem};
use h2factor::DistanceMetric;

#[derive(Parser)]
#[command(name = "h2factor", version, about = "H2 recursive skeletonization factorization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build, factorize and solve one problem.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also compare against the dense oracle.
        #[arg(long)]
        validate: bool,
    },
    /// Run several sizes and fit log-log slopes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Problem sizes (at least three).
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
    },
    /// Repeat one run at several thread counts.
    Threads {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        thread_list: Vec<usize>,
    },
    /// Compare with the dense oracle; exit code 2 when out of tolerance.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Center,
    Gap,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "cov2d")]
    problem: String,
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    p0: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    alpha_r: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eps_lu: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Runs are always deterministic; the flag is recorded in the report.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    oracle_cap: Option<usize>,
    #[arg(long, value_enum, default_value = "center")]
    metric: Metric,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let problem: Problem = self.problem.parse()?;
        let mut c = ExperimentConfig::preset(problem, self.n);
        c.m = self.m.unwrap_or(c.m);
        c.p0 = self.p0.unwrap_or(c.p0);
        c.eta = self.eta.unwrap_or(c.eta);
        c.alpha_r = self.alpha_r.unwrap_or(c.alpha_r);
        c.eps = self.eps.unwrap_or(c.eps);
        c.eps_lu = self.eps_lu.unwrap_or(c.eps_lu);
        c.oracle_cap = self.oracle_cap.unwrap_or(c.oracle_cap);
        c.threads = self.threads;
        c.seed = self.seed;
        c.deterministic = self.deterministic;
        c.metric = match self.metric {
            Metric::Center => DistanceMetric::CenterDistance,
            Metric::Gap => DistanceMetric::BoxGap,
        };
        c.out_dir = self.out.clone();
        c.validate()?;
        Ok(c)
    }
}

// Writes to stdout, ignoring a closed pipe (`h2factor ... | head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn print_run(r: &harness::RunReport) {
    out!(
        "{} n={} factor={:.3}s solve={:.4}s e_b={:.3e} h2={}B factor={}B k_max={} csp={}",
        r.config.problem,
        r.config.n,
        r.phases.factorization_total_s,
        r.phases.solve_s,
        r.backward_error,
        r.h2_bytes,
        r.factor_bytes,
        r.structure.max_rank,
        r.structure.max_csp
    );
    for (name, t, frac) in r.stats_phase_rows() {
        out!("  {name:<18} {t:>10.4}s {:>6.1}%", 100.0 * frac);
    }
}

fn validation(cfg: &ExperimentConfig) -> anyhow::Result<bool> {
    let v = harness::validate(cfg).context("validation")?;
    out!(
        "oracle: x_err={:.3e} (tol {:.1e}) e_b={:.3e} (tol {:.1e})",
        v.solution_error, v.solution_tolerance, v.backward_error, v.backward_tolerance
    );
    out!(
        "kernel: x_err={:.3e} e_b={:.3e} construction={:.3e}{}",
        v.kernel_solution_error,
        v.kernel_backward_error,
        v.construction_error,
        if v.kernel_gated { "" } else { " (not gated)" }
    );
    if let Some(dir) = &cfg.out_dir {
        harness::write_validation(&v, dir)?;
    }
    Ok(v.passed)
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run { common, validate } => {
            let cfg = common.config()?;
            let r = harness::run(&cfg)?;
            print_run(&r);
            if validate {
                return validation(&cfg);
            }
            Ok(true)
        }
        Command::Sweep { common, sizes } => {
            let cfg = common.config()?;
            let s = harness::scaling_sweep(&cfg, &sizes)?;
            for r in &s.rows {
                out!(
                    "n={:<7} factor={:.3}s solve={:.4}s bytes={} e_b={:.3e}",
                    r.n, r.factor_time_s, r.solve_time_s, r.factor_bytes, r.backward_error
                );
            }
            out!(
                "slopes: factor_time={:.3} solve_time={:.3} factor_memory={:.3}",
                s.slopes.factor_time, s.slopes.solve_time, s.slopes.factor_memory
            );
            Ok(true)
        }
        Command::Threads { common, thread_list } => {
            let cfg = common.config()?;
            for r in harness::thread_sweep(&cfg, &thread_list)? {
                out!(
                    "threads={:<3} factor={:.3}s solve={:.4}s speedup={:.2} e_b={:.3e}",
                    r.threads, r.factor_time_s, r.solve_time_s, r.speedup, r.backward_error
                );
            }
            Ok(true)
        }
        Command::Validate { common } => validation(&common.config()?),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
