//! Experiment pipeline: configuration presets, single runs, size and thread
//! sweeps, oracle validation and the report files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{H2Error, Result};
use crate::factorization::{factorize, FactorStats, Factorization, LevelStats, PhaseTimes};
use crate::geometry::{generate_uniform_grid, ClusterTree, PointSet};
use crate::h2::H2Matrix;
use crate::kernels::{KernelFamily, KernelSpec, LowRankFactor};
use crate::oracle::{assemble_dense, dense_lu_solve, norm, relative_error, DenseMatrix, DEFAULT_ORACLE_CAP};
use crate::rng::{normal_vec, STREAM_SOLUTION};
use crate::solve::solve;
use crate::structure::{Admissibility, BlockPartition, DistanceMetric};

/// Validation passes when the solution error is within this multiple of
/// `eps_lu`.
pub const VALIDATE_SOLUTION_FACTOR: f64 = 100.0;
/// Validation passes when the backward error is within this multiple of
/// `eps_lu`.
pub const VALIDATE_BACKWARD_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Cov2d,
    Cov3d,
    Laplace2d,
    Helmholtz3d,
    LruCov3d,
}

impl Problem {
    pub const ALL: [Problem; 5] = [
        Problem::Cov2d,
        Problem::Cov3d,
        Problem::Laplace2d,
        Problem::Helmholtz3d,
        Problem::LruCov3d,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Problem::Cov2d => "cov2d",
            Problem::Cov3d => "cov3d",
            Problem::Laplace2d => "laplace2d",
            Problem::Helmholtz3d => "helmholtz3d",
            Problem::LruCov3d => "lru_cov3d",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::Cov2d | Problem::Laplace2d => 2,
            _ => 3,
        }
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            Problem::Cov2d => KernelFamily::ExpCovariance { length: 0.1 },
            Problem::Cov3d | Problem::LruCov3d => KernelFamily::ExpCovariance { length: 0.2 },
            Problem::Laplace2d => KernelFamily::Laplace2D,
            Problem::Helmholtz3d => KernelFamily::Helmholtz3D { kappa: 3.0 },
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Problem {
    type Err = H2Error;

    fn from_str(s: &str) -> Result<Self> {
        Problem::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| H2Error::InvalidArgument(format!("unknown problem `{s}`")))
    }
}

/// Everything that defines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub n: usize,
    pub m: usize,
    pub p0: usize,
    pub dim: usize,
    pub eta: f64,
    pub alpha_r: f64,
    pub eps: f64,
    pub eps_lu: f64,
    /// Rank of the seeded low-rank update (zero for none).
    pub lru_rank: usize,
    pub metric: DistanceMetric,
    /// Worker threads; zero keeps the ambient pool.
    pub threads: usize,
    pub seed: u64,
    /// Accepted for interface stability; every run is deterministic.
    pub deterministic: bool,
    pub oracle_cap: usize,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Preset parameters for `problem`.
    pub fn preset(problem: Problem, n: usize) -> Self {
        let (m, p0, eta, alpha_r, eps, eps_lu, lru_rank) = match problem {
            Problem::Cov2d => (64, 8, 0.9, 1e-2, 1e-7, 1e-6, 0),
            Problem::Cov3d => (64, 4, 0.7, 1e-2, 1e-7, 1e-6, 0),
            Problem::Laplace2d => (64, 8, 0.9, 1e-5, 1e-7, 1e-6, 0),
            Problem::Helmholtz3d => (64, 4, 0.7, 1e-2, 1e-7, 1e-6, 0),
            Problem::LruCov3d => (128, 4, 0.9, 1e-2, 1e-8, 1e-7, 32),
        };
        Self {
            problem,
            n,
            m,
            p0,
            dim: problem.dim(),
            eta,
            alpha_r,
            eps,
            eps_lu,
            lru_rank,
            metric: DistanceMetric::CenterDistance,
            threads: 0,
            seed: 42,
            deterministic: true,
            oracle_cap: DEFAULT_ORACLE_CAP,
            out_dir: None,
        }
    }

    /// `(m, p0, d, eta, alpha_r, eps, eps_lu)`.
    pub fn preset_tuple(&self) -> (usize, usize, usize, f64, f64, f64, f64) {
        (self.m, self.p0, self.dim, self.eta, self.alpha_r, self.eps, self.eps_lu)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(H2Error::InvalidArgument(msg));
        if self.dim != self.problem.dim() {
            return bad(format!("{} is {}-dimensional, got d = {}", self.problem, self.problem.dim(), self.dim));
        }
        if self.n == 0 || self.m == 0 || self.p0 == 0 {
            return bad("n, m and p0 must be positive".into());
        }
        if !(self.eta > 0.0) {
            return bad(format!("eta must be > 0, got {}", self.eta));
        }
        if !(self.eps >= 0.0 && self.eps_lu >= 0.0) {
            return bad("eps and eps_lu must be >= 0".into());
        }
        if self.lru_rank > self.n {
            return bad(format!("update rank {} exceeds n = {}", self.lru_rank, self.n));
        }
        Ok(())
    }
}

/// Runs `f` on a pool of `threads` workers (the ambient pool for zero).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| H2Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct BuildTimes {
    pub construction_s: f64,
    pub compression_s: f64,
    pub low_rank_s: f64,
}

/// A constructed and compressed problem.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    /// Points in original order.
    pub points: PointSet,
    /// Kernel with the update as overlay (rows in original order).
    pub spec: KernelSpec,
    pub h2: H2Matrix,
    pub low_rank: Option<LowRankFactor>,
    /// Largest rank after compression, before any update.
    pub compressed_rank: usize,
    pub times: BuildTimes,
}

impl BuiltProblem {
    pub fn tree(&self) -> &ClusterTree {
        self.h2.tree()
    }

    pub fn partition(&self) -> &BlockPartition {
        self.h2.partition()
    }
}

/// Points, tree, partition, Chebyshev H², compression, optional update.
pub fn build(cfg: &ExperimentConfig) -> Result<BuiltProblem> {
    cfg.validate()?;
    let t = Instant::now();
    let points = generate_uniform_grid(cfg.n, cfg.dim).map_err(|e| e.in_stage("geometry"))?;
    let tree = ClusterTree::build(&points, cfg.m).map_err(|e| e.in_stage("geometry"))?;
    let partition = BlockPartition::build(&tree, Admissibility::with_metric(cfg.eta, cfg.metric));
    let spec = KernelSpec::for_points(cfg.problem.family(), cfg.alpha_r, &points).map_err(|e| e.in_stage("kernels"))?;
    let mut h2 = H2Matrix::build(tree, partition, &spec, cfg.p0).map_err(|e| e.in_stage("construction"))?;
    let construction_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    h2.orthogonalize_recompress(cfg.eps);
    let compression_s = t.elapsed().as_secs_f64();
    let compressed_rank = h2.max_rank();

    let t = Instant::now();
    let low_rank = if cfg.lru_rank > 0 {
        let w = LowRankFactor::random(cfg.n, cfg.lru_rank, cfg.seed).map_err(|e| e.in_stage("low_rank_update"))?;
        h2.absorb_low_rank(&w, cfg.eps).map_err(|e| e.in_stage("low_rank_update"))?;
        Some(w)
    } else {
        None
    };
    let low_rank_s = t.elapsed().as_secs_f64();
    let spec = spec.with_overlay(low_rank.clone().map(Arc::new));
    Ok(BuiltProblem {
        points,
        spec,
        h2,
        low_rank,
        compressed_rank,
        times: BuildTimes {
            construction_s,
            compression_s,
            low_rank_s,
        },
    })
}

/// Seeded reference solution in tree order.
pub fn reference_solution(cfg: &ExperimentConfig, tree: &ClusterTree) -> Vec<f64> {
    tree.to_tree_order(&normal_vec(cfg.seed, STREAM_SOLUTION, cfg.n))
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureSummary {
    pub depth: usize,
    pub top_level: Option<usize>,
    pub max_csp: usize,
    pub csp_per_level: Vec<usize>,
    pub max_rank_compressed: usize,
    pub max_rank: usize,
    pub rank_per_level: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunPhases {
    pub construction_s: f64,
    pub compression_s: f64,
    pub low_rank_s: f64,
    pub factorization: PhaseTimes,
    pub factorization_total_s: f64,
    pub solve_s: f64,
}

/// Outcome of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub structure: StructureSummary,
    pub phases: RunPhases,
    pub levels: Vec<LevelStats>,
    pub h2_bytes: usize,
    pub factor_bytes: usize,
    pub norm_estimate: f64,
    pub eps_fill: f64,
    pub backward_error: f64,
    pub solution_error: f64,
    /// Solution vector in tree order (not serialized).
    #[serde(skip)]
    pub solution: Vec<f64>,
}

impl RunReport {
    pub fn stats_phase_rows(&self) -> Vec<(&'static str, f64, f64)> {
        let total = self.phases.factorization_total_s;
        self.phases
            .factorization
            .entries()
            .iter()
            .map(|&(name, t)| (name, t, if total > 0.0 { t / total } else { 0.0 }))
            .collect()
    }
}

fn structure_summary(p: &BuiltProblem) -> StructureSummary {
    let part = p.partition();
    let depth = part.depth();
    StructureSummary {
        depth,
        top_level: part.top_level(),
        max_csp: part.max_sparsity_constant(),
        csp_per_level: (0..=depth).map(|l| part.sparsity_constant(l).unwrap_or(0)).collect(),
        max_rank_compressed: p.compressed_rank,
        max_rank: p.h2.max_rank(),
        rank_per_level: (0..=depth).map(|l| p.h2.max_rank_at(l)).collect(),
    }
}

/// Factorizes the built problem, solves `A x~ = A x` for the seeded `x`
/// and measures `||A x~ - b|| / ||b||` with the H² matvec.
pub fn factorize_and_solve(cfg: &ExperimentConfig, p: &BuiltProblem) -> Result<RunReport> {
    let z = factorize(&p.h2, cfg.eps_lu).map_err(|e| e.in_stage("factorization"))?;
    let x = reference_solution(cfg, p.tree());
    let b = p.h2.matvec(&x).map_err(|e| e.in_stage("matvec"))?;
    let t = Instant::now();
    let xt = solve(&z, &b).map_err(|e| e.in_stage("solve"))?;
    let solve_s = t.elapsed().as_secs_f64();
    let r = p.h2.matvec(&xt).map_err(|e| e.in_stage("matvec"))?;
    let backward_error = relative_error(&r, &b);
    let solution_error = relative_error(&xt, &x);
    let FactorStats { phases, levels, total_s, factor_bytes, .. } = z.stats.clone();
    Ok(RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        structure: structure_summary(p),
        phases: RunPhases {
            construction_s: p.times.construction_s,
            compression_s: p.times.compression_s,
            low_rank_s: p.times.low_rank_s,
            factorization: phases,
            factorization_total_s: total_s,
            solve_s,
        },
        levels,
        h2_bytes: p.h2.stored_bytes(),
        factor_bytes,
        norm_estimate: z.norm_estimate,
        eps_fill: z.eps_fill,
        backward_error,
        solution_error,
        solution: xt,
    })
}

/// Full pipeline on the configured thread count; writes the report files
/// when an output directory is set.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let report = with_threads(cfg.threads, || -> Result<RunReport> {
        let p = build(cfg)?;
        factorize_and_solve(cfg, &p)
    })??;
    if let Some(dir) = &cfg.out_dir {
        write_outputs(&report, dir)?;
    }
    Ok(report)
}

/// C-style `%.6e`: six fraction digits and a signed two-digit exponent.
pub fn fmt_e(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.6e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

pub const LEVELS_HEADER: [&str; 4] = ["level", "time_s", "csp", "max_rank"];
pub const PHASES_HEADER: [&str; 3] = ["phase", "time_s", "fraction"];

pub fn levels_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LEVELS_HEADER)?;
    for l in &report.levels {
        w.write_record([l.level.to_string(), fmt_e(l.time_s), l.csp.to_string(), l.max_rank.to_string()])?;
    }
    csv_string(w)
}

pub fn phases_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PHASES_HEADER)?;
    for (name, t, frac) in report.stats_phase_rows() {
        w.write_record([name.to_string(), fmt_e(t), fmt_e(frac)])?;
    }
    csv_string(w)
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| H2Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// `report.json`, `levels.csv` and `phases.csv` in `dir`.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("levels.csv"), levels_csv(report)?)?;
    fs::write(dir.join("phases.csv"), phases_csv(report)?)?;
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(H2Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(H2Error::InvalidArgument(format!(
            "a slope fit needs at least 3 sizes, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(H2Error::InvalidArgument("slope fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(H2Error::InvalidArgument("slope fit needs distinct sizes".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub factor_time_s: f64,
    pub solve_time_s: f64,
    pub factor_bytes: usize,
    pub h2_bytes: usize,
    pub backward_error: f64,
    pub max_rank: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Slopes {
    pub factor_time: f64,
    pub solve_time: f64,
    pub factor_memory: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub slopes: Slopes,
}

pub const SWEEP_HEADER: [&str; 7] = [
    "n",
    "factor_time_s",
    "solve_time_s",
    "factor_bytes",
    "h2_bytes",
    "backward_error",
    "max_rank",
];

/// Runs `base` at every size and fits log-log slopes. Writes `sweep.csv`
/// and `slopes.json` when an output directory is set.
pub fn scaling_sweep(base: &ExperimentConfig, sizes: &[usize]) -> Result<SweepResult> {
    if sizes.len() < 3 {
        return Err(H2Error::InvalidArgument(format!(
            "a sweep needs at least 3 sizes, got {}",
            sizes.len()
        )));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut cfg = base.clone();
        cfg.n = n;
        cfg.out_dir = None;
        let r = run(&cfg)?;
        rows.push(SweepRow {
            n,
            factor_time_s: r.phases.factorization_total_s,
            solve_time_s: r.phases.solve_s,
            factor_bytes: r.factor_bytes,
            h2_bytes: r.h2_bytes,
            backward_error: r.backward_error,
            max_rank: r.structure.max_rank,
        });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let col = |f: fn(&SweepRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let slopes = Slopes {
        factor_time: fit_slope(&ns, &col(|r| r.factor_time_s))?,
        solve_time: fit_slope(&ns, &col(|r| r.solve_time_s))?,
        factor_memory: fit_slope(&ns, &col(|r| r.factor_bytes as f64))?,
    };
    let out = SweepResult { rows, slopes };
    if let Some(dir) = &base.out_dir {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SWEEP_HEADER)?;
        for r in &out.rows {
            w.write_record([
                r.n.to_string(),
                fmt_e(r.factor_time_s),
                fmt_e(r.solve_time_s),
                r.factor_bytes.to_string(),
                r.h2_bytes.to_string(),
                fmt_e(r.backward_error),
                r.max_rank.to_string(),
            ])?;
        }
        fs::write(dir.join("sweep.csv"), csv_string(w)?)?;
        fs::write(dir.join("slopes.json"), serde_json::to_string_pretty(&out.slopes)?)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ThreadRow {
    pub threads: usize,
    pub factor_time_s: f64,
    pub solve_time_s: f64,
    pub speedup: f64,
    pub backward_error: f64,
    pub factor_bytes: usize,
    /// Largest skeleton per level, leaf first.
    pub ranks: Vec<usize>,
    pub csp: Vec<usize>,
    #[serde(skip)]
    pub solution: Vec<f64>,
}

pub const THREADS_HEADER: [&str; 5] = ["threads", "factor_time_s", "solve_time_s", "speedup", "backward_error"];

/// Repeats the run at each thread count. Speedups are relative to the
/// first entry. Writes `threads.csv` when an output directory is set.
pub fn thread_sweep(base: &ExperimentConfig, threads: &[usize]) -> Result<Vec<ThreadRow>> {
    if threads.is_empty() || threads.contains(&0) {
        return Err(H2Error::InvalidArgument("thread counts must be >= 1".into()));
    }
    let mut rows: Vec<ThreadRow> = Vec::with_capacity(threads.len());
    for &t in threads {
        let mut cfg = base.clone();
        cfg.threads = t;
        cfg.out_dir = None;
        let r = run(&cfg)?;
        let base_time = rows.first().map_or(r.phases.factorization_total_s, |f| f.factor_time_s);
        rows.push(ThreadRow {
            threads: t,
            factor_time_s: r.phases.factorization_total_s,
            solve_time_s: r.phases.solve_s,
            speedup: base_time / r.phases.factorization_total_s,
            backward_error: r.backward_error,
            factor_bytes: r.factor_bytes,
            ranks: r.levels.iter().map(|l| l.max_rank).collect(),
            csp: r.levels.iter().map(|l| l.csp).collect(),
            solution: r.solution,
        });
    }
    if let Some(dir) = &base.out_dir {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(THREADS_HEADER)?;
        for r in &rows {
            w.write_record([
                r.threads.to_string(),
                fmt_e(r.factor_time_s),
                fmt_e(r.solve_time_s),
                fmt_e(r.speedup),
                fmt_e(r.backward_error),
            ])?;
        }
        fs::write(dir.join("threads.csv"), csv_string(w)?)?;
    }
    Ok(rows)
}

/// Dense matrix of the represented operator, one matvec per column (tree
/// order).
pub fn densify(h2: &H2Matrix, cap: usize) -> Result<DenseMatrix> {
    let n = h2.size();
    if n > cap {
        return Err(H2Error::OracleCapExceeded { n, cap });
    }
    let mut a = DenseMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = h2.matvec(&e)?;
        e[j] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            a.set(i, j, v);
        }
    }
    Ok(a)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    /// Against the dense LU of the represented H² operator.
    pub solution_error: f64,
    pub backward_error: f64,
    /// Against the dense LU of the kernel matrix assembled entry by entry.
    pub kernel_solution_error: f64,
    pub kernel_backward_error: f64,
    /// `||A_H2 x - A x|| / ||A x||` for the seeded `x`.
    pub construction_error: f64,
    pub solution_tolerance: f64,
    pub backward_tolerance: f64,
    /// Whether the kernel comparison is gated (box-gap admissibility).
    pub kernel_gated: bool,
    pub passed: bool,
}

/// Compares the fast path with the dense oracle. The represented operator
/// is always gated; the kernel-assembled matrix is gated only under the
/// box-gap metric, whose construction error is far below the tolerances.
pub fn validate(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    if cfg.n > cfg.oracle_cap {
        return Err(H2Error::OracleCapExceeded {
            n: cfg.n,
            cap: cfg.oracle_cap,
        });
    }
    with_threads(cfg.threads, || -> Result<ValidationReport> {
        let p = build(cfg)?;
        let tree = p.tree();
        let z = factorize(&p.h2, cfg.eps_lu).map_err(|e| e.in_stage("factorization"))?;
        let x = reference_solution(cfg, tree);

        let a_h2 = densify(&p.h2, cfg.oracle_cap).map_err(|e| e.in_stage("oracle"))?;
        let b = a_h2.matvec(&x);
        let x_star = dense_lu_solve(&a_h2, &b).map_err(|e| e.in_stage("oracle"))?;
        let xt = solve(&z, &b)?;
        let solution_error = relative_error(&xt, &x_star);
        let backward_error = relative_error(&a_h2.matvec(&xt), &b);

        let a_k = assemble_dense(&p.spec, &p.points, cfg.oracle_cap).map_err(|e| e.in_stage("oracle"))?;
        let x_orig = tree.to_original_order(&x);
        let bk = a_k.matvec(&x_orig);
        let xk_star = dense_lu_solve(&a_k, &bk).map_err(|e| e.in_stage("oracle"))?;
        let xk = tree.to_original_order(&solve(&z, &tree.to_tree_order(&bk))?);
        let kernel_solution_error = relative_error(&xk, &xk_star);
        let kernel_backward_error = relative_error(&a_k.matvec(&xk), &bk);
        let construction_error = relative_error(&tree.to_original_order(&b), &bk);

        let solution_tolerance = VALIDATE_SOLUTION_FACTOR * cfg.eps_lu;
        let backward_tolerance = VALIDATE_BACKWARD_FACTOR * cfg.eps_lu;
        let kernel_gated = cfg.metric == DistanceMetric::BoxGap;
        let mut passed = solution_error <= solution_tolerance && backward_error <= backward_tolerance;
        if kernel_gated {
            passed &= kernel_solution_error <= solution_tolerance && kernel_backward_error <= backward_tolerance;
        }
        Ok(ValidationReport {
            n: cfg.n,
            solution_error,
            backward_error,
            kernel_solution_error,
            kernel_backward_error,
            construction_error,
            solution_tolerance,
            backward_tolerance,
            kernel_gated,
            passed,
        })
    })?
}

/// `validation.json` in `dir`.
pub fn write_validation(report: &ValidationReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("validation.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}

/// Dense `W W^T` in tree order.
pub fn low_rank_outer(w: &LowRankFactor, tree: &ClusterTree) -> DMatrix<f64> {
    let wt = w.permuted(tree.perm()).to_matrix();
    &wt * wt.transpose()
}

/// Relative 2-norm of a vector difference, `0` for two zero vectors.
pub fn relative_difference(a: &[f64], b: &[f64]) -> f64 {
    if norm(b) == 0.0 && norm(a) == 0.0 {
        return 0.0;
    }
    relative_error(a, b)
}

/// Factorization without a run report, for callers that only need `Z`.
pub fn factorize_problem(cfg: &ExperimentConfig, p: &BuiltProblem) -> Result<Factorization> {
    factorize(&p.h2, cfg.eps_lu)
}
