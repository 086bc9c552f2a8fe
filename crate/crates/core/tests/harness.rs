use h2factor::harness::{
    self, fit_slope, fmt_e, levels_csv, phases_csv, scaling_sweep, thread_sweep, ExperimentConfig, Problem,
};
use h2factor::H2Error;

#[test]
fn presets_echo_the_parameter_table() {
    let t = |p| ExperimentConfig::preset(p, 1024).preset_tuple();
    assert_eq!(t(Problem::Cov3d), (64, 4, 3, 0.7, 1e-2, 1e-7, 1e-6));
    assert_eq!(t(Problem::Cov2d), (64, 8, 2, 0.9, 1e-2, 1e-7, 1e-6));
    assert_eq!(t(Problem::Laplace2d), (64, 8, 2, 0.9, 1e-5, 1e-7, 1e-6));
    assert_eq!(t(Problem::Helmholtz3d), (64, 4, 3, 0.7, 1e-2, 1e-7, 1e-6));
    assert_eq!(t(Problem::LruCov3d), (128, 4, 3, 0.9, 1e-2, 1e-8, 1e-7));
    assert_eq!(ExperimentConfig::preset(Problem::LruCov3d, 8).lru_rank, 32);
    assert_eq!(ExperimentConfig::preset(Problem::Cov3d, 8).lru_rank, 0);
}

#[test]
fn problem_names_round_trip() {
    for p in Problem::ALL {
        assert_eq!(p.name().parse::<Problem>().unwrap(), p);
        assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{}\"", p.name()));
    }
    assert!("cov4d".parse::<Problem>().is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let base = ExperimentConfig::preset(Problem::Cov2d, 256);
    let bad = [
        ExperimentConfig { dim: 3, ..base.clone() },
        ExperimentConfig { n: 0, ..base.clone() },
        ExperimentConfig { eta: 0.0, ..base.clone() },
        ExperimentConfig { eps_lu: -1.0, ..base.clone() },
        ExperimentConfig { lru_rank: 300, ..base.clone() },
    ];
    for c in bad {
        assert!(matches!(harness::run(&c), Err(H2Error::InvalidArgument(_))), "{c:?}");
    }
}

#[test]
fn c_style_exponent_format() {
    assert_eq!(fmt_e(0.0), "0.000000e+00");
    assert_eq!(fmt_e(1.0), "1.000000e+00");
    assert_eq!(fmt_e(123456.789), "1.234568e+05");
    assert_eq!(fmt_e(-2.5e-7), "-2.500000e-07");
    assert_eq!(fmt_e(1e-100), "1.000000e-100");
}

#[test]
fn slope_fit() {
    let n = [1024.0, 2048.0, 4096.0, 8192.0];
    let y: Vec<f64> = n.iter().map(|v| 3.0 * v).collect();
    assert!((fit_slope(&n, &y).unwrap() - 1.0).abs() < 1e-12);
    let y2: Vec<f64> = n.iter().map(|v| 0.5 * v * v).collect();
    assert!((fit_slope(&n, &y2).unwrap() - 2.0).abs() < 1e-12);
    assert!(fit_slope(&[1.0], &[1.0]).is_err());
    assert!(fit_slope(&[1.0, 2.0, 4.0], &[1.0, 0.0, 2.0]).is_err());
    assert!(fit_slope(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn sweeps_validate_their_arguments() {
    let cfg = ExperimentConfig::preset(Problem::Cov2d, 256);
    assert!(scaling_sweep(&cfg, &[256]).is_err());
    assert!(thread_sweep(&cfg, &[1, 0]).is_err());
    assert!(thread_sweep(&cfg, &[]).is_err());
}

#[test]
fn report_files_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset(Problem::Cov2d, 4096);
    cfg.out_dir = Some(dir.path().to_path_buf());
    let r = harness::run(&cfg).unwrap();
    assert!(r.backward_error <= 1e-4);

    let levels = std::fs::read_to_string(dir.path().join("levels.csv")).unwrap();
    let phases = std::fs::read_to_string(dir.path().join("phases.csv")).unwrap();
    assert_eq!(levels, levels_csv(&r).unwrap());
    assert_eq!(phases, phases_csv(&r).unwrap());
    let lines: Vec<&str> = levels.lines().collect();
    assert_eq!(lines[0], "level,time_s,csp,max_rank");
    assert_eq!(lines.len(), 1 + r.levels.len());
    let plines: Vec<&str> = phases.lines().collect();
    assert_eq!(
        plines.iter().map(|l| l.split(',').next().unwrap()).collect::<Vec<_>>(),
        [
            "phase",
            "norm_estimate",
            "coloring",
            "augmentation",
            "projection",
            "partial_lu",
            "level_transition",
            "top_factorization"
        ]
    );
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f.len(), 4);
        assert!(is_c_exponent(f[1]), "{l}");
    }
    for l in &plines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert!(is_c_exponent(f[1]) && is_c_exponent(f[2]), "{l}");
    }

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["problem"], "cov2d");
    assert_eq!(json["config"]["n"], 4096);
    assert_eq!(json["version"], env!("CARGO_PKG_VERSION"));
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let keys = ["\"version\"", "\"config\"", "\"structure\"", "\"phases\"", "\"levels\"", "\"backward_error\""];
    let pos: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "key order");

    // Phase times account for the factorization time.
    let sum = r.phases.factorization.total();
    let total = r.phases.factorization_total_s;
    assert!((sum - total).abs() <= 0.05 * total, "{sum} vs {total}");
}

fn is_c_exponent(s: &str) -> bool {
    let Some((m, e)) = s.split_once('e') else { return false };
    let m = m.strip_prefix('-').unwrap_or(m);
    let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    let mant_ok = m.len() == 8 && m.as_bytes()[1] == b'.' && digits(&m[..1]) && digits(&m[2..]);
    let exp_ok = (e.starts_with('+') || e.starts_with('-')) && e.len() >= 3 && digits(&e[1..]);
    mant_ok && exp_ok
}

#[test]
fn per_level_rows_match_the_partition() {
    let cfg = ExperimentConfig::preset(Problem::Cov2d, 4096);
    let p = harness::build(&cfg).unwrap();
    let r = harness::factorize_and_solve(&cfg, &p).unwrap();
    let part = p.partition();
    let leaf = &r.levels[0];
    assert_eq!(leaf.level, part.depth());
    assert_eq!(leaf.csp, part.sparsity_constant(part.depth()).unwrap());
    for l in &r.levels {
        assert_eq!(l.csp, part.sparsity_constant(l.level).unwrap());
    }
    assert_eq!(r.structure.max_csp, part.max_sparsity_constant());
    assert_eq!(r.h2_bytes, p.h2.stored_bytes());
}

#[test]
fn repeated_runs_are_identical() {
    let mut cfg = ExperimentConfig::preset(Problem::Helmholtz3d, 2048);
    cfg.deterministic = true;
    let a = harness::run(&cfg).unwrap();
    let b = harness::run(&cfg).unwrap();
    assert_eq!(a.solution, b.solution);
    assert_eq!(a.backward_error.to_bits(), b.backward_error.to_bits());
    assert_eq!(a.factor_bytes, b.factor_bytes);
    assert_eq!(a.structure.rank_per_level, b.structure.rank_per_level);
}

#[test]
fn validation_respects_the_oracle_cap() {
    let mut cfg = ExperimentConfig::preset(Problem::Cov2d, 1024);
    cfg.oracle_cap = 512;
    assert!(matches!(harness::validate(&cfg), Err(H2Error::OracleCapExceeded { n: 1024, cap: 512 })));
}

#[test]
fn validation_on_a_small_problem() {
    let cfg = ExperimentConfig::preset(Problem::Cov2d, 512);
    let v = harness::validate(&cfg).unwrap();
    assert!(v.passed, "{v:?}");
    assert!(v.solution_error <= v.solution_tolerance);
}
