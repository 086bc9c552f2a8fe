mod common;

use common::{augment_case, block_system, orth_defect, random_matrix, random_orthogonal, rng, schur_case};
use h2factor::dense::thin_qr;
use h2factor::factorization::{
    augment_basis, eliminate_color, level_transition, live_bases, orthogonal_complement, partial_lu,
    project_cluster, skeletonize_color, ColorTimes, FillInStore, LevelD,
};
use h2factor::harness::{self, ExperimentConfig, Problem};
use h2factor::oracle::relative_error;
use h2factor::schedule::Workspace;
use h2factor::structure::greedy_coloring;
use h2factor::{
    factorize, generate_uniform_grid, solve, Admissibility, BlockPartition, ClusterTree, H2Matrix, KernelFamily,
    KernelSpec,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augment_matches_direct_svd(seed in any::<u64>(), m in 6usize..18, kfrac in 0.0f64..0.6, nblocks in 1usize..4) {
        let c = augment_case(seed, m, kfrac, nblocks);
        prop_assume!(c.is_some());
        let c = c.unwrap();
        prop_assert_eq!(c.added, c.expected);
        prop_assert!(c.keeps_prefix);
        prop_assert!(c.defect <= 1e-12);
        prop_assert!(c.angle <= 1e-8, "subspace angle {:e}", c.angle);
    }
}

#[test]
fn augment_without_fill_or_room_returns_basis() {
    let mut rng = rng(1);
    let v = thin_qr(random_matrix(&mut rng, 8, 3)).0;
    let (vt, added) = augment_basis(&v, &[], 1e-8);
    assert_eq!((added, vt), (0, v.clone()));

    let full = random_orthogonal(&mut rng, 6);
    let f = vec![random_matrix(&mut rng, 6, 4)];
    let (vt, added) = augment_basis(&full, &f, 0.0);
    assert_eq!((added, vt), (0, full));

    // Fill inside span(V) adds nothing.
    let inside = vec![&v * random_matrix(&mut rng, 3, 5)];
    let (_, added) = augment_basis(&v, &inside, 1e-10);
    assert_eq!(added, 0);
}

#[test]
fn augment_caps_at_cluster_size() {
    let mut rng = rng(2);
    let v = thin_qr(random_matrix(&mut rng, 5, 2)).0;
    let f = vec![random_matrix(&mut rng, 5, 20)];
    let (vt, added) = augment_basis(&v, &f, 0.0);
    assert_eq!(added, 3);
    assert!(orth_defect(&vt) < 1e-13);
}

#[test]
fn complement_puts_basis_last() {
    let v = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
    let q = orthogonal_complement(&v);
    assert_eq!(q.column(2).into_owned(), v.column(0).into_owned());
    assert!(orth_defect(&q) < 1e-15);

    let mut rng = rng(3);
    for (m, k) in [(7, 0), (7, 3), (7, 7)] {
        let v = if k > 0 { thin_qr(random_matrix(&mut rng, m, k)).0 } else { DMatrix::zeros(m, 0) };
        let q = orthogonal_complement(&v);
        assert_eq!(q.shape(), (m, m));
        assert!(orth_defect(&q) < 1e-13);
        assert!((q.columns(m - k, k) - &v).norm() < 1e-15);
    }
}

#[test]
fn projection_rotates_rows_and_columns_of_the_cluster() {
    let mut rng = rng(4);
    let mut d = LevelD::new(3, vec![3, 2, 4]);
    let a00 = random_matrix(&mut rng, 3, 3);
    let a00 = &a00 + a00.transpose();
    let a01 = random_matrix(&mut rng, 3, 2);
    let a12 = random_matrix(&mut rng, 2, 4);
    let a11 = DMatrix::identity(2, 2);
    d.insert(0, 0, a00.clone());
    d.insert(0, 1, a01.clone());
    d.insert(1, 1, a11.clone());
    d.insert(1, 2, a12.clone());
    let mut f = FillInStore::new(3, 3);
    let f02 = random_matrix(&mut rng, 3, 4);
    f.add(2, 0, f02.transpose());
    let q = random_orthogonal(&mut rng, 3);
    project_cluster(&mut d, &mut f, 0, &q);

    assert!((d.get(0, 0).unwrap().to_matrix() - q.transpose() * &a00 * &q).norm() < 1e-13);
    assert!((d.get(0, 1).unwrap().to_matrix() - q.transpose() * &a01).norm() < 1e-13);
    assert!((d.get(1, 0).unwrap().to_matrix() - a01.transpose() * &q).norm() < 1e-13);
    assert_eq!(d.get(1, 1).unwrap().to_matrix(), a11);
    assert_eq!(d.get(1, 2).unwrap().to_matrix(), a12);
    assert!((f.get(0, 2).unwrap().to_matrix() - q.transpose() * &f02).norm() < 1e-13);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partial_lu_matches_dense_schur(seed in any::<u64>(), k in 3usize..6, first in any::<bool>()) {
        let c = schur_case(seed, k, first);
        prop_assert!(c.skeleton_ok);
        prop_assert!(c.rel_err <= 1e-12, "schur mismatch {:e} (r = {})", c.rel_err, c.r);
        prop_assert!(c.fill_outside_graph);
        prop_assert!(c.panel_shapes_ok);
    }

    #[test]
    fn color_batch_equals_sequential_elimination(seed in any::<u64>(), k in 4usize..7) {
        let mut rng = rng(seed);
        let sys = block_system(&mut rng, k);
        let coloring = greedy_coloring(&sys.graph);
        let color = coloring.colors.iter().max_by_key(|c| c.len()).unwrap().clone();
        prop_assume!(color.len() >= 2);
        let qs: Vec<DMatrix<f64>> = color.iter().map(|&c| random_orthogonal(&mut rng, sys.sizes[c])).collect();
        let sk: Vec<usize> = color.iter().map(|&c| rng.random_range(0..=sys.sizes[c])).collect();

        let (mut d1, mut f1) = (sys.d.clone(), sys.f.clone());
        for (&c, q) in color.iter().zip(&qs) {
            project_cluster(&mut d1, &mut f1, c, q);
        }
        let (mut d2, mut f2) = (d1.clone(), f1.clone());
        let batch = eliminate_color(&mut d1, &mut f1, &sys.graph, &color, qs.clone(), &sk).unwrap();
        for ((&c, q), &s) in color.iter().zip(qs).zip(&sk) {
            let one = partial_lu(&mut d2, &mut f2, &sys.graph, c, q, s).unwrap();
            let b = batch.iter().find(|b| b.cluster == c).unwrap();
            prop_assert_eq!(&one.x, &b.x);
        }
        for (key, m) in d1.blocks().iter() {
            prop_assert_eq!(m, &d2.get(key.0, key.1).unwrap().to_matrix());
        }
        prop_assert_eq!(f1.len(), f2.len());
        for (key, m) in f1.blocks().iter() {
            prop_assert_eq!(m, &f2.get(key.0, key.1).unwrap().to_matrix());
        }
    }
}

fn cov2d(n: usize) -> (ExperimentConfig, harness::BuiltProblem) {
    let cfg = ExperimentConfig::preset(Problem::Cov2d, n);
    let p = harness::build(&cfg).unwrap();
    (cfg, p)
}

#[test]
fn leaf_level_fill_is_admissible_and_fully_accounted() {
    let (cfg, p) = cov2d(1024);
    let h2 = &p.h2;
    let depth = h2.depth();
    let leaf_sizes: Vec<usize> = h2.tree().leaves().iter().map(|c| c.len()).collect();
    let mut d = LevelD::new(depth, leaf_sizes);
    for (&(i, j), b) in h2.dense_blocks().iter() {
        d.insert(i, j, b.clone());
    }
    let mut f = FillInStore::new(depth, d.num_clusters());
    let bases = live_bases(h2, depth, None);
    let graph = h2.partition().level_graph(depth);
    let coloring = greedy_coloring(&graph);
    assert!(coloring.is_valid_for(&graph));
    let eps_fill = cfg.eps_lu * h2.estimate_norm2();
    let mut ws = Workspace::new();
    let mut times = ColorTimes::default();
    for color in &coloring.colors {
        let fs = skeletonize_color(&bases, &mut d, &mut f, &graph, color, eps_fill, &mut ws, &mut times).unwrap();
        for c in &fs {
            assert!(orth_defect(&c.q) <= 1e-12 * c.size() as f64);
            assert!(c.skeleton() >= h2.rank(depth, c.cluster));
        }
        assert!(f.keys_admissible(h2.partition()));
    }
    assert!(!f.is_empty());
    let (dp, fp, report) = level_transition(h2, &d, &f).unwrap();
    assert_eq!(report.fill_merged + report.fill_swept, f.len());
    assert!(report.admissible_merged > 0);
    assert!(fp.keys_admissible(h2.partition()));
    assert!(dp.shapes_consistent());
    let parent_live: usize = dp.live_sizes().iter().sum();
    assert_eq!(parent_live, d.live_sizes().iter().sum::<usize>());
}

#[test]
fn transition_rejects_unfinished_level() {
    let (_, p) = cov2d(1024);
    let h2 = &p.h2;
    let depth = h2.depth();
    let sizes: Vec<usize> = h2.tree().leaves().iter().map(|c| c.len()).collect();
    let d = LevelD::new(depth, sizes);
    let f = FillInStore::new(depth, d.num_clusters());
    assert!(level_transition(h2, &d, &f).is_err());
}

#[test]
fn cov2d_backward_error_against_dense_oracle() {
    let cfg = ExperimentConfig::preset(Problem::Cov2d, 1024);
    let v = harness::validate(&cfg).unwrap();
    assert!(v.backward_error <= 1e-5, "e_b = {:e}", v.backward_error);
    assert!(v.solution_error <= 1e-4, "x error = {:e}", v.solution_error);
}

#[test]
fn skeletonized_3d_levels_against_dense_oracle() {
    // Small leaves make the 3D partition admissible below the root.
    let mut cfg = ExperimentConfig::preset(Problem::Cov3d, 1024);
    cfg.m = 16;
    let p = harness::build(&cfg).unwrap();
    let z = factorize(&p.h2, cfg.eps_lu).unwrap();
    assert!(!z.levels.is_empty());
    assert!(z.stats.fill_blocks > 0);
    let v = harness::validate(&cfg).unwrap();
    assert!(v.passed, "{v:?}");
}

#[test]
fn dense_only_problem_is_solved_exactly() {
    for n in [1, 7, 64] {
        let mut cfg = ExperimentConfig::preset(Problem::Laplace2d, n);
        cfg.m = 64;
        let p = harness::build(&cfg).unwrap();
        let z = factorize(&p.h2, cfg.eps_lu).unwrap();
        assert!(z.levels.is_empty());
        assert_eq!(z.top.lu.dim(), n);
        let x = harness::reference_solution(&cfg, p.tree());
        let b = p.h2.matvec(&x).unwrap();
        let xt = solve(&z, &b).unwrap();
        assert!(relative_error(&xt, &x) < 1e-12);
    }
}

#[test]
fn near_identity_kernel() {
    let points = generate_uniform_grid(1024, 2).unwrap();
    let tree = ClusterTree::build(&points, 64).unwrap();
    let part = BlockPartition::build(&tree, Admissibility::new(0.9));
    let spec = KernelSpec::for_points(KernelFamily::ExpCovariance { length: 1e-4 }, 1e-2, &points).unwrap();
    let mut h2 = H2Matrix::build(tree, part, &spec, 8).unwrap();
    h2.orthogonalize_recompress(1e-7);
    let z = factorize(&h2, 1e-6).unwrap();
    let x: Vec<f64> = (0..1024).map(|i| (i as f64).sin()).collect();
    let b = h2.matvec(&x).unwrap();
    let xt = solve(&z, &b).unwrap();
    assert!(relative_error(&xt, &x) < 1e-10);
    assert!(z.levels.iter().all(|l| l.max_skeleton() <= 64));
}

#[test]
fn factorization_is_identical_across_thread_counts() {
    let mut cfg = ExperimentConfig::preset(Problem::Cov2d, 2048);
    cfg.deterministic = true;
    let runs: Vec<_> = [1, 4]
        .iter()
        .map(|&t| {
            let mut c = cfg.clone();
            c.threads = t;
            harness::run(&c).unwrap()
        })
        .collect();
    assert_eq!(runs[0].solution, runs[1].solution);
    assert_eq!(runs[0].backward_error.to_bits(), runs[1].backward_error.to_bits());
    assert_eq!(runs[0].factor_bytes, runs[1].factor_bytes);
    let ranks = |r: &harness::RunReport| r.levels.iter().map(|l| (l.level, l.csp, l.max_rank)).collect::<Vec<_>>();
    assert_eq!(ranks(&runs[0]), ranks(&runs[1]));
}

#[test]
fn factorize_rejects_bad_threshold() {
    let (_, p) = cov2d(256);
    assert!(factorize(&p.h2, -1.0).is_err());
    assert!(factorize(&p.h2, f64::NAN).is_err());
}

#[test]
fn stored_factor_accounting() {
    let (cfg, p) = cov2d(1024);
    let z = factorize(&p.h2, cfg.eps_lu).unwrap();
    assert_eq!(z.stats.factor_bytes, z.stored_bytes());
    assert!(z.orthogonality_defect() <= 1e-12);
    let phases = z.stats.phases.total();
    assert!(phases <= z.stats.total_s * 1.0001);
    assert!(phases >= 0.95 * z.stats.total_s);
    for lf in &z.levels {
        assert_eq!(lf.skeleton_indices().len(), lf.skeleton.iter().sum::<usize>());
        let n: usize = lf.colors.iter().map(Vec::len).sum();
        assert_eq!(n, lf.entry_live.len());
    }
}
