mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use tfopt::assembly::{assemble_gram, GramSystem, LeastSquaresProblem};
use tfopt::solvers::*;
use tfopt::volcore::{ScalarVolume, TransferFunction};
use tfopt::Error;

const ALL: [SolverKind; 4] = [SolverKind::NormalDirect, SolverKind::Cgls, SolverKind::GradDesc, SolverKind::AdmmQp];

fn instance(seed: u64) -> (ScalarVolume, ScalarVolume, TransferFunction) {
    let mut r = rng(seed);
    let vo = random_volume(&mut r, [8, 8, 8]);
    let vr = random_volume(&mut r, [8, 8, 8]);
    (vo, vr, random_tf(&mut r, 8))
}

fn solve(kind: SolverKind, vo: &ScalarVolume, vr: &ScalarVolume, tf: &TransferFunction, n_t: usize) -> SolveReport {
    optimize_voxel(vo, vr, tf, n_t, &SolverConfig::new(kind)).unwrap()
}

#[test]
fn direct_reproduces_reference_on_identity_case() {
    let n_t = 6;
    // every voxel sits exactly on a bin center
    let vol = ScalarVolume::from_fn([n_t, 3, 2], [1.0; 3], |x, _, _| x as f64).unwrap();
    let mut r = rng(10);
    let tf = random_tf(&mut r, n_t);
    let rep = solve(SolverKind::NormalDirect, &vol, &vol, &tf, n_t);
    assert!(max_abs_diff(&rep.solution.to_linear(), &tf.to_linear()) < 1e-10);
    assert!(!rep.clamped);
}

#[test]
fn ramp_reversal_matches_dense_oracle() {
    let (up, down) = ramp_pair(16);
    let n_t = 8;
    let mut r = rng(11);
    let tf_r = random_tf(&mut r, n_t);
    let want = oracle(&down, &up, &tf_r, n_t);
    for kind in ALL {
        let got = solve(kind, &down, &up, &tf_r, n_t).solution;
        assert!(max_abs_diff(&got.to_linear(), &want) < 0.02, "{kind:?}");
        for k in 1..n_t - 1 {
            for ch in 0..4 {
                assert!((got.entries()[k][ch] - tf_r.entries()[n_t - 1 - k][ch]).abs() < 0.02, "{kind:?}");
            }
        }
    }
}

/// Densities in `[0, 0.25] ∪ [0.75, 1]` with `n_t = 5` never touch entry 2.
fn gapped_instance() -> (ScalarVolume, ScalarVolume, TransferFunction) {
    let mut r = rng(12);
    let mut data: Vec<f64> = (0..200)
        .map(|_| {
            let t = 0.25 * r.random::<f64>();
            if r.random::<bool>() { t } else { 1.0 - t }
        })
        .collect();
    data[0] = 0.0;
    data[1] = 1.0;
    let vo = ScalarVolume::new([200, 1, 1], [1.0; 3], data).unwrap();
    let vr = ScalarVolume::from_fn([200, 1, 1], [1.0; 3], |_, _, _| r.random::<f64>()).unwrap();
    let tf = random_tf(&mut r, 4);
    (vo, vr, tf)
}

#[test]
fn empty_bin_is_filled_from_neighbors() {
    let (vo, vr, tf) = gapped_instance();
    let gs = assemble_gram(&vo, &vr, &tf, 5).unwrap();
    assert_eq!(gs.diag[2], 0.0);
    let raw = unclamped_normal_solution(&gs, 0.0).unwrap();

    // dense regularized system: Gram rows for referenced bins, fill row for bin 2
    let fill = 1e-6 * gs.diag.iter().copied().fold(0.0, f64::max);
    let mut m = DMatrix::<f64>::zeros(5, 5);
    for k in 0..5 {
        m[(k, k)] = gs.diag[k];
        if k + 1 < 5 {
            m[(k, k + 1)] = gs.offdiag[k];
            m[(k + 1, k)] = gs.offdiag[k];
        }
    }
    m[(2, 2)] = fill;
    m[(2, 1)] = -0.5 * fill;
    m[(2, 3)] = -0.5 * fill;
    // the unregularized referenced-only solution
    let keep = [0usize, 1, 3, 4];
    let sub = DMatrix::from_fn(4, 4, |i, j| m[(keep[i], keep[j])]);
    for ch in 0..4 {
        let mut rhs = DVector::from_column_slice(&gs.rhs[ch]);
        rhs[2] = 0.0;
        let x = m.clone().lu().solve(&rhs).unwrap();
        let xs = sub.clone().lu().solve(&DVector::from_fn(4, |i, _| gs.rhs[ch][keep[i]])).unwrap();
        for k in 0..5 {
            assert!((raw[4 * k + ch] - x[k]).abs() < 1e-8);
        }
        for (i, &k) in keep.iter().enumerate() {
            assert!((raw[4 * k + ch] - xs[i]).abs() < 1e-8);
        }
        assert!((raw[8 + ch] - 0.5 * (raw[4 + ch] + raw[12 + ch])).abs() < 1e-12);
    }
}

#[test]
fn all_solvers_fill_empty_bins_identically() {
    let (vo, vr, tf) = gapped_instance();
    let direct = solve(SolverKind::NormalDirect, &vo, &vr, &tf, 5).solution.to_linear();
    for kind in [SolverKind::Cgls, SolverKind::GradDesc, SolverKind::AdmmQp] {
        let got = solve(kind, &vo, &vr, &tf, 5).solution.to_linear();
        assert!(max_abs_diff(&got, &direct) < 1e-3, "{kind:?}");
        for ch in 0..4 {
            assert!((got[8 + ch] - 0.5 * (got[4 + ch] + got[12 + ch])).abs() < 1e-12);
        }
    }
}

#[test]
fn regularization_is_local() {
    let (vo, vr, tf) = gapped_instance();
    let gs = assemble_gram(&vo, &vr, &tf, 5).unwrap();
    let raw = unclamped_normal_solution(&gs, 0.0).unwrap();
    // same system with the empty bin removed from the problem entirely
    for (k, ch) in [(0usize, 0usize), (4, 3)] {
        let keep = [0usize, 1, 3, 4];
        let sub = DMatrix::from_fn(4, 4, |i, j| {
            let (a, b) = (keep[i], keep[j]);
            if a == b {
                gs.diag[a]
            } else if b == a + 1 {
                gs.offdiag[a]
            } else if a == b + 1 {
                gs.offdiag[b]
            } else {
                0.0
            }
        });
        let xs = sub.lu().solve(&DVector::from_fn(4, |i, _| gs.rhs[ch][keep[i]])).unwrap();
        let pos = keep.iter().position(|&q| q == k).unwrap();
        assert!((raw[4 * k + ch] - xs[pos]).abs() < 1e-8);
    }
}

#[test]
fn cgls_agrees_with_direct() {
    for seed in 0..5 {
        let (vo, vr, tf) = instance(seed);
        let a = solve(SolverKind::NormalDirect, &vo, &vr, &tf, 8).solution.to_linear();
        let b = solve(SolverKind::Cgls, &vo, &vr, &tf, 8).solution.to_linear();
        assert!(max_abs_diff(&a, &b) < 1e-4);
    }
}

#[test]
fn cgls_recovers_planted_solution() {
    let (vo, vr, _) = instance(20);
    let mut r = rng(21);
    let x_star: Vec<f64> = (0..32).map(|_| r.random::<f64>()).collect();
    let mut problem = LeastSquaresProblem::new(&vo, &vr, &TransferFunction::ramp(2, 1.0).unwrap(), 8).unwrap();
    problem.target = problem.system.apply(&x_star).unwrap();
    let rep = solve_cgls_problem(&problem, &SolverConfig::new(SolverKind::Cgls)).unwrap();
    assert!(rep.converged);
    assert!(max_abs_diff(&rep.solution.to_linear(), &x_star) < 1e-6);
}

#[test]
fn cgls_started_at_solution_stops_immediately() {
    let (vo, vr, tf) = instance(22);
    let gs = assemble_gram(&vo, &vr, &tf, 8).unwrap();
    let x = unclamped_normal_solution(&gs, 0.0).unwrap();
    let cfg = SolverConfig { initial_guess: Some(x), ..SolverConfig::new(SolverKind::Cgls) };
    let rep = solve_cgls(&vo, &vr, &tf, 8, &cfg).unwrap();
    assert!(rep.iterations <= 1);
    assert!(rep.converged);
}

#[test]
fn cgls_history_is_non_increasing() {
    let (vo, vr, tf) = instance(23);
    let rep = solve(SolverKind::Cgls, &vo, &vr, &tf, 8);
    for w in rep.residual_history.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12));
    }
    let direct = solve(SolverKind::NormalDirect, &vo, &vr, &tf, 8);
    assert!(direct.residual_history[1] <= direct.residual_history[0]);
}

#[test]
fn gd_l2_matches_direct_on_ramp_reversal() {
    let (up, down) = ramp_pair(32);
    let n_t = 16;
    let tf_r = TransferFunction::ramp(n_t, 0.8).unwrap();
    let a = solve(SolverKind::NormalDirect, &down, &up, &tf_r, n_t);
    let b = solve(SolverKind::GradDesc, &down, &up, &tf_r, n_t);
    assert!(b.iterations <= 5000);
    assert!(max_abs_diff(&a.solution.to_linear(), &b.solution.to_linear()) < 0.02);
}

#[test]
fn gradient_vanishes_at_interior_minimizer() {
    let (vo, vr, tf) = instance(24);
    let problem = LeastSquaresProblem::new(&vo, &vr, &tf, 8).unwrap();
    let gs = assemble_gram(&vo, &vr, &tf, 8).unwrap();
    let x = unclamped_normal_solution(&gs, 0.0).unwrap();
    assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
    let g = objective_gradient(&problem, &x, Norm::L2, 0.0).unwrap();
    let atb = problem.system.apply_transpose(&problem.target).unwrap();
    let scale = atb.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= 1e-6 * scale);
}

#[test]
fn l1_resists_a_single_outlier() {
    let dims = [4, 4, 4];
    let mut r = rng(25);
    let vo = random_volume(&mut r, dims);
    let n_t = 4;
    let tf_r = random_tf(&mut r, n_t);
    // a clean reference equal to vo, and a copy with one corrupted voxel
    let clean = vo.clone();
    let mut data = vo.data().to_vec();
    let (imin, imax) = (0..64).fold((0, 0), |(a, b), i| (if data[i] < data[a] { i } else { a }, if data[i] > data[b] { i } else { b }));
    let victim = (0..64).find(|&i| i != imin && i != imax && data[i] < 0.5).unwrap();
    data[victim] = data[imax];
    let noisy = ScalarVolume::new(dims, [1.0; 3], data).unwrap();

    let truth = solve(SolverKind::NormalDirect, &vo, &clean, &tf_r, n_t).solution.to_linear();
    let l2 = solve(SolverKind::NormalDirect, &vo, &noisy, &tf_r, n_t).solution.to_linear();
    let cfg = SolverConfig { norm: Norm::L1, ..SolverConfig::new(SolverKind::GradDesc) };
    let l1 = optimize_voxel(&vo, &noisy, &tf_r, n_t, &cfg).unwrap().solution.to_linear();
    let dist = |a: &[f64]| a.iter().zip(&truth).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    assert!(dist(&l1) < dist(&l2), "l1 {} l2 {}", dist(&l1), dist(&l2));
}

#[test]
fn admm_matches_direct_when_interior() {
    for seed in 30..35 {
        let (vo, vr, tf) = instance(seed);
        let gs = assemble_gram(&vo, &vr, &tf, 8).unwrap();
        let d = solve_normal_direct(&gs, &SolverConfig::default()).unwrap();
        let a = solve_admm_qp(&gs, &SolverConfig::new(SolverKind::AdmmQp)).unwrap();
        assert!(!d.clamped && !a.clamped && a.converged);
        assert!(max_abs_diff(&d.solution.to_linear(), &a.solution.to_linear()) < 1e-6);
    }
}

#[test]
fn admm_respects_upper_bound_with_kkt() {
    let (vo, vr, tf) = instance(36);
    let mut gs = assemble_gram(&vo, &vr, &tf, 8).unwrap();
    for rhs in gs.rhs.iter_mut() {
        for v in rhs.iter_mut() {
            *v *= 2.5;
        }
    }
    let raw = unclamped_normal_solution(&gs, 0.0).unwrap();
    assert!(raw.iter().any(|&v| v > 1.0));
    let rep = solve_admm_qp(&gs, &SolverConfig::new(SolverKind::AdmmQp)).unwrap();
    assert!(rep.converged);
    let x = rep.solution.to_linear();
    assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(x.iter().any(|&v| v == 1.0));
    for ch in 0..4 {
        let xc: Vec<f64> = (0..8).map(|k| x[4 * k + ch]).collect();
        let gx = gs.matvec(&xc);
        for k in 0..8 {
            let grad = gx[k] - gs.rhs[ch][k];
            let scale = gs.rhs[ch][k].abs().max(1.0);
            if xc[k] == 1.0 {
                assert!(grad <= 1e-6 * scale);
            } else if xc[k] == 0.0 {
                assert!(grad >= -1e-6 * scale);
            } else {
                assert!(grad.abs() <= 1e-5 * scale, "{grad}");
            }
        }
    }
}

#[test]
fn admm_separable_quadratic() {
    let gs = GramSystem {
        diag: vec![1.0; 6],
        offdiag: vec![0.0; 5],
        rhs: std::array::from_fn(|_| vec![0.5; 6]),
        b_sq: [0.0; 4],
        voxel_count_used: 6,
    };
    let rep = solve_admm_qp(&gs, &SolverConfig::new(SolverKind::AdmmQp)).unwrap();
    for v in rep.solution.to_linear() {
        assert!((v - 0.5).abs() < 1e-9);
    }
}

fn diagonal_gram(diag: Vec<f64>) -> GramSystem {
    let n = diag.len();
    GramSystem { offdiag: vec![0.0; n - 1], rhs: std::array::from_fn(|_| vec![0.0; n]), b_sq: [0.0; 4], voxel_count_used: 0, diag }
}

#[test]
fn condition_of_simple_matrices() {
    assert!((condition_estimate(&diagonal_gram(vec![1.0; 5])) - 1.0).abs() < 1e-12);
    assert!((condition_estimate(&diagonal_gram(vec![1.0, 100.0])) - 100.0).abs() < 1e-9);
    let singular = GramSystem { offdiag: vec![0.25], ..diagonal_gram(vec![0.25, 0.25]) };
    assert!(condition_estimate(&singular).is_infinite());
}

#[test]
fn condition_matches_dense_eigensolver() {
    for seed in 40..45 {
        let (vo, vr, tf) = instance(seed);
        let gs = assemble_gram(&vo, &vr, &tf, 8).unwrap();
        let m = DMatrix::from_fn(8, 8, |i, j| {
            if i == j {
                gs.diag[i]
            } else if j == i + 1 {
                gs.offdiag[i]
            } else if i == j + 1 {
                gs.offdiag[j]
            } else {
                0.0
            }
        });
        let ev = m.symmetric_eigen().eigenvalues;
        let want = ev.max() / ev.min();
        let got = condition_estimate(&gs);
        assert!(((got - want) / want).abs() < 1e-6, "{got} {want}");
    }
}

#[test]
fn direct_falls_back_on_singular_system() {
    // every voxel halfway between entries 0 and 1, so their columns coincide
    let vo = ScalarVolume::new([3, 1, 1], [1.0; 3], vec![0.0, 0.5, 1.0]).unwrap();
    let half = ScalarVolume::new([3, 1, 1], [1.0; 3], vec![f64::NAN, 0.5, f64::NAN]).unwrap();
    let tf = TransferFunction::constant(2, [0.3, 0.6, 0.9, 0.5]).unwrap();
    let gs = assemble_gram(&vo, &half, &tf, 2).unwrap();
    assert!(matches!(solve_normal_direct(&gs, &SolverConfig::default()), Err(Error::SingularSystem { .. })));
    let strict = SolverConfig { auto_fallback: false, ..SolverConfig::default() };
    assert!(optimize_voxel(&vo, &half, &tf, 2, &strict).is_err());
    let rep = optimize_voxel(&vo, &half, &tf, 2, &SolverConfig::default()).unwrap();
    assert_eq!(rep.solver, "cgls");
    assert_eq!(rep.fell_back_from.as_deref(), Some("normal_direct"));
    assert!(rep.objective < 1e-12);
}

#[test]
fn solver_invariants_on_random_instances() {
    for seed in 50..55 {
        let (vo, vr, tf) = instance(seed);
        let problem = LeastSquaresProblem::new(&vo, &vr, &tf, 8).unwrap();
        let start = problem.objective(&vec![INITIAL_VALUE; 32]).unwrap();
        let gs = assemble_gram(&vo, &vr, &tf, 8).unwrap();
        assert!(condition_estimate(&gs) <= 1e6);
        let reports: Vec<SolveReport> = ALL.iter().map(|&k| solve(k, &vo, &vr, &tf, 8)).collect();
        let reference = reports[0].solution.to_linear();
        for rep in &reports {
            let x = rep.solution.to_linear();
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(max_abs_diff(&x, &reference) < 1e-3);
            assert!(rep.objective >= 0.0);
            let e = problem.objective(&x).unwrap();
            assert!(e < start);
            assert!((e - rep.objective).abs() <= 1e-9 * e.max(1.0));
        }
        assert!(!reports[0].clamped);
    }
}

#[test]
fn ridge_shrinks_towards_zero() {
    let (vo, vr, tf) = instance(60);
    let plain = solve(SolverKind::NormalDirect, &vo, &vr, &tf, 8).solution.to_linear();
    let cfg = SolverConfig { tikhonov: 50.0, ..SolverConfig::default() };
    let ridge = optimize_voxel(&vo, &vr, &tf, 8, &cfg).unwrap().solution.to_linear();
    let cg = optimize_voxel(&vo, &vr, &tf, 8, &SolverConfig { kind: SolverKind::Cgls, ..cfg.clone() }).unwrap().solution.to_linear();
    let admm = optimize_voxel(&vo, &vr, &tf, 8, &SolverConfig { kind: SolverKind::AdmmQp, ..cfg }).unwrap().solution.to_linear();
    let n = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    assert!(n(&ridge) < n(&plain));
    assert!(max_abs_diff(&ridge, &cg) < 1e-6);
    assert!(max_abs_diff(&ridge, &admm) < 1e-6);
}

#[test]
fn report_json_round_trip() {
    let (vo, vr, tf) = instance(61);
    let rep = solve(SolverKind::NormalDirect, &vo, &vr, &tf, 8);
    let text = serde_json::to_string(&rep).unwrap();
    let back: SolveReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, rep);
    let singular = GramSystem { offdiag: vec![0.25], ..diagonal_gram(vec![0.25, 0.25]) };
    let inf = SolveReport { condition_estimate: Some(condition_estimate(&singular)), ..rep };
    let back: SolveReport = serde_json::from_str(&serde_json::to_string(&inf).unwrap()).unwrap();
    assert!(back.condition_estimate.unwrap().is_infinite());
}

#[test]
fn constant_step_and_divergence() {
    let (vo, vr, tf) = instance(62);
    let gs = assemble_gram(&vo, &vr, &tf, 8).unwrap();
    let lmax = 2.0 * gs.diag.iter().copied().fold(0.0, f64::max) * 2.0;
    let cfg = SolverConfig { step: StepRule::Constant { rate: 1.0 / lmax }, ..SolverConfig::new(SolverKind::GradDesc) };
    let rep = optimize_voxel(&vo, &vr, &tf, 8, &cfg).unwrap();
    let direct = solve(SolverKind::NormalDirect, &vo, &vr, &tf, 8).solution.to_linear();
    assert!(max_abs_diff(&rep.solution.to_linear(), &direct) < 1e-3);
    // projection keeps even a huge step bounded
    let wild = SolverConfig { step: StepRule::Constant { rate: 1e6 }, max_iters: Some(50), ..cfg };
    let rep = optimize_voxel(&vo, &vr, &tf, 8, &wild).unwrap();
    assert!(rep.solution.to_linear().iter().all(|v| (0.0..=1.0).contains(v)));
}
