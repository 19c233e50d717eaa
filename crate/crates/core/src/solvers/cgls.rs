use super::{check_finite, finalize, SolveReport, SolverConfig, SolverKind};
use crate::assembly::LeastSquaresProblem;
use crate::volcore::{ScalarVolume, TransferFunction};
use crate::Result;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn solve_cgls(
    vol_o: &ScalarVolume,
    vol_r: &ScalarVolume,
    tf_r: &TransferFunction,
    n_t: usize,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    solve_cgls_problem(&LeastSquaresProblem::new(vol_o, vol_r, tf_r, n_t)?, cfg)
}

/// Jacobi-preconditioned CGLS on `min ‖b − A x‖² + λ‖x‖²`, using only
/// products with `A` and `Aᵀ`. Stops once `‖Aᵀr − λx‖ ≤ tol ‖Aᵀb‖`.
pub fn solve_cgls_problem(problem: &LeastSquaresProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let sys = &problem.system;
    let n_t = sys.n_t();
    let lambda = cfg.tikhonov;
    let col_sq = sys.column_norms_sq();
    let empty: Vec<bool> = col_sq.iter().map(|&c| c == 0.0).collect();
    let precond: Vec<f64> = (0..4 * n_t)
        .map(|i| {
            let c = col_sq[i / 4] + lambda;
            if col_sq[i / 4] == 0.0 { 1.0 } else { 1.0 / c.sqrt() }
        })
        .collect();

    let mut x = cfg.initial(n_t)?;
    let mut r = problem.residual(&x)?;
    let normal_residual = |r: &[f64], x: &[f64]| -> Result<Vec<f64>> {
        let mut g = sys.apply_transpose(r)?;
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi -= lambda * xi;
        }
        Ok(g)
    };
    let scale = dot(&sys.apply_transpose(&problem.target)?, &sys.apply_transpose(&problem.target)?).sqrt();
    let threshold = cfg.rel_tolerance * scale.max(f64::MIN_POSITIVE);
    let penalty = |r: &[f64], x: &[f64]| dot(r, r) + lambda * dot(x, x);

    let mut nr = normal_residual(&r, &x)?;
    let mut s: Vec<f64> = nr.iter().zip(&precond).map(|(a, d)| a * d).collect();
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut history = vec![penalty(&r, &x)];
    let mut iterations = 0;
    let mut converged = dot(&nr, &nr).sqrt() <= threshold;

    while !converged && iterations < cfg.max_iters() {
        let t: Vec<f64> = p.iter().zip(&precond).map(|(a, d)| a * d).collect();
        let q = sys.apply(&t)?;
        let denom = dot(&q, &q) + lambda * dot(&t, &t);
        if denom <= 0.0 {
            break;
        }
        let alpha = gamma / denom;
        for (xi, ti) in x.iter_mut().zip(&t) {
            *xi += alpha * ti;
        }
        for (ri, qi) in r.iter_mut().zip(&q) {
            *ri -= alpha * qi;
        }
        check_finite(&x, "cgls")?;
        iterations += 1;
        nr = normal_residual(&r, &x)?;
        s = nr.iter().zip(&precond).map(|(a, d)| a * d).collect();
        let gamma_next = dot(&s, &s);
        let beta = gamma_next / gamma;
        gamma = gamma_next;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        history.push(penalty(&r, &x));
        converged = dot(&nr, &nr).sqrt() <= threshold;
    }

    let (x, clamped) = finalize(&x, &empty);
    Ok(SolveReport {
        solver: SolverKind::Cgls.name().to_string(),
        solution: TransferFunction::from_linear(&x)?,
        iterations,
        objective: problem.objective(&x)?,
        residual_history: history,
        clamped,
        condition_estimate: None,
        converged,
        fell_back_from: None,
    })
}
