use super::{check_finite, finalize, Norm, SolveReport, SolverConfig, SolverKind, StepRule};
use crate::assembly::LeastSquaresProblem;
use crate::volcore::{ScalarVolume, TransferFunction};
use crate::Result;

/// `∇E(x)`: `2Aᵀ(Ax − b)` for l2, `Aᵀ sign(Ax − b)` for l1, plus `2λx`.
pub fn objective_gradient(problem: &LeastSquaresProblem, x: &[f64], norm: Norm, ridge: f64) -> Result<Vec<f64>> {
    let mut r = problem.residual(x)?;
    for v in r.iter_mut() {
        *v = match norm {
            Norm::L2 => -2.0 * *v,
            Norm::L1 => -v.signum() * (*v != 0.0) as u8 as f64,
        };
    }
    let mut g = problem.system.apply_transpose(&r)?;
    for (gi, xi) in g.iter_mut().zip(x) {
        *gi += 2.0 * ridge * xi;
    }
    Ok(g)
}

fn energy(problem: &LeastSquaresProblem, x: &[f64], norm: Norm) -> Result<f64> {
    match norm {
        Norm::L2 => problem.objective(x),
        Norm::L1 => problem.objective_l1(x),
    }
}

pub fn solve_grad_desc(
    vol_o: &ScalarVolume,
    vol_r: &ScalarVolume,
    tf_r: &TransferFunction,
    n_t: usize,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    solve_grad_desc_problem(&LeastSquaresProblem::new(vol_o, vol_r, tf_r, n_t)?, cfg)
}

/// Projected gradient descent with a constant rate or Adam. The best iterate
/// seen is returned; for l2 the loop stops once the projected gradient
/// `‖x − P(x − ∇E)‖` drops below `tol · ‖2Aᵀb‖`.
pub fn solve_grad_desc_problem(problem: &LeastSquaresProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let sys = &problem.system;
    let n_t = sys.n_t();
    let empty: Vec<bool> = sys.column_norms_sq().iter().map(|&c| c == 0.0).collect();
    let atb = sys.apply_transpose(&problem.target)?;
    let threshold = cfg.rel_tolerance * 2.0 * atb.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut x: Vec<f64> = cfg.initial(n_t)?.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut best = x.clone();
    let mut best_energy = f64::INFINITY;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let e = energy(problem, &x, cfg.norm)?;
        if !e.is_finite() {
            return Err(crate::Error::NonFinite("grad_desc"));
        }
        history.push(e);
        if e < best_energy {
            best_energy = e;
            best.clone_from(&x);
        }
        let g = objective_gradient(problem, &x, cfg.norm, cfg.tikhonov)?;
        check_finite(&g, "grad_desc")?;
        if cfg.norm == Norm::L2 {
            let pg: f64 = x.iter().zip(&g).map(|(xi, gi)| (xi - (xi - gi).clamp(0.0, 1.0)).powi(2)).sum::<f64>().sqrt();
            if pg <= threshold {
                converged = true;
                break;
            }
        }
        if iterations == cfg.max_iters() {
            break;
        }
        iterations += 1;
        match cfg.step {
            StepRule::Constant { rate } => {
                for (xi, gi) in x.iter_mut().zip(&g) {
                    *xi = (*xi - rate * gi).clamp(0.0, 1.0);
                }
            }
            StepRule::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(iterations as i32);
                let c2 = 1.0 - beta2.powi(iterations as i32);
                for i in 0..x.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    x[i] = (x[i] - step).clamp(0.0, 1.0);
                }
            }
        }
        check_finite(&x, "grad_desc")?;
    }

    let (x, clamped) = finalize(&best, &empty);
    Ok(SolveReport {
        solver: SolverKind::GradDesc.name().to_string(),
        solution: TransferFunction::from_linear(&x)?,
        iterations,
        objective: energy(problem, &x, cfg.norm)?,
        residual_history: history,
        clamped,
        condition_estimate: None,
        converged,
        fell_back_from: None,
    })
}
