use super::condition::{extreme_eigenvalues, referenced_block};
use super::tridiag::Tridiagonal;
use super::{fill_unreferenced, SolveReport, SolverConfig, SolverKind};
use crate::assembly::GramSystem;
use crate::volcore::TransferFunction;
use crate::{Error, Result};

const ABS_TOLERANCE: f64 = 1e-10;

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// ADMM for `min ½xᵀQx + cᵀx` subject to `0 ≤ x ≤ 1`, with `Q` the Gram matrix
/// (plus ridge) over referenced bins and `c = −Aᵀb`. The returned point is the
/// projected iterate, so it satisfies the box exactly.
///
/// The penalty is `ρ √(λ_min λ_max)` of `Q`, with `ρ` from the config as a
/// relative factor.
pub fn solve_admm_qp(gs: &GramSystem, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let n_t = gs.n_t();
    let (idx, d, e) = referenced_block(gs, cfg.tikhonov);
    if idx.is_empty() {
        return Err(Error::EmptySystem);
    }
    let n = idx.len();
    let (lo, hi) = extreme_eigenvalues(gs, cfg.tikhonov);
    let rho = cfg.admm_rho * if lo > 1e-6 * hi { (lo * hi).sqrt() } else { 1e-3 * hi };
    let q = Tridiagonal::symmetric(d.clone(), &e);
    let shifted = Tridiagonal::symmetric(d.iter().map(|v| v + rho).collect(), &e);
    let factor = shifted.factor()?;

    let c: Vec<Vec<f64>> = (0..4).map(|ch| idx.iter().map(|&k| -gs.rhs[ch][k]).collect()).collect();
    let x0 = cfg.initial(n_t)?;
    let mut z: Vec<Vec<f64>> = (0..4).map(|ch| idx.iter().map(|&k| x0[4 * k + ch].clamp(0.0, 1.0)).collect()).collect();
    let mut u = vec![vec![0.0; n]; 4];
    let mut x = z.clone();
    let objective = |z: &[Vec<f64>]| -> f64 {
        let mut full = vec![0.0; 4 * n_t];
        for ch in 0..4 {
            for (p, &k) in idx.iter().enumerate() {
                full[4 * k + ch] = z[ch][p];
            }
        }
        gs.objective(&full)
    };
    let mut history = vec![objective(&z)];
    let c_norm = norm(&c.concat());
    let sqrt_n = ((4 * n) as f64).sqrt();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters() {
        iterations += 1;
        let z_prev = z.clone();
        for ch in 0..4 {
            let rhs: Vec<f64> = (0..n).map(|p| rho * (z[ch][p] - u[ch][p]) - c[ch][p]).collect();
            x[ch] = factor.solve(&rhs);
            for p in 0..n {
                z[ch][p] = (x[ch][p] + u[ch][p]).clamp(0.0, 1.0);
                u[ch][p] += x[ch][p] - z[ch][p];
            }
        }
        let (xf, zf, uf) = (x.concat(), z.concat(), u.concat());
        if !xf.iter().chain(&uf).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("admm_qp"));
        }
        history.push(objective(&z));
        let primal = norm(&xf.iter().zip(&zf).map(|(a, b)| a - b).collect::<Vec<_>>());
        let dual = rho * norm(&zf.iter().zip(z_prev.concat()).map(|(a, b)| a - b).collect::<Vec<_>>());
        let qx_norm = norm(&x.iter().flat_map(|xc| q.matvec(xc)).collect::<Vec<_>>());
        let eps_pri = sqrt_n * ABS_TOLERANCE + cfg.rel_tolerance * norm(&xf).max(norm(&zf));
        let eps_dual = sqrt_n * ABS_TOLERANCE + cfg.rel_tolerance * qx_norm.max(rho * norm(&uf)).max(c_norm);
        if primal <= eps_pri && dual <= eps_dual {
            converged = true;
            break;
        }
    }

    let mut out = vec![0.0; 4 * n_t];
    for ch in 0..4 {
        for (p, &k) in idx.iter().enumerate() {
            out[4 * k + ch] = z[ch][p];
        }
    }
    let clamped = (0..4).any(|ch| x[ch].iter().zip(&z[ch]).any(|(a, b)| (a - b).abs() > 1e-9 && !(0.0..=1.0).contains(a)));
    fill_unreferenced(&mut out, &gs.empty_bins());
    Ok(SolveReport {
        solver: SolverKind::AdmmQp.name().to_string(),
        solution: TransferFunction::from_linear(&out)?,
        iterations,
        objective: gs.objective(&out),
        residual_history: history,
        clamped,
        condition_estimate: None,
        converged,
        fell_back_from: None,
    })
}
