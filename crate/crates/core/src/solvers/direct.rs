use super::{condition_estimate_with, finalize, interleave, regularized_matrix, SolveReport, SolverConfig, SolverKind, INITIAL_VALUE};
use crate::assembly::GramSystem;
use crate::volcore::TransferFunction;
use crate::Result;

/// Solution of the regularized normal equations before clamping, interleaved RGBA.
pub fn unclamped_normal_solution(gs: &GramSystem, ridge: f64) -> Result<Vec<f64>> {
    let factor = regularized_matrix(gs, ridge).factor()?;
    let empty = gs.empty_bins();
    let channels = std::array::from_fn(|ch| {
        let rhs: Vec<f64> = gs.rhs[ch].iter().zip(&empty).map(|(&r, &e)| if e { 0.0 } else { r }).collect();
        factor.solve(&rhs)
    });
    let x = interleave(&channels);
    super::check_finite(&x, "normal_direct")?;
    Ok(x)
}

pub fn solve_normal_direct(gs: &GramSystem, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let raw = unclamped_normal_solution(gs, cfg.tikhonov)?;
    let (x, clamped) = finalize(&raw, &gs.empty_bins());
    let objective = gs.objective(&x);
    Ok(SolveReport {
        solver: SolverKind::NormalDirect.name().to_string(),
        solution: TransferFunction::from_linear(&x)?,
        iterations: 1,
        objective,
        residual_history: vec![gs.objective(&vec![INITIAL_VALUE; 4 * gs.n_t()]), objective],
        clamped,
        condition_estimate: Some(condition_estimate_with(gs, cfg.tikhonov)),
        converged: true,
        fell_back_from: None,
    })
}
